"""Photonic RF interference cancellation simulator.

Models the full physical layer of an interference-management bench --
RF mixing, intensity modulation, dual-wavelength optical combining,
photodetection -- and replaces manual knob tuning with an automated
cancellation solver, with QAM/EVM and spectrum metrology on the receive
side.
"""

__version__ = "0.1.0"

from .waveforms import (
    FmNoiseConfig,
    QamConfig,
    Waveform,
    apply_fractional_delay,
    calibrate_fm_deviation,
    generate_fm_noise,
    generate_qam_soi,
    mix_at_receiver,
    qam_constellation,
)
from .photonics import (
    MzmParams,
    OpticalPathParams,
    OpticalPowerSignal,
    PdParams,
    apply_optical_path,
    combine_and_detect,
    linearized_gain,
    mzm_modulate,
)
from .canceller import (
    InterferenceCanceller,
    TuneResult,
    UnrealizableWeightError,
    estimate_delay,
    solve_weights,
    tune,
    weights_to_settings,
)
from .chain import ChannelSettings
from .rxdsp import (
    EvmReport,
    LockError,
    Spectrum,
    band_power,
    demodulate_qam,
    occupied_bandwidth,
    welch_psd,
)
from .scenario import (
    Scenario,
    ScenarioError,
    load_preset,
    load_scenario,
    save_scenario,
    scenario_from_dict,
    scenario_to_dict,
)
from .harness import (
    RunReport,
    StageError,
    apply_axis,
    emit_outputs,
    read_report,
    run_simulation,
    run_sweep,
)

__all__ = [
    "FmNoiseConfig", "QamConfig", "Waveform", "apply_fractional_delay",
    "calibrate_fm_deviation", "generate_fm_noise", "generate_qam_soi",
    "mix_at_receiver", "qam_constellation",
    "MzmParams", "OpticalPathParams", "OpticalPowerSignal", "PdParams",
    "apply_optical_path", "combine_and_detect", "linearized_gain",
    "mzm_modulate",
    "InterferenceCanceller", "TuneResult", "UnrealizableWeightError",
    "estimate_delay", "solve_weights", "tune", "weights_to_settings",
    "ChannelSettings",
    "EvmReport", "LockError", "Spectrum", "band_power", "demodulate_qam",
    "occupied_bandwidth", "welch_psd",
    "Scenario", "ScenarioError", "load_preset", "load_scenario",
    "save_scenario", "scenario_from_dict", "scenario_to_dict",
    "RunReport", "StageError", "apply_axis", "emit_outputs", "read_report",
    "run_simulation", "run_sweep",
]
