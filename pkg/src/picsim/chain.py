"""Signal-chain realization of a scenario: sources, RF mixing, the optical
branches, and photodetection with a given set of reference-channel settings.

Shared by the cancellation tuner (which replays the chain while searching
for settings) and the run harness.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Optional, Sequence

import numpy as np

from . import photonics as ph
from .scenario import Scenario
from .waveforms import Waveform, generate_fm_noise, generate_qam_soi, mix_at_receiver


@dataclass(frozen=True)
class ChannelSettings:
    """Device settings realizing one reference-channel weight."""

    bias_voltage: float
    attenuation_db: float
    delay: float


@dataclass(frozen=True, eq=False)
class Realization:
    """Deterministic source signals of one scenario."""

    soi: Waveform
    tx_symbols: np.ndarray
    interferers: tuple[Waveform, ...]
    mixed: Waveform
    mixed_int_only: Optional[Waveform]


def effective_carrier(sc: Scenario) -> float:
    """Carrier frequency that optical true-time delay rotates against."""
    if sc.sim.fidelity == ph.PASSBAND:
        return sc.sim.passband_carrier
    return sc.sim.center_freq


def realize(sc: Scenario) -> Realization:
    """Generate all transmitted signals and the received RF mixtures."""
    fs = sc.sim.sample_rate
    fc = sc.sim.center_freq
    soi, tx_symbols = generate_qam_soi(sc.soi.qam, sc.soi.seed, fs, fc)
    interferers = tuple(
        generate_fm_noise(i.fm, soi.n_samples, fs, fc) for i in sc.interferers
    )
    mixed = sc.soi.gain * soi
    mixed_int_only = None
    for intf_cfg, intf in zip(sc.interferers, interferers):
        mixed = mix_at_receiver(mixed, intf, 1.0, intf_cfg.gain, intf_cfg.delay)
        if mixed_int_only is None:
            mixed_int_only = mix_at_receiver(
                0.0 * soi, intf, 1.0, intf_cfg.gain, intf_cfg.delay
            )
        else:
            mixed_int_only = mix_at_receiver(
                mixed_int_only, intf, 1.0, intf_cfg.gain, intf_cfg.delay
            )
    return Realization(soi, tx_symbols, interferers, mixed, mixed_int_only)


def detect(
    sc: Scenario,
    rz: Realization,
    settings: Optional[Sequence[Optional[ChannelSettings]]] = None,
    *,
    include_soi: bool = True,
) -> Waveform:
    """Run the optical chain and return the photodetected waveform.

    ``settings`` holds per-reference-channel device settings; ``None``
    (the whole list or one entry) mutes the channel, which realizes the
    zero-weight pre-cancellation baseline.
    """
    mode = sc.sim.fidelity
    if include_soi:
        rf_in = rz.mixed
    elif rz.mixed_int_only is None:
        rf_in = 0.0 * rz.soi
    else:
        rf_in = rz.mixed_int_only
    branches = [
        ph.mzm_modulate(
            rf_in,
            sc.receiver.modulator,
            mode,
            wavelength_nm=sc.receiver.wavelength_nm,
            passband_carrier=sc.sim.passband_carrier,
        )
    ]
    if settings is not None:
        for k, (channel, st) in enumerate(zip(sc.reference_channels, settings)):
            if st is None:
                continue
            if k >= len(rz.interferers):
                continue
            modulator = replace(channel.modulator, bias_voltage=st.bias_voltage)
            optical = ph.mzm_modulate(
                rz.interferers[k],
                modulator,
                mode,
                wavelength_nm=channel.path.wavelength_nm,
                passband_carrier=sc.sim.passband_carrier,
            )
            path = replace(
                channel.path,
                attenuation_db=st.attenuation_db,
                delay=st.delay + sc.sim.delay_error,
            )
            branches.append(ph.apply_optical_path(optical, path))
    return ph.combine_and_detect(branches, sc.pd)
