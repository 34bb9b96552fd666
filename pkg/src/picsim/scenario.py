"""Scenario configuration: the full description of one bench experiment.

Scenarios are plain frozen dataclasses; the YAML layer maps onto the
dataclass fields one-to-one (units: Hz, seconds, volts, watts, dB, nm).
Loading resolves every default and calibrates the FM interferer deviation
when requested, so a loaded scenario is always fully explicit and
re-runnable bit-exactly from its echo.
"""

from __future__ import annotations

import warnings
from dataclasses import asdict, dataclass, replace
from importlib import resources
from pathlib import Path
from typing import Optional, Sequence

import yaml

from .photonics import MzmParams, OpticalPathParams, PdParams, LINEARIZED, PASSBAND
from .waveforms import (
    FmNoiseConfig,
    QamConfig,
    calibrate_fm_deviation,
    _resolve_sps,
)

PRESET_NAMES = ("paper_fig2", "multiuser_two_interferers", "modulation_sweep")


class ScenarioError(ValueError):
    """Scenario parse or validation failure; message names the field."""


@dataclass(frozen=True)
class SimConfig:
    sample_rate: float
    center_freq: float = 2.4e9
    fidelity: str = LINEARIZED
    passband_carrier: float = 20e6
    delay_error: float = 0.0  # added to applied reference delays at replay

    def __post_init__(self):
        if not self.sample_rate > 0:
            raise ScenarioError("sim.sample_rate: must be > 0")
        if self.fidelity not in (LINEARIZED, PASSBAND):
            raise ScenarioError(
                f"sim.fidelity: must be '{LINEARIZED}' or '{PASSBAND}', "
                f"got {self.fidelity!r}"
            )
        if self.fidelity == PASSBAND and not self.passband_carrier > 0:
            raise ScenarioError("sim.passband_carrier: must be > 0 in passband mode")


@dataclass(frozen=True)
class SoiConfig:
    qam: QamConfig = QamConfig()
    gain: float = 1.0
    seed: int = 101

    def __post_init__(self):
        if self.gain < 0:
            raise ScenarioError("soi.gain: must be >= 0")


@dataclass(frozen=True)
class InterfererConfig:
    fm: FmNoiseConfig = FmNoiseConfig()
    gain: float = 1.0
    delay: float = 0.0

    def __post_init__(self):
        if self.gain < 0:
            raise ScenarioError("interferer.gain: must be >= 0")
        if self.delay < 0:
            raise ScenarioError("interferer.delay: must be >= 0")


@dataclass(frozen=True)
class ReceiverConfig:
    modulator: MzmParams = MzmParams()
    wavelength_nm: float = 1544.0


@dataclass(frozen=True)
class ReferenceChannel:
    modulator: MzmParams = MzmParams(drive_scale=0.1)
    path: OpticalPathParams = OpticalPathParams()


@dataclass(frozen=True)
class Scenario:
    sim: SimConfig
    soi: SoiConfig = SoiConfig()
    interferers: tuple[InterfererConfig, ...] = ()
    receiver: ReceiverConfig = ReceiverConfig()
    reference_channels: tuple[ReferenceChannel, ...] = ()
    pd: PdParams = PdParams()
    name: str = "unnamed"

    def __post_init__(self):
        object.__setattr__(self, "interferers", tuple(self.interferers))
        object.__setattr__(self, "reference_channels", tuple(self.reference_channels))
        try:
            _resolve_sps(self.sim.sample_rate, self.soi.qam.symbol_rate)
        except ValueError as exc:
            raise ScenarioError(f"sim.sample_rate: {exc}") from exc
        if self.sim.sample_rate < 4 * self.soi.qam.symbol_rate:
            raise ScenarioError("sim.sample_rate: must be >= 4 * soi symbol_rate")
        for i, intf in enumerate(self.interferers):
            if self.sim.sample_rate < 4 * intf.fm.target_occupied_bandwidth:
                raise ScenarioError(
                    f"interferers[{i}].fm.target_occupied_bandwidth: needs "
                    "sample_rate >= 4x the occupied bandwidth"
                )
        wavelengths = [("receiver.wavelength_nm", self.receiver.wavelength_nm)]
        wavelengths += [
            (f"reference_channels[{i}].path.wavelength_nm", ch.path.wavelength_nm)
            for i, ch in enumerate(self.reference_channels)
        ]
        for i in range(len(wavelengths)):
            for j in range(i + 1, len(wavelengths)):
                if abs(wavelengths[i][1] - wavelengths[j][1]) < 0.5:
                    raise ScenarioError(
                        f"{wavelengths[j][0]}: collides with {wavelengths[i][0]} "
                        f"({wavelengths[j][1]} nm vs {wavelengths[i][1]} nm); "
                        "distinct wavelengths are required for incoherent combining"
                    )
        if len(self.reference_channels) < len(self.interferers):
            warnings.warn(
                f"scenario {self.name!r}: fewer reference channels "
                f"({len(self.reference_channels)}) than interferers "
                f"({len(self.interferers)}); cancellation will be partial",
                stacklevel=2,
            )

    @property
    def samples_per_symbol(self) -> int:
        return _resolve_sps(self.sim.sample_rate, self.soi.qam.symbol_rate)

    @property
    def num_samples(self) -> int:
        return self.soi.qam.num_symbols * self.samples_per_symbol

    @property
    def duration(self) -> float:
        return self.num_samples / self.sim.sample_rate


def _take(d: dict, known: Sequence[str], where: str) -> None:
    unknown = set(d) - set(known)
    if unknown:
        raise ScenarioError(f"{where}: unknown field(s) {sorted(unknown)}")


def _num(d: dict, key: str, where: str, default=None):
    if key not in d:
        if default is None:
            raise ScenarioError(f"{where}.{key}: required")
        return default
    try:
        return float(d[key])
    except (TypeError, ValueError) as exc:
        raise ScenarioError(f"{where}.{key}: not a number ({d[key]!r})") from exc


_calibration_cache: dict = {}


def _resolve_deviation(fm_dict: dict, sample_rate: float, where: str) -> float:
    value = fm_dict.get("freq_deviation", "auto")
    if isinstance(value, str) and value.lower() == "auto":
        cfg = FmNoiseConfig(
            modulating_noise_bandwidth=_num(
                fm_dict, "modulating_noise_bandwidth", where, 5e6
            ),
            freq_deviation=1.0,
            target_occupied_bandwidth=_num(
                fm_dict, "target_occupied_bandwidth", where, 40e6
            ),
            seed=int(fm_dict.get("seed", 0)),
        )
        key = (
            cfg.modulating_noise_bandwidth,
            cfg.target_occupied_bandwidth,
            cfg.seed,
            round(sample_rate, 6),
        )
        if key not in _calibration_cache:
            _calibration_cache[key] = calibrate_fm_deviation(cfg, sample_rate)
        return _calibration_cache[key]
    return _num(fm_dict, "freq_deviation", where)


def _mzm_from_dict(d: dict, where: str) -> MzmParams:
    _take(d, ["v_pi", "bias_voltage", "insertion_loss_db", "extinction_ratio_db",
              "input_power", "drive_scale"], where)
    defaults = MzmParams()
    try:
        return MzmParams(
            v_pi=_num(d, "v_pi", where, defaults.v_pi),
            bias_voltage=_num(d, "bias_voltage", where, defaults.bias_voltage),
            insertion_loss_db=_num(d, "insertion_loss_db", where,
                                   defaults.insertion_loss_db),
            extinction_ratio_db=_num(d, "extinction_ratio_db", where,
                                     defaults.extinction_ratio_db),
            input_power=_num(d, "input_power", where, defaults.input_power),
            drive_scale=_num(d, "drive_scale", where, defaults.drive_scale),
        )
    except ValueError as exc:
        raise ScenarioError(f"{where}: {exc}") from exc


def scenario_from_dict(data: dict, name: str = "unnamed") -> Scenario:
    """Build a fully-resolved scenario from a parsed configuration dict."""
    if not isinstance(data, dict):
        raise ScenarioError("scenario: top level must be a mapping")
    _take(data, ["name", "sim", "soi", "interferers", "receiver",
                 "reference_channels", "pd"], "scenario")
    name = data.get("name", name)

    soi_d = dict(data.get("soi", {}))
    _take(soi_d, ["order", "symbol_rate", "rolloff", "num_symbols",
                  "filter_span", "gain", "seed"], "soi")
    try:
        qam = QamConfig(
            order=int(soi_d.get("order", 64)),
            symbol_rate=_num(soi_d, "symbol_rate", "soi", QamConfig().symbol_rate),
            rolloff=_num(soi_d, "rolloff", "soi", 0.22),
            num_symbols=int(soi_d.get("num_symbols", 4096)),
            filter_span=int(soi_d.get("filter_span", 64)),
        )
    except ValueError as exc:
        raise ScenarioError(f"soi: {exc}") from exc
    soi = SoiConfig(qam=qam, gain=_num(soi_d, "gain", "soi", 1.0),
                    seed=int(soi_d.get("seed", 101)))

    sim_d = dict(data.get("sim", {}))
    _take(sim_d, ["sample_rate", "samples_per_symbol", "center_freq",
                  "fidelity", "passband_carrier", "delay_error"], "sim")
    if "sample_rate" in sim_d:
        sample_rate = _num(sim_d, "sample_rate", "sim")
    else:
        sps = int(sim_d.get("samples_per_symbol", 48))
        if sps < 4:
            raise ScenarioError("sim.samples_per_symbol: must be >= 4")
        sample_rate = sps * qam.symbol_rate
    sim = SimConfig(
        sample_rate=sample_rate,
        center_freq=_num(sim_d, "center_freq", "sim", 2.4e9),
        fidelity=str(sim_d.get("fidelity", LINEARIZED)),
        passband_carrier=_num(sim_d, "passband_carrier", "sim", 20e6),
        delay_error=_num(sim_d, "delay_error", "sim", 0.0),
    )

    interferers = []
    for i, raw in enumerate(data.get("interferers", []) or []):
        where = f"interferers[{i}]"
        d = dict(raw)
        _take(d, ["modulating_noise_bandwidth", "freq_deviation",
                  "target_occupied_bandwidth", "seed", "gain", "delay"], where)
        try:
            fm = FmNoiseConfig(
                modulating_noise_bandwidth=_num(
                    d, "modulating_noise_bandwidth", where, 5e6),
                freq_deviation=_resolve_deviation(d, sample_rate, where),
                target_occupied_bandwidth=_num(
                    d, "target_occupied_bandwidth", where, 40e6),
                seed=int(d.get("seed", 200 + i)),
            )
        except ValueError as exc:
            raise ScenarioError(f"{where}: {exc}") from exc
        interferers.append(
            InterfererConfig(fm=fm, gain=_num(d, "gain", where, 1.0),
                             delay=_num(d, "delay", where, 0.0))
        )

    rx_d = dict(data.get("receiver", {}))
    _take(rx_d, ["modulator", "wavelength_nm"], "receiver")
    receiver = ReceiverConfig(
        modulator=_mzm_from_dict(dict(rx_d.get("modulator", {})),
                                 "receiver.modulator"),
        wavelength_nm=_num(rx_d, "wavelength_nm", "receiver", 1544.0),
    )

    channels = []
    for i, raw in enumerate(data.get("reference_channels", []) or []):
        where = f"reference_channels[{i}]"
        d = dict(raw)
        _take(d, ["modulator", "path"], where)
        path_d = dict(d.get("path", {}))
        _take(path_d, ["wavelength_nm", "attenuation_db", "delay",
                       "excess_loss_db"], f"{where}.path")
        try:
            path = OpticalPathParams(
                wavelength_nm=_num(path_d, "wavelength_nm", where, 1560.0 + 4 * i),
                attenuation_db=_num(path_d, "attenuation_db", where, 0.0),
                delay=_num(path_d, "delay", where, 0.0),
                excess_loss_db=_num(path_d, "excess_loss_db", where, 0.0),
            )
        except ValueError as exc:
            raise ScenarioError(f"{where}.path: {exc}") from exc
        mod_defaults = ReferenceChannel().modulator
        mod_d = dict(d.get("modulator", {}))
        mod = _mzm_from_dict(mod_d, f"{where}.modulator")
        if "drive_scale" not in mod_d:
            mod = replace(mod, drive_scale=mod_defaults.drive_scale)
        channels.append(ReferenceChannel(modulator=mod, path=path))

    pd_d = dict(data.get("pd", {}))
    _take(pd_d, ["responsivity", "ac_coupled", "thermal_noise_density", "seed"], "pd")
    try:
        pd = PdParams(
            responsivity=_num(pd_d, "responsivity", "pd", 0.8),
            ac_coupled=bool(pd_d.get("ac_coupled", True)),
            thermal_noise_density=_num(pd_d, "thermal_noise_density", "pd", 0.0),
            seed=int(pd_d.get("seed", 0)),
        )
    except ValueError as exc:
        raise ScenarioError(f"pd: {exc}") from exc

    return Scenario(
        sim=sim, soi=soi, interferers=tuple(interferers), receiver=receiver,
        reference_channels=tuple(channels), pd=pd, name=str(name),
    )


def scenario_to_dict(sc: Scenario) -> dict:
    """Fully-resolved scenario echo; reloading it reproduces the scenario."""
    return {
        "name": sc.name,
        "sim": {
            "sample_rate": sc.sim.sample_rate,
            "center_freq": sc.sim.center_freq,
            "fidelity": sc.sim.fidelity,
            "passband_carrier": sc.sim.passband_carrier,
            "delay_error": sc.sim.delay_error,
        },
        "soi": {
            "order": sc.soi.qam.order,
            "symbol_rate": sc.soi.qam.symbol_rate,
            "rolloff": sc.soi.qam.rolloff,
            "num_symbols": sc.soi.qam.num_symbols,
            "filter_span": sc.soi.qam.filter_span,
            "gain": sc.soi.gain,
            "seed": sc.soi.seed,
        },
        "interferers": [
            {
                "modulating_noise_bandwidth": i.fm.modulating_noise_bandwidth,
                "freq_deviation": i.fm.freq_deviation,
                "target_occupied_bandwidth": i.fm.target_occupied_bandwidth,
                "seed": i.fm.seed,
                "gain": i.gain,
                "delay": i.delay,
            }
            for i in sc.interferers
        ],
        "receiver": {
            "wavelength_nm": sc.receiver.wavelength_nm,
            "modulator": asdict(sc.receiver.modulator),
        },
        "reference_channels": [
            {"modulator": asdict(ch.modulator), "path": asdict(ch.path)}
            for ch in sc.reference_channels
        ],
        "pd": asdict(sc.pd),
    }


def load_scenario(path) -> Scenario:
    """Load and resolve a scenario from a YAML file or bundled preset name."""
    p = Path(path)
    if not p.exists() and str(path) in PRESET_NAMES:
        return load_preset(str(path))
    if not p.exists():
        raise ScenarioError(
            f"scenario file not found: {path} "
            f"(bundled presets: {', '.join(PRESET_NAMES)})"
        )
    try:
        data = yaml.safe_load(p.read_text())
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        loc = f" (line {mark.line + 1}, column {mark.column + 1})" if mark else ""
        raise ScenarioError(f"{path}: YAML parse error{loc}: {exc}") from exc
    try:
        return scenario_from_dict(data, name=p.stem)
    except ScenarioError as exc:
        raise ScenarioError(f"{path}: {exc}") from exc


def load_preset(name: str) -> Scenario:
    if name not in PRESET_NAMES:
        raise ScenarioError(
            f"unknown preset {name!r}; bundled presets: {', '.join(PRESET_NAMES)}"
        )
    text = (resources.files("picsim") / "presets" / f"{name}.yaml").read_text()
    return scenario_from_dict(yaml.safe_load(text), name=name)


def save_scenario(sc: Scenario, path) -> None:
    Path(path).write_text(yaml.safe_dump(scenario_to_dict(sc), sort_keys=False))
