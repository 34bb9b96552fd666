"""Optical chain models: Mach-Zehnder intensity modulators, attenuator/delay
free-space paths, and square-law photodetection with incoherent summing of
distinct wavelengths.

Two fidelity modes are supported end to end:

* ``linearized`` (default): the RF band of the modulated optical power is
  carried directly at complex baseband as ``slope(V_b) * v(t)`` about the
  bias point, with the DC power tracked separately.  The RF carrier is a
  pure parameter; optical true-time delay rotates the envelope by the
  carrier phase.
* ``passband``: the real drive is reconstructed on a scaled carrier and
  pushed through the full raised-cosine transfer, so harmonic behaviour is
  observable.  Detection downconverts back to complex baseband.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Optional, Sequence

import numpy as np
from scipy import signal as sp_signal

from .waveforms import Waveform, _fractional_delay_core, measure_occupied_bandwidth

LINEARIZED = "linearized"
PASSBAND = "passband"

DEFAULT_PASSBAND_CARRIER = 20e6

# wavelengths closer than this are treated as colliding (beat note would
# land inside the photodiode band, which this model does not represent)
_WAVELENGTH_COLLISION_NM = 0.5


@dataclass(frozen=True)
class MzmParams:
    """Mach-Zehnder intensity modulator device model.

    ``drive_scale`` maps dimensionless waveform amplitude to drive volts.
    Defaults are typical commercial-device values; quadrature bias.
    """

    v_pi: float = 5.0
    bias_voltage: float = 2.5
    insertion_loss_db: float = 4.0
    extinction_ratio_db: float = 30.0
    input_power: float = 0.010
    drive_scale: float = 0.05

    def __post_init__(self):
        if not self.v_pi > 0:
            raise ValueError("v_pi must be > 0")
        if not self.input_power > 0:
            raise ValueError("input_power must be > 0")
        if self.insertion_loss_db < 0:
            raise ValueError("insertion_loss_db must be >= 0")
        if not self.extinction_ratio_db > 0:
            raise ValueError("extinction_ratio_db must be > 0")
        if not self.drive_scale > 0:
            raise ValueError("drive_scale must be > 0")

    @property
    def t_max(self) -> float:
        return 10.0 ** (-self.insertion_loss_db / 10.0)

    @property
    def epsilon(self) -> float:
        """Transmission floor fraction from finite extinction."""
        return 10.0 ** (-self.extinction_ratio_db / 10.0)

    @property
    def t_floor(self) -> float:
        return self.t_max * self.epsilon


@dataclass(frozen=True)
class OpticalPathParams:
    """Attenuator + tunable delay + fixed excess loss of one optical channel."""

    wavelength_nm: float = 1560.0
    attenuation_db: float = 0.0
    delay: float = 0.0
    excess_loss_db: float = 0.0

    def __post_init__(self):
        if self.attenuation_db < 0:
            raise ValueError("attenuation_db must be >= 0")
        if self.delay < 0:
            raise ValueError("delay must be >= 0")
        if self.excess_loss_db < 0:
            raise ValueError("excess_loss_db must be >= 0")

    @property
    def linear_gain(self) -> float:
        return 10.0 ** (-(self.attenuation_db + self.excess_loss_db) / 10.0)


@dataclass(frozen=True)
class PdParams:
    """Photodiode model: responsivity, AC coupling, optional thermal noise."""

    responsivity: float = 0.8
    ac_coupled: bool = True
    thermal_noise_density: float = 0.0  # A/sqrt(Hz); 0 = noiseless
    seed: int = 0

    def __post_init__(self):
        if not self.responsivity > 0:
            raise ValueError("responsivity must be > 0")
        if self.thermal_noise_density < 0:
            raise ValueError("thermal_noise_density must be >= 0")


@dataclass(frozen=True, eq=False)
class OpticalPowerSignal:
    """Instantaneous optical power on one wavelength.

    In ``passband`` mode ``power`` holds nonnegative watts on the sample
    grid.  In ``linearized`` mode it holds the complex RF power envelope
    about the bias point and ``dc_power`` the constant term.

    ``carrier_freq`` is the carrier the RF content is referenced to for
    delay-phase purposes (the true RF carrier in linearized mode, the
    scaled carrier in passband mode); ``center_freq`` tags the RF carrier
    of the driving waveform for reconstruction at detection.
    """

    power: np.ndarray
    sample_rate: float
    wavelength_nm: float
    mode: str
    center_freq: float
    carrier_freq: float
    dc_power: float = 0.0
    valid_start: int = 0
    valid_end: Optional[int] = None

    def __post_init__(self):
        power = np.asarray(self.power)
        if power.ndim != 1 or power.size == 0:
            raise ValueError("power must be a nonempty 1-D sequence")
        if self.mode not in (LINEARIZED, PASSBAND):
            raise ValueError(f"mode must be '{LINEARIZED}' or '{PASSBAND}'")
        if self.mode == PASSBAND:
            power = power.astype(float, copy=True)
        else:
            power = power.astype(np.complex128, copy=True)
            if self.dc_power < 0:
                raise ValueError("dc_power must be >= 0")
        power.flags.writeable = False
        object.__setattr__(self, "power", power)
        end = self.valid_end if self.valid_end is not None else power.size
        if not 0 <= self.valid_start < end <= power.size:
            raise ValueError("invalid validity window")
        object.__setattr__(self, "valid_end", int(end))
        if self.mode == PASSBAND and np.min(power[self.valid_start : end]) < -1e-12:
            raise ValueError("passband optical power must be nonnegative")

    @property
    def n_samples(self) -> int:
        return self.power.size


def linearized_gain(params: MzmParams) -> float:
    """Small-signal slope of optical power vs drive voltage at the bias
    point, in watts per volt."""
    return (
        -np.pi
        * params.input_power
        * params.t_max
        * (1.0 - params.epsilon)
        / (2.0 * params.v_pi)
        * np.sin(np.pi * params.bias_voltage / params.v_pi)
    )


def _dc_power(params: MzmParams) -> float:
    cos_term = np.cos(np.pi * params.bias_voltage / params.v_pi)
    return params.input_power * params.t_max * (
        (1.0 - params.epsilon) * 0.5 * (1.0 + cos_term) + params.epsilon
    )


def mzm_transfer(params: MzmParams, drive_volts: np.ndarray) -> np.ndarray:
    """Optical power out for a real drive, raised-cosine transfer."""
    v = np.asarray(drive_volts, dtype=float)
    core = 0.5 * (1.0 + np.cos(np.pi * (v + params.bias_voltage) / params.v_pi))
    return params.input_power * params.t_max * (
        (1.0 - params.epsilon) * core + params.epsilon
    )


def mzm_modulate(
    rf: Waveform,
    params: MzmParams,
    mode: str = LINEARIZED,
    *,
    wavelength_nm: float = 1544.0,
    passband_carrier: float = DEFAULT_PASSBAND_CARRIER,
) -> OpticalPowerSignal:
    """Drive the intensity modulator with an RF waveform.

    In linearized mode the drive peak must stay within +/-Vpi or the
    small-signal model is rejected.  In passband mode the real drive is
    reconstructed on ``passband_carrier`` and the sample rate must cover
    the reconstructed signal with margin.
    """
    if mode == LINEARIZED:
        env = params.drive_scale * rf.samples
        peak = float(np.max(np.abs(env[rf.valid_start : rf.valid_end])))
        if peak > params.v_pi:
            raise ValueError(
                f"linearized mode invalid: peak drive {peak:.3g} V exceeds "
                f"Vpi = {params.v_pi:.3g} V; reduce drive_scale or use "
                "passband mode"
            )
        return OpticalPowerSignal(
            power=linearized_gain(params) * env,
            sample_rate=rf.sample_rate,
            wavelength_nm=wavelength_nm,
            mode=LINEARIZED,
            center_freq=rf.center_freq,
            carrier_freq=rf.center_freq,
            dc_power=_dc_power(params),
            valid_start=rf.valid_start,
            valid_end=rf.valid_end,
        )
    if mode == PASSBAND:
        obw = measure_occupied_bandwidth(rf.samples, rf.sample_rate)
        needed = 2.5 * (passband_carrier + obw / 2.0)
        if rf.sample_rate < needed:
            raise ValueError(
                f"passband mode needs sample_rate >= {needed:.3g} Hz for a "
                f"{passband_carrier:.3g} Hz carrier and {obw:.3g} Hz signal "
                f"(got {rf.sample_rate:.3g} Hz)"
            )
        n = np.arange(rf.n_samples)
        carrier = np.exp(2j * np.pi * passband_carrier * n / rf.sample_rate)
        v = params.drive_scale * np.real(rf.samples * carrier)
        return OpticalPowerSignal(
            power=mzm_transfer(params, v),
            sample_rate=rf.sample_rate,
            wavelength_nm=wavelength_nm,
            mode=PASSBAND,
            center_freq=rf.center_freq,
            carrier_freq=passband_carrier,
            valid_start=rf.valid_start,
            valid_end=rf.valid_end,
        )
    raise ValueError(f"unknown fidelity mode {mode!r}")


def apply_optical_path(
    sig: OpticalPowerSignal, path: OpticalPathParams
) -> OpticalPowerSignal:
    """Attenuate and delay one optical channel; wavelength is preserved.

    In linearized mode the true-time delay both shifts the envelope and
    rotates it by the carrier phase ``exp(-j*2*pi*carrier*delay)``; in
    passband mode the carrier phase is intrinsic to the delayed samples.
    """
    gain = path.linear_gain
    if path.delay == 0.0:
        scaled = gain * sig.power
        return replace(sig, power=scaled, dc_power=gain * sig.dc_power)
    d_samples = path.delay * sig.sample_rate
    if path.delay >= sig.n_samples / sig.sample_rate / 4:
        raise ValueError("path delay must be < buffer duration / 4")
    delayed, shift, margin = _fractional_delay_core(sig.power, d_samples)
    v0 = max(0, sig.valid_start + shift + margin)
    v1 = min(sig.n_samples, sig.valid_end + shift - margin)
    if v1 <= v0:
        raise ValueError("path delay leaves no valid samples")
    out = gain * delayed
    if sig.mode == LINEARIZED:
        out = out * np.exp(-2j * np.pi * sig.carrier_freq * path.delay)
    return replace(
        sig,
        power=out,
        dc_power=gain * sig.dc_power,
        valid_start=v0,
        valid_end=v1,
    )


def _check_combinable(signals: Sequence[OpticalPowerSignal]) -> None:
    if len(signals) == 0:
        raise ValueError("need at least one optical signal")
    first = signals[0]
    for s in signals[1:]:
        if s.n_samples != first.n_samples or s.sample_rate != first.sample_rate:
            raise ValueError("optical signals must share one sample grid")
        if s.mode != first.mode:
            raise ValueError("cannot combine linearized and passband signals")
        if s.center_freq != first.center_freq or s.carrier_freq != first.carrier_freq:
            raise ValueError("optical signals must share the RF carrier reference")
    wavelengths = [s.wavelength_nm for s in signals]
    for i in range(len(wavelengths)):
        for j in range(i + 1, len(wavelengths)):
            if abs(wavelengths[i] - wavelengths[j]) < _WAVELENGTH_COLLISION_NM:
                raise ValueError(
                    f"wavelength collision: {wavelengths[i]} nm vs "
                    f"{wavelengths[j]} nm; coherent beating is not modeled, "
                    "set the channel lasers apart"
                )


def combine_and_detect(
    signals: Sequence[OpticalPowerSignal], pd: PdParams
) -> Waveform:
    """Sum the optical powers (incoherent combining) and photodetect.

    Returns the photocurrent as a complex-baseband waveform referenced to
    the RF carrier of the driving signals.  With AC coupling the DC
    photocurrent is removed; in linearized mode the DC term falls outside
    the represented RF band either way.
    """
    signals = list(signals)
    _check_combinable(signals)
    first = signals[0]
    fs = first.sample_rate
    v0 = max(s.valid_start for s in signals)
    v1 = min(s.valid_end for s in signals)
    if v1 <= v0:
        raise ValueError("combined signals have no common valid window")

    if first.mode == LINEARIZED:
        current = pd.responsivity * np.sum([s.power for s in signals], axis=0)
        if pd.thermal_noise_density > 0:
            rng = np.random.default_rng(pd.seed)
            sigma = pd.thermal_noise_density * np.sqrt(fs / 2.0)
            current = current + sigma * (
                rng.standard_normal(current.size)
                + 1j * rng.standard_normal(current.size)
            )
        return Waveform(current, fs, first.center_freq, v0, v1)

    # passband: detect, AC-couple, then downconvert from the scaled carrier
    f_p = first.carrier_freq
    if f_p <= 0:
        raise ValueError("passband detection requires a positive carrier")
    current = pd.responsivity * np.sum([s.power for s in signals], axis=0)
    if pd.thermal_noise_density > 0:
        rng = np.random.default_rng(pd.seed)
        current = current + pd.thermal_noise_density * np.sqrt(fs / 2.0) * (
            rng.standard_normal(current.size)
        )
    if pd.ac_coupled:
        current = current - np.mean(current[v0:v1])
    n = np.arange(current.size)
    analytic = current * np.exp(-2j * np.pi * f_p * n / fs)
    n_taps = 513
    lpf = sp_signal.firwin(n_taps, 0.95 * f_p, fs=fs)
    env = 2.0 * sp_signal.fftconvolve(analytic, lpf, mode="same")
    margin = n_taps // 2
    v0 = max(v0, 0) + margin
    v1 = min(v1, current.size) - margin
    if v1 <= v0:
        raise ValueError("downconversion filter leaves no valid samples")
    return Waveform(env, fs, first.center_freq, v0, v1)
