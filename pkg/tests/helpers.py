"""Shared test utilities: independent oracles the library code never uses.

* brute-force weight grid search (direct objective evaluation)
* FFT phase-ramp delay insertion (independent of the windowed-sinc path)
* analytic raised-cosine spectrum
* calibrated in-band noise injection
"""

from __future__ import annotations

import numpy as np

from picsim import Waveform


def tone(fs: float, f0: float, n: int, center_freq: float = 2.4e9) -> Waveform:
    t = np.arange(n) / fs
    return Waveform(np.exp(2j * np.pi * f0 * t), fs, center_freq)


def fft_phase_delay(x: np.ndarray, delay_samples: float) -> np.ndarray:
    """Delay via a frequency-domain phase ramp (circular); independent of
    the library's windowed-sinc interpolator."""
    n = x.size
    freqs = np.fft.fftfreq(n)
    return np.fft.ifft(np.fft.fft(x) * np.exp(-2j * np.pi * freqs * delay_samples))


def rc_spectrum(f: np.ndarray, symbol_rate: float, rolloff: float) -> np.ndarray:
    """Analytic raised-cosine power spectrum (unit passband)."""
    af = np.abs(f)
    f1 = (1 - rolloff) * symbol_rate / 2
    f2 = (1 + rolloff) * symbol_rate / 2
    out = np.zeros_like(af)
    out[af <= f1] = 1.0
    roll = (af > f1) & (af < f2)
    out[roll] = np.cos(np.pi * (af[roll] - f1) / (2 * rolloff * symbol_rate)) ** 2
    return out


def analytic_rc_obw(symbol_rate: float, rolloff: float, fraction: float = 0.99) -> float:
    """Occupied bandwidth of the analytic raised-cosine spectrum."""
    f = np.linspace(0.0, (1 + rolloff) * symbol_rate / 2, 400001)
    s = rc_spectrum(f, symbol_rate, rolloff)
    cum = np.cumsum(s)
    cum /= cum[-1]
    return 2.0 * float(f[np.searchsorted(cum, fraction)])


def add_inband_noise(
    wf: Waveform, snr_db: float, bandwidth: float, seed: int
) -> Waveform:
    """Add complex white noise such that the signal-to-noise ratio counted
    inside ``bandwidth`` equals ``snr_db``."""
    rng = np.random.default_rng(seed)
    inband_noise_power = wf.mean_power() / 10.0 ** (snr_db / 10.0)
    density = inband_noise_power / bandwidth
    sigma = np.sqrt(density * wf.sample_rate / 2.0)
    noise = sigma * (
        rng.standard_normal(wf.n_samples) + 1j * rng.standard_normal(wf.n_samples)
    )
    return Waveform(
        wf.samples + noise, wf.sample_rate, wf.center_freq,
        wf.valid_start, wf.valid_end,
    )


def _residual_surface(gram, cross, power_y, w):
    """Objective mean |y - A w|^2 evaluated directly from data moments."""
    return (
        power_y
        - 2.0 * np.real(np.conj(w) @ cross)
        + np.real(np.conj(w) @ gram @ w)
    )


def brute_force_weights(
    y: np.ndarray,
    a: np.ndarray,
    mag_step: float = 1e-3,
    phase_step: float = 1e-3,
    rounds: int = 6,
) -> np.ndarray:
    """Grid search for the weights minimizing mean |y - A w|^2.

    Evaluates the objective directly on a magnitude/phase grid (coordinate
    sweeps for multiple channels); never touches the solver's normal
    equations.
    """
    if a.ndim == 1:
        a = a[:, None]
    n, k = a.shape
    gram = np.conj(a.T) @ a / n
    cross = np.conj(a.T) @ y / n
    power_y = float(np.mean(np.abs(y) ** 2))

    mag_caps = [
        np.sqrt(power_y / max(float(gram[j, j].real), 1e-300)) for j in range(k)
    ]
    mags = [np.arange(0.0, cap + mag_step, mag_step) for cap in mag_caps]
    phases = np.arange(-np.pi, np.pi, phase_step)

    w = np.zeros(k, dtype=complex)
    for _ in range(rounds):
        moved = False
        for j in range(k):
            # residual as a function of w_j with the others held fixed:
            # |y - sum_{i!=j} w_i a_i - w_j a_j|^2
            others = w.copy()
            others[j] = 0.0
            cross_j = cross[j] - gram[j] @ others
            gjj = float(gram[j, j].real)
            grid_m, grid_p = np.meshgrid(mags[j], phases, indexing="ij")
            cand = grid_m * np.exp(1j * grid_p)
            obj = (
                -2.0 * np.real(np.conj(cand) * cross_j)
                + (grid_m**2) * gjj
            )
            best = np.unravel_index(np.argmin(obj), obj.shape)
            new_wj = cand[best]
            if new_wj != w[j]:
                moved = True
            w[j] = new_wj
        if not moved:
            break
    return w
