"""Receiver-side metrology: data-aided QAM demodulation with EVM, Welch
spectra, occupied bandwidth, and band power.

Spectra are reported in dB relative to full scale, where full scale is unit
mean-square amplitude; psd values are per-bin powers so that summing their
linear equivalents recovers the time-domain mean power (Parseval).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import signal as sp_signal

from .waveforms import QamConfig, Waveform, qam_constellation, rrc_taps, shape_symbols


class LockError(RuntimeError):
    """Raised when demodulator timing correlation falls below threshold."""


@dataclass(frozen=True, eq=False)
class EvmReport:
    """Error vector magnitude result.

    ``evm_rms_percent`` is the RMS of the per-symbol error magnitudes
    normalized by the RMS reference-constellation magnitude, in percent
    (data-aided, single complex-gain normalization).
    """

    evm_rms_percent: float
    per_symbol_evm: np.ndarray
    constellation_points: np.ndarray
    symbols_used: int
    order: int


@dataclass(frozen=True, eq=False)
class Spectrum:
    """Averaged-periodogram power spectrum.

    ``freqs`` are absolute RF frequencies (baseband offsets shifted by the
    waveform's carrier); ``psd_db`` is per-bin power in dB re full scale.
    """

    freqs: np.ndarray
    psd_db: np.ndarray
    resolution_bandwidth: float

    @property
    def bin_width(self) -> float:
        return float(self.freqs[1] - self.freqs[0])

    def linear(self) -> np.ndarray:
        return 10.0 ** (self.psd_db / 10.0)

    def total_power(self) -> float:
        return float(np.sum(self.linear()))


def welch_psd(
    w: Waveform, segment_len: int = 4096, overlap_fraction: float = 0.5
) -> Spectrum:
    """Hann-windowed averaged periodogram over the valid sample window.

    The window is power-normalized so the per-bin powers sum to the
    time-domain mean power.
    """
    x = w.valid_samples
    if segment_len > x.size:
        raise ValueError(
            f"segment_len {segment_len} longer than valid signal ({x.size})"
        )
    if segment_len & (segment_len - 1):
        raise ValueError(f"segment_len must be a power of two, got {segment_len}")
    if not 0.0 <= overlap_fraction < 1.0:
        raise ValueError("overlap_fraction must be in [0, 1)")
    fs = w.sample_rate
    hop = segment_len - int(segment_len * overlap_fraction)
    hop = max(hop, 1)
    n_segments = 1 + (x.size - segment_len) // hop
    window = sp_signal.get_window("hann", segment_len, fftbins=True)
    scale = 1.0 / (np.sum(window**2) * n_segments)
    acc = np.zeros(segment_len)
    for k in range(n_segments):
        seg = x[k * hop : k * hop + segment_len] * window
        acc += np.abs(np.fft.fft(seg)) ** 2
    pxx = np.fft.fftshift(acc * scale) / segment_len
    freqs = np.fft.fftshift(np.fft.fftfreq(segment_len, 1.0 / fs)) + w.center_freq
    enbw = fs * np.sum(window**2) / np.sum(window) ** 2
    floor = np.finfo(float).tiny
    return Spectrum(freqs, 10.0 * np.log10(np.maximum(pxx, floor)), float(enbw))


def occupied_bandwidth(s: Spectrum, fraction: float = 0.99) -> float:
    """Smallest symmetric band about the power centroid holding ``fraction``
    of the total power."""
    if not 0.0 < fraction < 1.0:
        raise ValueError("fraction must be in (0, 1)")
    p = s.linear()
    total = np.sum(p)
    centroid = float(np.sum(s.freqs * p) / total)
    dist = np.abs(s.freqs - centroid)
    order = np.argsort(dist, kind="stable")
    cum = np.cumsum(p[order])
    k = int(np.searchsorted(cum, fraction * total))
    k = min(k, order.size - 1)
    return float(2.0 * (dist[order[k]] + s.bin_width / 2.0))


def band_power(s: Spectrum, f_lo: float, f_hi: float) -> float:
    """Integrated power in [f_lo, f_hi], in dB re full scale."""
    if f_lo >= f_hi:
        raise ValueError(f"need f_lo < f_hi, got [{f_lo}, {f_hi}]")
    half_bin = s.bin_width / 2.0
    if f_lo < s.freqs[0] - half_bin or f_hi > s.freqs[-1] + half_bin:
        raise ValueError(
            f"band [{f_lo}, {f_hi}] outside spectrum span "
            f"[{s.freqs[0]}, {s.freqs[-1]}]"
        )
    mask = (s.freqs >= f_lo) & (s.freqs <= f_hi)
    power = float(np.sum(s.linear()[mask]))
    return 10.0 * np.log10(max(power, np.finfo(float).tiny))


def demodulate_qam(
    rf: Waveform, cfg: QamConfig, tx_symbols: np.ndarray
) -> EvmReport:
    """Matched-filter, align against the known symbol sequence, and compute
    EVM with a single data-aided complex-gain normalization.

    Edge symbols without full filter support (shaping plus matched filter)
    are excluded, as are symbols whose filter span touches samples outside
    the waveform's validity window.
    """
    tx_symbols = np.asarray(tx_symbols, dtype=np.complex128)
    sps = int(round(rf.sample_rate / cfg.symbol_rate))
    if abs(rf.sample_rate / cfg.symbol_rate - sps) > 1e-6:
        raise ValueError("waveform sample_rate is not a multiple of symbol_rate")
    span = min(cfg.filter_span, max(8, tx_symbols.size // 4))
    if (rf.valid_end - rf.valid_start) < 64 * sps:
        raise ValueError("waveform must contain at least 64 symbol durations")

    template = shape_symbols(tx_symbols, sps, cfg.rolloff, span)
    corr = sp_signal.correlate(rf.samples, template, mode="full", method="fft")
    lags = np.arange(-(template.size - 1), rf.n_samples)
    peak = int(np.argmax(np.abs(corr)))
    norm = np.linalg.norm(rf.samples) * np.linalg.norm(template)
    if norm == 0 or np.abs(corr[peak]) / norm < 0.02:
        raise LockError("timing lock failure: correlation peak below threshold")
    lag = int(lags[peak])

    taps = rrc_taps(sps, cfg.rolloff, span)
    filtered = sp_signal.fftconvolve(rf.samples, taps, mode="same")

    # symbol k sits at sample k*sps + lag; require full support of both
    # filters inside the validity window
    margin = span * sps  # half of (shaping + matched) total span
    k = np.arange(tx_symbols.size)
    positions = k * sps + lag
    usable = (
        (positions - margin >= rf.valid_start)
        & (positions + margin < rf.valid_end)
    )
    if np.count_nonzero(usable) < 64:
        raise LockError("timing lock failure: fewer than 64 usable symbols")
    rx_syms = filtered[positions[usable]]
    ref_syms = tx_symbols[usable]

    gain = np.vdot(ref_syms, rx_syms) / np.vdot(ref_syms, ref_syms)
    if gain == 0:
        raise LockError("timing lock failure: zero data-aided gain")
    normalized = rx_syms / gain
    constellation = qam_constellation(cfg.order)
    ref_rms = np.sqrt(np.mean(np.abs(constellation) ** 2))
    errors = np.abs(normalized - ref_syms) / ref_rms
    evm = 100.0 * float(np.sqrt(np.mean(errors**2)))
    return EvmReport(
        evm_rms_percent=evm,
        per_symbol_evm=100.0 * errors,
        constellation_points=normalized,
        symbols_used=int(rx_syms.size),
        order=cfg.order,
    )
