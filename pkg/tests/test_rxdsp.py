"""Receiver metrology: Welch spectra, occupied bandwidth, band power, EVM."""

from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import signal as sp_signal

from picsim import (
    FmNoiseConfig,
    LockError,
    QamConfig,
    Waveform,
    band_power,
    demodulate_qam,
    generate_fm_noise,
    generate_qam_soi,
    occupied_bandwidth,
    welch_psd,
)
from helpers import add_inband_noise, tone

FS = 48 * (5e6 / 1.22)
FC = 2.4e9


def white_noise(n, seed=0, power=1.0):
    rng = np.random.default_rng(seed)
    x = (rng.standard_normal(n) + 1j * rng.standard_normal(n)) * np.sqrt(power / 2)
    return Waveform(x, FS, FC)


class TestWelchPsd:
    def test_parseval_white_noise(self):
        wf = white_noise(1 << 17)
        spectrum = welch_psd(wf)
        assert spectrum.total_power() == pytest.approx(wf.mean_power(), rel=0.02)

    def test_matches_scipy_welch(self):
        # independent route: same estimator from scipy, density scaling
        wf = white_noise(1 << 15, seed=5)
        spectrum = welch_psd(wf, 4096, 0.5)
        freqs, pxx = sp_signal.welch(
            wf.samples, fs=FS, window="hann", nperseg=4096, noverlap=2048,
            detrend=False, return_onesided=False, scaling="density",
        )
        pxx = np.fft.fftshift(pxx) * (FS / 4096)  # per-bin power
        assert np.allclose(spectrum.linear(), pxx, rtol=1e-9, atol=1e-300)

    def test_pure_tone_dominant_bin(self):
        f0 = FS / 4096 * 250  # exactly on a bin
        wf = tone(FS, f0, 1 << 15)
        spectrum = welch_psd(wf, 4096)
        peak = spectrum.freqs[np.argmax(spectrum.psd_db)]
        assert peak == pytest.approx(FC + f0, abs=spectrum.bin_width / 2)

    def test_tone_occupied_bandwidth_tight(self):
        f0 = FS / 4096 * 250
        wf = tone(FS, f0, 1 << 15)
        spectrum = welch_psd(wf, 4096)
        obw = occupied_bandwidth(spectrum, 0.99)
        assert obw <= 2 * spectrum.resolution_bandwidth * (1 + 1e-9)

    def test_fm_noise_occupied_bandwidth(self, paper_fig2):
        cfg = paper_fig2.interferers[0].fm
        wf = generate_fm_noise(cfg, 196608, FS, FC)
        spectrum = welch_psd(wf)
        assert occupied_bandwidth(spectrum, 0.99) == pytest.approx(40e6, rel=0.10)

    def test_rejects_bad_segments(self):
        wf = white_noise(4096)
        with pytest.raises(ValueError, match="longer"):
            welch_psd(wf, 8192)
        with pytest.raises(ValueError, match="power of two"):
            welch_psd(wf, 1000)
        with pytest.raises(ValueError, match="overlap"):
            welch_psd(wf, 1024, 1.0)


class TestOccupiedBandwidth:
    @given(fractions=st.lists(st.floats(0.05, 0.999), min_size=2, max_size=6))
    @settings(max_examples=20, deadline=None)
    def test_monotone_in_fraction(self, fractions):
        wf = white_noise(1 << 14, seed=9)
        spectrum = welch_psd(wf, 1024)
        values = [occupied_bandwidth(spectrum, f) for f in sorted(fractions)]
        assert all(b >= a for a, b in zip(values, values[1:]))

    def test_rejects_bad_fraction(self):
        spectrum = welch_psd(white_noise(4096), 1024)
        with pytest.raises(ValueError, match="fraction"):
            occupied_bandwidth(spectrum, 1.0)


class TestBandPower:
    def test_full_span_equals_total_power(self):
        wf = white_noise(1 << 16, seed=3)
        spectrum = welch_psd(wf)
        full = band_power(spectrum, spectrum.freqs[0], spectrum.freqs[-1])
        assert 10 ** (full / 10) == pytest.approx(wf.mean_power(), rel=0.02)

    def test_edge_band_of_narrowband_signal(self):
        wf, _ = generate_qam_soi(QamConfig(num_symbols=2048), 1, FS, FC)
        spectrum = welch_psd(wf)
        edge = band_power(spectrum, spectrum.freqs[-200], spectrum.freqs[-1])
        assert edge <= -60.0

    def test_rejects_bad_band(self):
        spectrum = welch_psd(white_noise(4096), 1024)
        with pytest.raises(ValueError, match="f_lo < f_hi"):
            band_power(spectrum, 1e6 + FC, FC)
        with pytest.raises(ValueError, match="outside"):
            band_power(spectrum, FC, FC + FS)


class TestDemodulateQam:
    def test_loopback_evm_below_point1_percent(self):
        cfg = QamConfig(order=64, num_symbols=4096)
        wf, syms = generate_qam_soi(cfg, 11, FS, FC)
        report = demodulate_qam(wf, cfg, syms)
        assert report.evm_rms_percent < 0.1
        assert report.order == 64
        assert report.symbols_used >= 64

    def test_evm_at_20db_inband_snr(self):
        # data-aided EVM ~ 100/sqrt(SNR) with SNR counted in the symbol-rate
        # band; counting over the occupied band scales it by
        # sqrt(1/(1+rolloff)), so 20 dB sits near 9.05%
        cfg = QamConfig(order=64, num_symbols=4096)
        wf, syms = generate_qam_soi(cfg, 11, FS, FC)
        values = []
        for seed in range(5):
            noisy = add_inband_noise(wf, 20.0, cfg.occupied_bandwidth, seed)
            values.append(demodulate_qam(noisy, cfg, syms).evm_rms_percent)
        assert np.mean(values) == pytest.approx(10.0, abs=1.0)

    def test_evm_gain_invariance(self):
        cfg = QamConfig(order=16, num_symbols=1024)
        wf, syms = generate_qam_soi(cfg, 4, FS, FC)
        base = demodulate_qam(wf, cfg, syms).evm_rms_percent
        scaled = demodulate_qam(0.31 * np.exp(1.1j) * wf, cfg, syms).evm_rms_percent
        assert scaled == pytest.approx(base, rel=1e-6, abs=1e-9)

    def test_evm_monotone_in_noise(self):
        # sign test over 10 seeds: more independent noise, higher EVM
        cfg = QamConfig(order=64, num_symbols=1024)
        wf, syms = generate_qam_soi(cfg, 2, FS, FC)
        wins = 0
        for seed in range(10):
            low = demodulate_qam(
                add_inband_noise(wf, 25.0, cfg.occupied_bandwidth, seed),
                cfg, syms).evm_rms_percent
            high = demodulate_qam(
                add_inband_noise(wf, 15.0, cfg.occupied_bandwidth, seed),
                cfg, syms).evm_rms_percent
            wins += int(high > low)
        # p = 2^-10 under the null of no effect
        assert wins == 10

    def test_lock_failure_on_unrelated_signal(self):
        cfg = QamConfig(order=64, num_symbols=1024)
        _, syms = generate_qam_soi(cfg, 4, FS, FC)
        noise = white_noise(1024 * 48, seed=1)
        with pytest.raises(LockError):
            demodulate_qam(noise, cfg, syms)

    def test_requires_64_symbol_durations(self):
        cfg = QamConfig(order=64, num_symbols=1024)
        wf, syms = generate_qam_soi(cfg, 4, FS, FC)
        short = Waveform(wf.samples[: 40 * 48], FS, FC)
        with pytest.raises(ValueError, match="64 symbol"):
            demodulate_qam(short, cfg, syms)

    def test_per_symbol_magnitudes_consistent(self):
        cfg = QamConfig(order=64, num_symbols=1024)
        wf, syms = generate_qam_soi(cfg, 4, FS, FC)
        noisy = add_inband_noise(wf, 20.0, cfg.occupied_bandwidth, 0)
        report = demodulate_qam(noisy, cfg, syms)
        rms = float(np.sqrt(np.mean(report.per_symbol_evm**2)))
        assert rms == pytest.approx(report.evm_rms_percent, rel=1e-12)
        assert report.constellation_points.size == report.symbols_used
