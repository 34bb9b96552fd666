"""Cancellation solver: delay estimation, weight solving, settings mapping,
the end-to-end tuner, and the estimator wrapper."""

import warnings
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from picsim import (
    FmNoiseConfig,
    InterferenceCanceller,
    MzmParams,
    OpticalPathParams,
    PdParams,
    QamConfig,
    UnrealizableWeightError,
    Waveform,
    apply_fractional_delay,
    apply_optical_path,
    combine_and_detect,
    estimate_delay,
    generate_fm_noise,
    generate_qam_soi,
    mzm_modulate,
    solve_weights,
    tune,
    weights_to_settings,
)
from picsim import chain
from picsim.canceller import channel_max_weight
from helpers import add_inband_noise, brute_force_weights, fft_phase_delay

FS = 48 * (5e6 / 1.22)
FC = 2.4e9


def fm(seed, n=1 << 15, deviation=7.5e6):
    return generate_fm_noise(FmNoiseConfig(freq_deviation=deviation, seed=seed),
                             n, FS, FC)


def qam(seed, num_symbols=1024):
    wf, _ = generate_qam_soi(QamConfig(num_symbols=num_symbols), seed, FS, FC)
    return wf


class TestEstimateDelay:
    def test_self_delay_zero(self):
        ref = fm(1)
        assert estimate_delay(ref, ref, 1e-7) == 0.0

    def test_known_delay_within_tenth_sample(self):
        # ground truth inserted with an independent FFT phase-ramp delay
        ref = fm(2)
        true_samples = 7.3
        received = Waveform(fft_phase_delay(ref.samples, true_samples), FS, FC)
        estimate = estimate_delay(received, ref, 1e-6)
        assert estimate is not None
        assert abs(estimate * FS - true_samples) <= 0.1

    def test_with_20db_inband_noise(self):
        ref = fm(3, n=1 << 16)
        true_samples = 7.3
        received = Waveform(fft_phase_delay(ref.samples, true_samples), FS, FC)
        noisy = add_inband_noise(received, 20.0, 40e6, seed=5)
        estimate = estimate_delay(noisy, ref, 1e-6)
        assert estimate is not None
        assert abs(estimate * FS - true_samples) <= 0.1

    def test_unrelated_signal_no_lock(self):
        assert estimate_delay(qam(4), fm(5, n=1024 * 48), 1e-6) is None

    def test_window_limit(self):
        ref = fm(1, n=4096)
        with pytest.raises(ValueError, match="search_window"):
            estimate_delay(ref, ref, ref.duration)


class TestSolveWeights:
    def test_identity(self):
        ref = fm(7)
        w = solve_weights(ref, [ref], [0.0])
        assert abs(w[0] - 1.0) < 1e-9

    def test_constructed_inverted_half(self):
        soi = qam(8)
        ref = fm(9, n=soi.n_samples)
        received = soi + (0.5 * np.exp(1j * np.pi)) * ref
        w = solve_weights(received, [ref], [0.0])
        assert abs(w[0] - (-0.5)) <= 0.02 * 0.5

    def test_multiuser_ground_truth(self):
        soi = qam(10, num_symbols=4096)
        refs = [fm(11, n=soi.n_samples), fm(12, n=soi.n_samples, deviation=6e6)]
        truth = [0.8 * np.exp(0.4j), 0.5 * np.exp(-2.1j)]
        delays = [25e-9, 37e-9]
        received = soi
        for w0, d, ref in zip(truth, delays, refs):
            received = received + w0 * apply_fractional_delay(ref, d)
        solved = solve_weights(received, refs, delays)
        for got, expect in zip(solved, truth):
            assert abs(got - expect) <= 0.02 * abs(expect)
        # combined residual after subtracting the solved model
        aligned = [apply_fractional_delay(r, d) for r, d in zip(refs, delays)]
        v0 = max(a.valid_start for a in aligned)
        v1 = min(a.valid_end for a in aligned)
        model = sum(w * a.samples[v0:v1] for w, a in zip(solved, aligned))
        interference = sum(w * a.samples[v0:v1] for w, a in zip(truth, aligned))
        residual_db = 10 * np.log10(
            np.mean(np.abs(interference - model) ** 2)
            / np.mean(np.abs(interference) ** 2)
        )
        assert residual_db <= -30.0

    def test_duplicate_references_warn(self):
        ref = fm(13)
        with pytest.warns(UserWarning, match="rank-deficient"):
            w = solve_weights(ref, [ref, ref], [0.0, 0.0])
        assert abs(np.sum(w) - 1.0) < 1e-6

    @given(scale=st.floats(0.01, 100.0))
    @settings(max_examples=20, deadline=None)
    def test_scale_equivariance(self, scale):
        soi = qam(14, num_symbols=256)
        ref = fm(15, n=soi.n_samples)
        received = soi + 0.4 * ref
        base = solve_weights(received, [ref], [0.0])
        scaled = solve_weights(received, [scale * ref], [0.0])
        assert abs(scaled[0] * scale - base[0]) < 1e-9 * abs(base[0]) + 1e-15

    def test_wiener_convexity_witness(self):
        soi = qam(16)
        ref = fm(17, n=soi.n_samples)
        received = soi + 0.6 * ref
        w = solve_weights(received, [ref], [0.0])[0]
        sl = slice(received.valid_start, received.valid_end)

        def residual(weight):
            return np.mean(np.abs(received.samples[sl] - weight * ref.samples[sl]) ** 2)

        base = residual(w)
        for bump in (1.01, 0.99, 1.01j, -0.01j + 1):
            assert residual(w * bump) > base

    def test_channel_count_limit(self):
        ref = fm(18, n=4096)
        with pytest.raises(ValueError, match="between 1 and 8"):
            solve_weights(ref, [ref] * 9, [0.0] * 9)


class TestOracleEquivalence:
    def test_single_channel_matches_grid_search(self):
        soi = qam(20, num_symbols=85)  # 4080 samples at 48 sps
        ref = fm(21, n=soi.n_samples)
        received = soi + (0.43 * np.exp(0.7j)) * ref
        solved = solve_weights(received, [ref], [0.0])[0]
        v0, v1 = received.valid_start, received.valid_end
        brute = brute_force_weights(
            received.samples[v0:v1], ref.samples[v0:v1]
        )[0]
        assert abs(abs(brute) - abs(solved)) <= 1e-3 + 1e-12
        phase_diff = np.angle(brute * np.conj(solved))
        assert abs(phase_diff) <= 1e-3 + 1e-12

    def test_two_channels_match_grid_search(self):
        soi = qam(22, num_symbols=85)
        refs = [fm(23, n=soi.n_samples), fm(24, n=soi.n_samples, deviation=6e6)]
        received = soi + 0.5 * refs[0] + (0.3 * np.exp(-1.2j)) * refs[1]
        solved = solve_weights(received, refs, [0.0, 0.0])
        v0, v1 = received.valid_start, received.valid_end
        a = np.stack([r.samples[v0:v1] for r in refs], axis=1)
        brute = brute_force_weights(received.samples[v0:v1], a)
        for b, s in zip(brute, solved):
            assert abs(abs(b) - abs(s)) <= 1e-3 + 1e-12
            assert abs(np.angle(b * np.conj(s))) <= 1e-3 + 1e-12


class TestWeightsToSettings:
    MZM = MzmParams(drive_scale=0.1)
    PATH = OpticalPathParams(excess_loss_db=0.5)

    def test_boundary_full_gain(self):
        max_w = channel_max_weight(self.MZM, self.PATH)
        st_ = weights_to_settings(-max_w, self.MZM, self.PATH, FC)
        assert st_.attenuation_db == pytest.approx(0.0, abs=1e-12)
        assert st_.bias_voltage == pytest.approx(self.MZM.v_pi / 2)
        assert st_.delay == pytest.approx(0.0, abs=1e-15)

    def test_half_magnitude_attenuation(self):
        max_w = channel_max_weight(self.MZM, self.PATH)
        st_ = weights_to_settings(-max_w / 2, self.MZM, self.PATH, FC)
        assert st_.attenuation_db == pytest.approx(10 * np.log10(2), abs=0.01)
        assert st_.attenuation_db == pytest.approx(3.0103, abs=0.01)

    def test_positive_weight_flips_bias(self):
        max_w = channel_max_weight(self.MZM, self.PATH)
        st_ = weights_to_settings(+max_w / 2, self.MZM, self.PATH, FC)
        assert st_.bias_voltage == pytest.approx(-self.MZM.v_pi / 2)

    def test_unrealizable_carries_maximum(self):
        max_w = channel_max_weight(self.MZM, self.PATH)
        with pytest.raises(UnrealizableWeightError) as err:
            weights_to_settings(2 * max_w, self.MZM, self.PATH, FC)
        assert err.value.max_achievable == pytest.approx(max_w)

    def test_round_trip_through_chain(self):
        # replay oracle: realize the settings and measure the effective
        # weight against the requested one
        rng = np.random.default_rng(30)
        ref = fm(31)
        pd = PdParams()
        max_w = channel_max_weight(self.MZM, self.PATH)
        for _ in range(5):
            requested = (
                rng.uniform(0.1, 0.95) * max_w * np.exp(1j * rng.uniform(-np.pi, np.pi))
            )
            st_ = weights_to_settings(requested, self.MZM, self.PATH, FC)
            modulator = replace(self.MZM, bias_voltage=st_.bias_voltage)
            optical = mzm_modulate(ref, modulator, wavelength_nm=1560.0)
            path = replace(self.PATH, attenuation_db=st_.attenuation_db,
                           delay=st_.delay)
            detected = combine_and_detect([apply_optical_path(optical, path)], pd)
            v0, v1 = detected.valid_start, detected.valid_end
            effective = (
                np.vdot(ref.samples[v0:v1], detected.samples[v0:v1])
                / np.vdot(ref.samples[v0:v1], ref.samples[v0:v1])
            ) / pd.responsivity
            assert abs(effective - requested) <= 0.01 * abs(requested)


class TestTune:
    def test_single_interferer_noiseless(self, paper_fig2_small):
        result = tune(paper_fig2_small)
        assert result.converged
        assert result.residual_interference_power_db <= -30.0

    def test_zero_interferer_gain_no_lock(self, paper_fig2_small):
        sc = replace(
            paper_fig2_small,
            interferers=(replace(paper_fig2_small.interferers[0], gain=0.0),),
        )
        result = tune(sc)
        assert not result.converged
        assert result.settings == (None,)
        assert result.residual_interference_power_db == 0.0

    def test_replay_matches_prediction(self, paper_fig2_small):
        result = tune(paper_fig2_small)
        assert abs(
            result.residual_interference_power_db - result.predicted_residual_db
        ) <= 0.5

    def test_soi_preserved(self, paper_fig2_small):
        # cancellation must not eat the signal of interest: project the
        # detected output onto the clean SOI before and after
        sc = paper_fig2_small
        rz = chain.realize(sc)
        result = tune(sc, realization=rz)
        pre = chain.detect(sc, rz, None)
        post = chain.detect(sc, rz, result.settings)

        def soi_projection(detected):
            v0 = max(detected.valid_start, rz.soi.valid_start)
            v1 = min(detected.valid_end, rz.soi.valid_end)
            ref = rz.soi.samples[v0:v1]
            return np.abs(np.vdot(ref, detected.samples[v0:v1])) ** 2 / np.vdot(
                ref, ref
            ).real

        change_db = 10 * np.log10(soi_projection(post) / soi_projection(pre))
        assert abs(change_db) < 0.2

    def test_paper_shaped_post_evm(self, paper_fig2):
        from picsim import demodulate_qam

        rz = chain.realize(paper_fig2)
        result = tune(paper_fig2, realization=rz)
        post = chain.detect(paper_fig2, rz, result.settings)
        report = demodulate_qam(post, paper_fig2.soi.qam, rz.tx_symbols)
        assert report.evm_rms_percent < 5.0

    def test_residual_never_positive(self, paper_fig2_small):
        # delay_error degrades cancellation; the result must still never
        # report amplification
        sc = replace(
            paper_fig2_small,
            sim=replace(paper_fig2_small.sim, delay_error=2.0e-9),
        )
        result = tune(sc)
        assert result.residual_interference_power_db <= 0.0


class TestInterferenceCanceller:
    def _data(self, seed=40, n=1 << 14):
        rng = np.random.default_rng(seed)
        refs = np.stack(
            [fm(seed + 1, n=n).samples, fm(seed + 2, n=n, deviation=6e6).samples],
            axis=1,
        )
        noise = 0.05 * (rng.standard_normal(n) + 1j * rng.standard_normal(n))
        y = refs @ np.array([0.7, 0.4j]) + noise
        return refs, y

    def test_fit_recovers_weights(self):
        refs, y = self._data()
        model = InterferenceCanceller(align=False).fit(refs, y)
        assert np.allclose(model.weights_, [0.7, 0.4j], atol=5e-3)
        assert model.n_features_in_ == 2
        assert model.residual_power_db_ < -20.0

    def test_fit_aligns_delays(self):
        n = 1 << 14
        ref = fm(50, n=n).samples
        y = fft_phase_delay(ref, 6.25) * 0.5
        model = InterferenceCanceller().fit(ref, y)
        assert abs(model.delays_[0] - 6.25) <= 0.1
        cancelled = model.cancel(ref, y)
        assert np.mean(np.abs(cancelled) ** 2) < 1e-3 * np.mean(np.abs(y) ** 2)

    def test_predict_and_score(self):
        refs, y = self._data()
        model = InterferenceCanceller(align=False).fit(refs, y)
        estimate = model.predict(refs)
        assert estimate.shape == y.shape
        assert model.score(refs, y) > 20.0

    def test_not_fitted(self):
        refs, y = self._data()
        with pytest.raises(NotFittedError):
            InterferenceCanceller().predict(refs)

    def test_sklearn_protocol(self):
        model = InterferenceCanceller(align=False, max_delay=32.0)
        params = model.get_params()
        assert params == {"align": False, "max_delay": 32.0}
        cloned = clone(model)
        assert cloned.get_params() == params
        cloned.set_params(align=True)
        assert cloned.align is True

    def test_input_validation(self):
        refs, y = self._data()
        model = InterferenceCanceller(align=False).fit(refs, y)
        with pytest.raises(ValueError, match="channels"):
            model.predict(refs[:, :1])
        with pytest.raises(ValueError, match="length"):
            model.cancel(refs, y[:-1])
        with pytest.raises(ValueError, match="non-finite"):
            InterferenceCanceller().fit(refs * np.nan, y)
