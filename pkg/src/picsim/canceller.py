"""Automated cancellation tuning: delay estimation, least-squares weight
solving, and the mapping from complex weights to physical device settings
(bias sign, attenuation, tunable delay).

The solver is deliberately non-iterative at its core: correlation delay
search plus closed-form normal equations, so every result is checkable
against brute-force oracles.  Only the weight-phase-to-delay fold is
iterated, because the physical delay knob moves the envelope and the
carrier phase together.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, replace
from typing import Optional, Sequence

import numpy as np
from scipy import signal as sp_signal
from sklearn.base import BaseEstimator
from sklearn.exceptions import NotFittedError

from . import chain as _chain
from .chain import ChannelSettings
from .photonics import linearized_gain
from .scenario import Scenario
from .waveforms import Waveform, apply_fractional_delay

RIDGE_RELATIVE = 1e-12


class UnrealizableWeightError(ValueError):
    """Requested weight magnitude exceeds the channel's maximum gain."""

    def __init__(self, requested: float, max_achievable: float):
        super().__init__(
            f"weight magnitude {requested:.4g} exceeds the maximum achievable "
            f"{max_achievable:.4g} at zero attenuation"
        )
        self.requested = requested
        self.max_achievable = max_achievable


@dataclass(frozen=True)
class TuneResult:
    """Solved settings and the replay-measured interference residual.

    ``residual_interference_power_db`` is measured by replaying the chain
    with the reported settings (interferer-only), relative to the muted
    baseline; it is never positive because the zero-weight settings are
    always admissible.
    """

    delays: tuple
    weights: tuple
    settings: tuple
    residual_interference_power_db: float
    predicted_residual_db: float
    converged: bool
    locked: tuple


def estimate_delay(
    received: Waveform, reference: Waveform, search_window: float
) -> Optional[float]:
    """Cross-correlation delay of ``reference`` inside ``received``.

    Returns the delay in seconds, refined to sub-sample precision by
    parabolic interpolation of the correlation-magnitude peak, or ``None``
    when no significant peak exists (no interference present).
    """
    received._check_compatible(reference)
    fs = received.sample_rate
    if search_window > received.duration / 4:
        raise ValueError("search_window must be <= buffer duration / 4")
    v0 = max(received.valid_start, reference.valid_start)
    v1 = min(received.valid_end, reference.valid_end)
    x = received.samples[v0:v1]
    r = reference.samples[v0:v1]
    norm = np.linalg.norm(x) * np.linalg.norm(r)
    if norm == 0:
        return None
    corr = sp_signal.correlate(x, r, mode="full", method="fft")
    lags = np.arange(-(r.size - 1), x.size)
    max_lag = int(round(search_window * fs))
    window = np.abs(lags) <= max_lag
    corr = corr[window]
    lags = lags[window]
    mag = np.abs(corr)
    peak = int(np.argmax(mag))
    rho = mag[peak] / norm
    if rho < max(0.02, 8.0 / np.sqrt(x.size)):
        return None
    lag = float(lags[peak])
    if 0 < peak < mag.size - 1:
        denom = mag[peak - 1] - 2 * mag[peak] + mag[peak + 1]
        if denom != 0:
            lag += 0.5 * (mag[peak - 1] - mag[peak + 1]) / denom
    if abs(lag - round(lag)) < 1e-9:  # numerically integer: exact shift
        lag = float(round(lag))
    return lag / fs


def solve_weights(
    received: Waveform,
    references: Sequence[Waveform],
    delays: Sequence[float],
) -> np.ndarray:
    """Least-squares weights minimizing mean |received - sum w_k ref_k|^2.

    References are delayed into alignment first; the normal equations are
    solved with a relative ridge of 1e-12 to absorb conditioning.  A
    rank-deficient reference set (duplicates) triggers a warning and a
    regularized solution rather than a failure.
    """
    if not 1 <= len(references) <= 8:
        raise ValueError("need between 1 and 8 reference channels")
    if len(delays) != len(references):
        raise ValueError("delays and references must have equal length")
    aligned = []
    v0, v1 = received.valid_start, received.valid_end
    for ref, delay in zip(references, delays):
        received._check_compatible(ref)
        shifted = apply_fractional_delay(ref, delay) if delay else ref
        aligned.append(shifted)
        v0 = max(v0, shifted.valid_start)
        v1 = min(v1, shifted.valid_end)
    if v1 <= v0:
        raise ValueError("no common valid window between received and references")
    a = np.stack([ref.samples[v0:v1] for ref in aligned], axis=1)
    y = received.samples[v0:v1]
    return _solve_normal_equations(a, y)


def _solve_normal_equations(a: np.ndarray, y: np.ndarray) -> np.ndarray:
    n, k = a.shape
    gram = np.einsum("ni,nj->ij", np.conj(a), a) / n
    cross = np.einsum("ni,n->i", np.conj(a), y) / n
    eigvals = np.linalg.eigvalsh(gram)
    if eigvals[0] < 1e-12 * eigvals[-1]:
        warnings.warn(
            "rank-deficient reference set (duplicate or collinear references); "
            "returning the ridge-regularized solution",
            stacklevel=3,
        )
    ridge = RIDGE_RELATIVE * float(np.trace(gram).real) / k
    return np.linalg.solve(gram + ridge * np.eye(k), cross)


def _wrap_phase(phase: float) -> float:
    return float((phase + np.pi) % (2.0 * np.pi) - np.pi)


def _fold_sign_and_phase(weight_phase: float) -> tuple[float, float]:
    """Split a target phase into a slope-sign choice (0 or pi) plus the
    smallest residual phase to realize via delay."""
    plus = _wrap_phase(weight_phase)
    minus = _wrap_phase(weight_phase - np.pi)
    if abs(plus) <= abs(minus):
        return 1.0, plus
    return -1.0, minus


def channel_max_weight(mzm, path) -> float:
    """Largest realizable optical-domain weight magnitude: quadrature-bias
    slope times drive scale at zero attenuation."""
    quad = abs(linearized_gain(replace(mzm, bias_voltage=mzm.v_pi / 2.0)))
    nominal_gain = 10.0 ** (-path.excess_loss_db / 10.0)
    return quad * mzm.drive_scale * nominal_gain


def weights_to_settings(
    weight: complex, mzm, path, carrier_freq: float
) -> ChannelSettings:
    """Map one optical-domain complex weight to device settings.

    The sign of the weight picks the quadrature bias (+/- Vpi/2, intensity
    inversion); the magnitude maps to attenuation against the quadrature
    slope; the residual carrier-phase component maps to a delay adjustment
    of less than one carrier period.
    """
    if carrier_freq <= 0:
        raise ValueError("carrier_freq must be > 0")
    magnitude = abs(weight)
    max_weight = channel_max_weight(mzm, path)
    if magnitude > max_weight:
        raise UnrealizableWeightError(magnitude, max_weight)
    if magnitude == 0:
        raise ValueError("zero weight corresponds to a muted channel")
    sign, residual_phase = _fold_sign_and_phase(float(np.angle(weight)))
    # contribution phase is exp(-j*w*delay): delay realizes -residual_phase
    delay = -residual_phase / (2.0 * np.pi * carrier_freq)
    if delay < 0:
        delay += 1.0 / carrier_freq
    attenuation_db = 10.0 * np.log10(max_weight / magnitude)
    # positive slope needs bias at -Vpi/2
    bias = -mzm.v_pi / 2.0 if sign > 0 else mzm.v_pi / 2.0
    return ChannelSettings(bias, attenuation_db, delay)


def tune(
    sc: Scenario,
    *,
    realization=None,
    search_window: Optional[float] = None,
    max_iterations: int = 8,
) -> TuneResult:
    """Automated replacement for manual knob tuning.

    Pipeline: per-channel correlation delay estimate, normal-equation
    weights, weight-to-settings mapping with the phase folded into the
    tunable delay, then replay verification.  The reported residual is the
    replay measurement, not the solver's prediction.
    """
    rz = realization if realization is not None else _chain.realize(sc)
    n_refs = len(sc.reference_channels)
    muted = TuneResult(
        delays=tuple([None] * n_refs),
        weights=tuple([0j] * n_refs),
        settings=tuple([None] * n_refs),
        residual_interference_power_db=0.0,
        predicted_residual_db=0.0,
        converged=False,
        locked=tuple([False] * n_refs),
    )
    if n_refs == 0 or not sc.interferers:
        return muted
    pre = _chain.detect(sc, rz, None)
    pre_int = _chain.detect(sc, rz, None, include_soi=False)
    if search_window is None:
        search_window = min(0.5e-6, pre.duration / 8.0)
    n_channels = min(n_refs, len(rz.interferers))
    taus: dict[int, float] = {}
    for k in range(n_channels):
        est = estimate_delay(pre, rz.interferers[k], search_window)
        if est is not None:
            taus[k] = est
    if not taus:
        return muted
    locked = sorted(taus)
    omega = 2.0 * np.pi * _chain.effective_carrier(sc)
    responsivity = sc.pd.responsivity

    weights = np.zeros(len(locked), dtype=complex)
    for _ in range(max_iterations):
        weights = solve_weights(
            pre,
            [rz.interferers[k] for k in locked],
            [taus[k] for k in locked],
        )
        max_step = 0.0
        for i, k in enumerate(locked):
            w_opt = weights[i] / responsivity
            target_phase = float(np.angle(w_opt * np.exp(1j * omega * taus[k])))
            _, residual_phase = _fold_sign_and_phase(target_phase)
            step = -residual_phase / omega
            taus[k] += step
            if taus[k] < 0:
                taus[k] += np.ceil(-taus[k] * omega / (2 * np.pi)) * (2 * np.pi / omega)
            max_step = max(max_step, abs(step))
        if max_step < 1e-15:
            break

    settings: list[Optional[ChannelSettings]] = [None] * n_refs
    full_weights = [0j] * n_refs
    full_delays: list = [None] * n_refs
    lock_flags = [False] * n_refs
    for i, k in enumerate(locked):
        channel = sc.reference_channels[k]
        # the channel must inject the negated interference coefficient
        applied = -weights[i] / responsivity
        magnitude = abs(applied)
        max_weight = channel_max_weight(channel.modulator, channel.path)
        if magnitude > max_weight:
            warnings.warn(
                f"reference channel {k}: weight magnitude {magnitude:.3g} "
                f"exceeds achievable {max_weight:.3g}; clamping attenuation "
                "to 0 dB (partial cancellation)",
                stacklevel=2,
            )
            attenuation = 0.0
        else:
            attenuation = 10.0 * np.log10(max_weight / magnitude)
        sign, _ = _fold_sign_and_phase(
            float(np.angle(applied * np.exp(1j * omega * taus[k])))
        )
        bias = -channel.modulator.v_pi / 2.0 if sign > 0 else channel.modulator.v_pi / 2.0
        settings[k] = ChannelSettings(bias, attenuation, taus[k])
        full_weights[k] = complex(weights[i])
        full_delays[k] = taus[k]
        lock_flags[k] = True

    # solver's own prediction of the residual, in the waveform domain
    aligned = [
        apply_fractional_delay(rz.interferers[k], taus[k]) for k in locked
    ]
    v0 = max([pre_int.valid_start] + [a.valid_start for a in aligned])
    v1 = min([pre_int.valid_end] + [a.valid_end for a in aligned])
    model = np.zeros(v1 - v0, dtype=complex)
    for w, ref in zip(weights, aligned):
        model += w * ref.samples[v0:v1]
    resid = pre_int.samples[v0:v1] - model
    pre_power = float(np.mean(np.abs(pre_int.samples[v0:v1]) ** 2))
    predicted_db = 10.0 * np.log10(
        max(float(np.mean(np.abs(resid) ** 2)), 1e-300) / pre_power
    )

    post_int = _chain.detect(sc, rz, settings, include_soi=False)
    measured_db = 10.0 * np.log10(
        max(post_int.mean_power(), 1e-300) / pre_int.mean_power()
    )
    if measured_db > 0.0:
        return muted
    return TuneResult(
        delays=tuple(full_delays),
        weights=tuple(full_weights),
        settings=tuple(settings),
        residual_interference_power_db=measured_db,
        predicted_residual_db=predicted_db,
        converged=True,
        locked=tuple(lock_flags),
    )


def _as_reference_matrix(x) -> np.ndarray:
    a = np.asarray(x, dtype=np.complex128)
    if a.ndim == 1:
        a = a[:, None]
    if a.ndim != 2 or a.shape[0] == 0:
        raise ValueError("X must be a 1-D or 2-D sample-by-channel array")
    if not np.all(np.isfinite(a)):
        raise ValueError("X contains non-finite values")
    return a


def _as_received_vector(y, n: int) -> np.ndarray:
    v = np.asarray(y, dtype=np.complex128)
    if v.ndim != 1:
        raise ValueError("y must be a 1-D sample vector")
    if v.size != n:
        raise ValueError(f"X and y disagree on length ({n} vs {v.size})")
    if not np.all(np.isfinite(v)):
        raise ValueError("y contains non-finite values")
    return v


class InterferenceCanceller(BaseEstimator):
    """Sklearn-style estimator around the delay + weight solver.

    ``fit(X, y)`` takes reference channels as columns of ``X`` and the
    received samples as ``y``; it learns per-channel sample delays and
    complex weights.  ``predict(X)`` returns the interference estimate and
    ``cancel(X, y)`` the cleaned signal.  Delays and weights are exposed
    as ``delays_`` and ``weights_`` for ecosystem composition.
    """

    def __init__(self, align: bool = True, max_delay: Optional[float] = None):
        self.align = align
        self.max_delay = max_delay

    def _check_fitted(self):
        if not hasattr(self, "weights_"):
            raise NotFittedError(
                "This InterferenceCanceller instance is not fitted yet; "
                "call fit(X, y) first."
            )

    def fit(self, X, y):
        a = _as_reference_matrix(X)
        v = _as_received_vector(y, a.shape[0])
        n, k = a.shape
        received = Waveform(v, 1.0, 0.0)
        delays = np.zeros(k)
        if self.align:
            window = self.max_delay if self.max_delay is not None else n / 8.0
            for j in range(k):
                est = estimate_delay(received, Waveform(a[:, j], 1.0, 0.0), window)
                delays[j] = 0.0 if est is None else est
        weights = solve_weights(
            received,
            [Waveform(a[:, j], 1.0, 0.0) for j in range(k)],
            list(delays),
        )
        residual = v - self._model(a, delays, weights)
        power = float(np.mean(np.abs(v) ** 2))
        self.n_features_in_ = k
        self.delays_ = delays
        self.weights_ = weights
        self.residual_power_db_ = 10.0 * np.log10(
            max(float(np.mean(np.abs(residual) ** 2)), 1e-300) / max(power, 1e-300)
        )
        return self

    @staticmethod
    def _model(a: np.ndarray, delays: np.ndarray, weights: np.ndarray) -> np.ndarray:
        model = np.zeros(a.shape[0], dtype=complex)
        for j in range(a.shape[1]):
            ref = Waveform(a[:, j], 1.0, 0.0)
            if delays[j]:
                ref = apply_fractional_delay(ref, float(delays[j]))
            model += weights[j] * ref.samples
        return model

    def predict(self, X):
        """Interference estimate: the weighted, aligned reference sum."""
        self._check_fitted()
        a = _as_reference_matrix(X)
        if a.shape[1] != self.n_features_in_:
            raise ValueError(
                f"X has {a.shape[1]} channels, fitted with {self.n_features_in_}"
            )
        return self._model(a, self.delays_, self.weights_)

    def cancel(self, X, y):
        """Received signal with the interference estimate subtracted."""
        a = _as_reference_matrix(X)
        v = _as_received_vector(y, a.shape[0])
        return v - self.predict(a)

    def score(self, X, y):
        """Cancellation depth in dB (positive is better)."""
        a = _as_reference_matrix(X)
        v = _as_received_vector(y, a.shape[0])
        residual = self.cancel(a, v)
        power = float(np.mean(np.abs(v) ** 2))
        return -10.0 * np.log10(
            max(float(np.mean(np.abs(residual) ** 2)), 1e-300) / max(power, 1e-300)
        )
