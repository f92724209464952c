"""Gaussian limit law of the multiscale statistic and its quantiles.

The normalized statistics converge to ``w_j (|Z_j| - w~_j)`` where
``Z`` is a centered Gaussian vector with correlation
``<F_j, F_k> / (||F_j|| ||F_k||)``.  The law is finite dimensional, so
it is simulated directly from a factorization of that matrix rather
than from a discretized Brownian sheet.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .estimator import weights
from .kernel import Triple, kernel_inner_product

__all__ = [
    "LimitModel",
    "MultiscaleQuantile",
    "CalibrationError",
    "CalibrationResult",
    "build_limit_model",
    "simulate_kappa",
    "simulate_maxima",
    "calibrate_quantiles",
    "replication_rng",
]

EIGEN_FLOOR = 1e-10


def replication_rng(seed: int, *stream: int) -> np.random.Generator:
    """Independent generator for ``(seed, *stream)``; order of use is irrelevant."""
    return np.random.default_rng([int(seed), *(int(s) for s in stream)])


@dataclass(frozen=True, eq=False)
class LimitModel:
    triples: tuple[Triple, ...]
    correlation: np.ndarray
    w: np.ndarray
    w_tilde: np.ndarray
    cholesky_factor: np.ndarray

    @property
    def p(self) -> int:
        return len(self.triples)


@dataclass(frozen=True)
class MultiscaleQuantile:
    alpha: float
    kappa: float
    replications: int
    seed: int
    empirical_cdf_at_kappa: float


class CalibrationError(RuntimeError):
    """Calibration could not reach the target level; ``level_curve`` has (gamma, level) pairs."""

    def __init__(self, message: str, level_curve: list[tuple[float, float]]):
        super().__init__(message)
        self.level_curve = level_curve


def _regularized_cholesky(corr: np.ndarray) -> np.ndarray:
    vals, vecs = np.linalg.eigh(corr)
    if np.min(vals) < EIGEN_FLOOR:
        vals = np.maximum(vals, EIGEN_FLOOR)
        corr = (vecs * vals) @ vecs.T
    try:
        return np.linalg.cholesky(corr)
    except np.linalg.LinAlgError as exc:
        raise np.linalg.LinAlgError(f"correlation factorization failed after regularization: {exc}")


def _gram_matrix(kernels: Sequence) -> np.ndarray:
    p = len(kernels)
    lo = np.array([k.support_box[0] for k in kernels])
    hi = np.array([k.support_box[1] for k in kernels])
    gram = np.zeros((p, p))
    for j in range(p):
        gram[j, j] = kernel_inner_product(kernels[j], kernels[j])
        overlap = np.all((np.minimum(hi[j], hi[j + 1:]) - np.maximum(lo[j], lo[j + 1:])) > 0, axis=1)
        for k in np.nonzero(overlap)[0] + j + 1:
            gram[j, k] = gram[k, j] = kernel_inner_product(kernels[j], kernels[k])
    return gram


def build_limit_model(triples: Sequence[Triple], kernels: Sequence) -> LimitModel:
    """Assemble the correlation of ``(int F_j dB)_j`` and the scale weights."""
    if len(triples) < 1 or len(triples) != len(kernels):
        raise ValueError("need at least one triple and one kernel per triple")
    gram = _gram_matrix(kernels)
    norms = np.sqrt(np.diag(gram))
    if np.any(norms <= 0):
        raise ValueError("a kernel has zero L2 norm")
    corr = gram / np.outer(norms, norms)
    np.fill_diagonal(corr, 1.0)
    corr = np.clip(corr, -1.0, 1.0)
    chol = _regularized_cholesky(corr)
    wts = np.array([weights(tr.h, tr.dim) for tr in triples])
    return LimitModel(tuple(triples), corr, wts[:, 0], wts[:, 1], chol)


def simulate_maxima(model: LimitModel, reps: int, seed: int) -> np.ndarray:
    """Draws of ``max_j w_j (|Z_j| - w~_j)``, one per replication."""
    z = np.stack([replication_rng(seed, i).standard_normal(model.p) for i in range(reps)])
    x = z @ model.cholesky_factor.T
    stats = model.w * (np.abs(x) - model.w_tilde)
    maxima = stats.max(axis=1)
    if not np.all(np.isfinite(maxima)):
        raise FloatingPointError("non-finite simulated maxima")
    return maxima


def simulate_kappa(model: LimitModel, alpha: float, reps: int = 1000, seed: int = 0) -> MultiscaleQuantile:
    """Smallest empirical ``kappa`` with ``P(max_j X_j <= kappa) >= 1 - alpha``."""
    if not 0 < alpha < 1:
        raise ValueError(f"alpha must lie in (0, 1), got {alpha}")
    if reps < 100:
        raise ValueError("at least 100 replications are required")
    maxima = np.sort(simulate_maxima(model, reps, seed))
    k = math.ceil((1 - alpha) * reps - 1e-9)
    kappa = float(maxima[k - 1])
    cdf = float(np.mean(maxima <= kappa))
    return MultiscaleQuantile(alpha, kappa, reps, seed, cdf)


@dataclass(frozen=True)
class CalibrationResult:
    """Multiplier ``gamma`` for all critical values and the level it achieves."""

    gamma: float
    level: float
    alpha: float
    reps: int
    seed: int
    level_curve: list[tuple[float, float]] = field(default_factory=list)


def calibrate_quantiles(model: LimitModel | None, test_pipeline: Callable, null_sampler: Callable,
                        alpha: float, reps: int = 2000, seed: int = 0, *,
                        rule: Callable[[np.ndarray, np.ndarray], bool] | None = None,
                        tolerance: float = 0.005, iterations: int = 60) -> CalibrationResult:
    """Find ``gamma`` in (0, 1] so that the calibrated test has level ``alpha``.

    ``null_sampler(rng)`` draws one null dataset; ``test_pipeline(sample)``
    returns ``(T, kappa_j)`` arrays.  ``rule(T, critical)`` decides whether the
    overall test rejects; the default rejects when every statistic exceeds
    its critical value (the conjunction used for mode tests).  Null datasets
    are drawn once and reused across the bisection so the empirical level is
    a monotone function of ``gamma``.

    ``model`` is accepted for symmetry with the other entry points; the
    critical values already carry it through ``test_pipeline``.
    """
    if reps < 500:
        raise ValueError("calibration needs at least 500 replications")
    if not 0 < alpha < 1:
        raise ValueError(f"alpha must lie in (0, 1), got {alpha}")
    if rule is None:
        rule = all_exceed
    cached = [test_pipeline(null_sampler(replication_rng(seed, i))) for i in range(reps)]

    def level(gamma: float) -> float:
        return float(np.mean([rule(T, gamma * kj) for T, kj in cached]))

    curve = [(float(g), level(g)) for g in np.linspace(0.0, 1.0, 21)[1:]]
    levels = [lv for _, lv in curve]
    if any(b > a + 1e-12 for a, b in zip(levels, levels[1:])):
        raise CalibrationError("empirical level is not monotone in gamma", curve)
    if levels[-1] > alpha + tolerance:
        raise CalibrationError(
            f"uncalibrated level {levels[-1]:.4f} already exceeds alpha={alpha}", curve)

    lo, hi = 0.0, 1.0
    for _ in range(iterations):
        mid = 0.5 * (lo + hi)
        if level(mid) <= alpha:
            hi = mid
        else:
            lo = mid
    achieved = level(hi)
    if abs(achieved - alpha) > tolerance:
        curve.append((hi, achieved))
        raise CalibrationError(
            f"calibrated level {achieved:.4f} is not within {tolerance} of alpha={alpha}", sorted(curve))
    return CalibrationResult(hi, achieved, alpha, reps, seed, curve)


def all_exceed(T: np.ndarray, critical: np.ndarray) -> bool:
    return bool(np.all(T > critical))


def any_exceeds_abs(T: np.ndarray, critical: np.ndarray) -> bool:
    return bool(np.any(np.abs(T) > critical))
