"""Test statistics, normalizing constants, pilot density and critical values."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import numpy as np

from .kernel import TestKernel, Triple, _gauss_legendre_box, kernel_inner_product

__all__ = [
    "Sample",
    "SampleFormatError",
    "PilotDensity",
    "TripleStatistics",
    "read_sample_csv",
    "test_statistic",
    "expected_statistic_oracle",
    "compute_V",
    "pilot_density",
    "weights",
    "critical_value",
]


class SampleFormatError(ValueError):
    """Malformed observation file; ``line`` is 1-based."""

    def __init__(self, message: str, line: int | None = None):
        prefix = f"line {line}: " if line is not None else ""
        super().__init__(prefix + message)
        self.line = line


@dataclass(frozen=True, eq=False)
class Sample:
    """Observations ``Y_i`` as rows of an ``n x d`` array."""

    observations: np.ndarray

    def __post_init__(self):
        obs = np.array(self.observations, dtype=float)
        if obs.ndim == 1:
            obs = obs.reshape(1, -1)
        if obs.ndim != 2 or obs.shape[0] < 1 or obs.shape[1] < 1:
            raise ValueError(f"observations must be a nonempty n x d array, got shape {obs.shape}")
        if not np.all(np.isfinite(obs)):
            raise ValueError("observations contain non-finite values")
        obs.setflags(write=False)
        object.__setattr__(self, "observations", obs)

    @property
    def n(self) -> int:
        return self.observations.shape[0]

    @property
    def d(self) -> int:
        return self.observations.shape[1]

    def concat(self, other: "Sample") -> "Sample":
        return Sample(np.vstack([self.observations, other.observations]))


def read_sample_csv(path: str | Path) -> Sample:
    """Read one observation per row.

    Lines starting with ``#`` are comments; a non-numeric first data row is
    a header.  Line numbers in errors count every physical line.
    """
    rows: list[list[float]] = []
    width = None
    header_allowed = True
    with open(path, newline="") as fh:
        for lineno, line in enumerate(fh, start=1):
            if line.lstrip().startswith("#"):
                continue
            row = next(csv.reader([line]), [])
            if not row or all(not c.strip() for c in row):
                continue
            try:
                vals = [float(c) for c in row]
            except ValueError:
                if header_allowed:
                    header_allowed = False
                    continue
                raise SampleFormatError(f"non-numeric entry in {row!r}", lineno) from None
            header_allowed = False
            if width is None:
                width = len(vals)
            elif len(vals) != width:
                raise SampleFormatError(f"expected {width} columns, found {len(vals)}", lineno)
            if not all(math.isfinite(v) for v in vals):
                raise SampleFormatError("non-finite entry", lineno)
            rows.append(vals)
    if not rows:
        raise SampleFormatError(f"no observations in {path}")
    return Sample(np.asarray(rows))


def test_statistic(sample: Sample, F) -> float:
    """``T = n^{-1} sum_i F(Y_i)``."""
    if sample.d != F.dim:
        raise ValueError(f"sample dimension {sample.d} does not match kernel dimension {F.dim}")
    return float(np.mean(F(sample.observations)))


test_statistic.__test__ = False


def expected_statistic_oracle(f: Callable[[np.ndarray], np.ndarray], k: TestKernel,
                              tr: Triple, nodes: int = 48) -> float:
    """``int f(x) d_s phi_{t,h}(x) dx`` by tensor Gauss-Legendre on the support box.

    This is the population value that ``T`` estimates when ``f`` is the
    density of the observations in the error-free model.
    """
    t = np.asarray(tr.t)
    pts, w = _gauss_legendre_box(t - tr.h, t + tr.h, nodes)
    u = (pts - t) / tr.h
    ds_phi = np.zeros(len(w))
    for j, sj in enumerate(tr.s):
        if sj:
            alpha = [0] * tr.dim
            alpha[j] = 1
            ds_phi += sj * k.partial_derivative(alpha, u)
    ds_phi *= tr.h ** (-tr.dim - 1)
    return float(np.sum(w * f(pts) * ds_phi))


def compute_V(F, r: float | None = None) -> float:
    """``V = h^{d/2 + r + 1} ||F||_{L^2}``."""
    if r is None:
        r = F.error.r
    h, d = F.triple.h, F.dim
    return h ** (d / 2 + r + 1) * math.sqrt(kernel_inner_product(F, F))


def weights(h: float, d: int) -> tuple[float, float]:
    """Scale weights ``(w, w_tilde)``.

    ``w = sqrt(log(e h^-d)) / log log(e^e h^-d)`` and
    ``w_tilde = sqrt(2 log(h^-d))``.
    """
    if not 0 < h <= 1:
        raise ValueError(f"scale must lie in (0, 1], got {h}")
    log_inv = -d * math.log(h)
    w = math.sqrt(1.0 + log_inv) / math.log(math.e + log_inv)
    w_tilde = math.sqrt(2.0 * log_inv)
    return w, w_tilde


def critical_value(g_hat: float, V: float, h: float, d: int, r: float,
                   kappa_n: float, n: int) -> float:
    """Per-triple critical value ``kappa_n^j`` for the one-sided rules."""
    if not (g_hat > 0 and V > 0 and n > 0 and math.isfinite(kappa_n)):
        raise ValueError("critical value requires g_hat > 0, V > 0, n > 0 and finite kappa_n")
    w, w_tilde = weights(h, d)
    return math.sqrt(g_hat) * V / math.sqrt(n) * h ** (-d / 2 - r - 1) * (kappa_n / w + w_tilde)


@dataclass(frozen=True)
class TripleStatistics:
    """Everything needed to decide one triple, stored for reproducibility."""

    triple: Triple
    statistic: float
    V: float
    g_hat_at_t: float
    w: float
    w_tilde: float
    kappa_j: float
    kappa_n: float
    n: int
    r: float

    def recompute_critical(self) -> float:
        return critical_value(self.g_hat_at_t, self.V, self.triple.h, self.triple.dim,
                              self.r, self.kappa_n, self.n)


def _biweight(u: np.ndarray) -> np.ndarray:
    return np.where(np.abs(u) <= 1.0, 0.9375 * (1.0 - u * u) ** 2, 0.0)


@dataclass(frozen=True, eq=False)
class PilotDensity:
    """Product biweight kernel density estimate, clamped below at ``floor``."""

    data: np.ndarray
    bandwidth: np.ndarray
    floor: float

    def raw(self, x, chunk: int = 256) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(x, dtype=float))
        out = np.empty(pts.shape[0])
        norm = self.data.shape[0] * np.prod(self.bandwidth)
        for i in range(0, pts.shape[0], chunk):
            blk = pts[i:i + chunk]
            u = (blk[:, None, :] - self.data[None, :, :]) / self.bandwidth
            out[i:i + chunk] = np.prod(_biweight(u), axis=2).sum(axis=1) / norm
        return out

    def evaluate(self, x) -> np.ndarray:
        return np.maximum(self.raw(x), self.floor)

    __call__ = evaluate


def default_bandwidth(sample: Sample) -> np.ndarray:
    """``n^{-1/6}`` times the per-axis sample standard deviation."""
    sd = np.std(sample.observations, axis=0, ddof=1)
    sd = np.where(sd > 0, sd, 1.0)
    return sample.n ** (-1.0 / 6.0) * sd


def pilot_density(sample: Sample, bandwidth=None, floor: float = 1e-4) -> PilotDensity:
    """Pilot estimate of the observation density used in the critical values."""
    if sample.n < 2:
        raise ValueError("pilot density needs at least two observations")
    if floor <= 0:
        raise ValueError("floor must be positive")
    if bandwidth is None:
        bw = default_bandwidth(sample)
    else:
        bw = np.broadcast_to(np.asarray(bandwidth, dtype=float), (sample.d,)).copy()
    if np.any(bw <= 0):
        raise ValueError(f"bandwidth must be positive, got {bandwidth}")
    return PilotDensity(sample.observations, bw, float(floor))
