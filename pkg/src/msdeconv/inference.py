"""Simultaneous monotonicity tests, mode detection and monotonicity maps."""

from __future__ import annotations

import csv
import io
import itertools
import logging
import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .estimator import (Sample, TripleStatistics, compute_V, critical_value, pilot_density,
                        weights)
from .kernel import (LaplaceError, TestKernel, Triple, make_deconv_kernel_laplace,
                     make_deconv_kernel_spectral, make_quartic_kernel)
from .limit import LimitModel, MultiscaleQuantile, build_limit_model, simulate_kappa

__all__ = [
    "TripleGrid",
    "Decision",
    "DecisionReport",
    "ModeReport",
    "ArrowMap",
    "MultiscaleTest",
    "build_grid",
    "unit_directions",
    "run_multiscale_test",
    "candidate_set",
    "detect_modes",
    "monotonicity_map",
    "mode_threshold",
]

log = logging.getLogger(__name__)


class Decision:
    REJECT_INCR = "reject_incr"
    REJECT_DECR = "reject_decr"
    RETAIN = "retain"


def decide(T: float, critical: float) -> str:
    if T < -critical:
        return Decision.REJECT_INCR
    if T > critical:
        return Decision.REJECT_DECR
    return Decision.RETAIN


def _same_vec(a, b, tol=1e-9) -> bool:
    return all(abs(x - y) <= tol for x, y in zip(a, b))


# ---------------------------------------------------------------------------
# Grids
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TripleGrid:
    triples: tuple[Triple, ...]
    box: tuple[tuple[float, ...], tuple[float, ...]]
    scales: tuple[float, ...]
    directions: dict
    symmetric: bool
    warnings: tuple[str, ...] = ()

    def __len__(self) -> int:
        return len(self.triples)

    @property
    def dim(self) -> int:
        return len(self.box[0])

    def locations(self) -> list[tuple[float, ...]]:
        seen: dict[tuple[float, ...], None] = {}
        for tr in self.triples:
            seen.setdefault(tr.t, None)
        return list(seen)

    def is_symmetric(self) -> bool:
        def key(s, tr):
            return tuple(round(v, 9) + 0.0 for v in s), tr.t, tr.h
        keys = {key(tr.s, tr) for tr in self.triples}
        return all(key([-v for v in tr.s], tr) in keys for tr in self.triples)


def unit_directions(count: int, offset: float = 0.0) -> list[tuple[float, float]]:
    """``count`` equidistant directions on the unit circle starting at angle ``offset``."""
    out = []
    for k in range(count):
        a = offset + 2 * math.pi * k / count
        c, s = math.cos(a), math.sin(a)
        out.append((0.0 if abs(c) < 1e-15 else c, 0.0 if abs(s) < 1e-15 else s))
    return out


def _grid_axis(lo: float, hi: float, width: float) -> np.ndarray:
    count = int(math.floor((hi - lo) / width + 1e-9)) + 1
    return lo + width * np.arange(count)


def _normalize(v) -> tuple[float, ...]:
    arr = np.asarray(v, dtype=float)
    arr = arr / np.linalg.norm(arr)
    return tuple(float(x) + 0.0 for x in arr)


def build_grid(box, scales: Sequence[float], directions_per_scale, symmetric: bool = False,
               n: int | None = None, width: float | None = None, eps: float = 0.05,
               h_bounds: tuple[float, float] | None = None) -> TripleGrid:
    """Cartesian triple set: per scale, an equidistant location grid times directions.

    ``directions_per_scale`` is a list of vectors used for every scale, an
    integer (that many equidistant directions, d = 2 only), or a mapping
    from scale to either of those.  ``width`` defaults to the scale itself.
    """
    lo = tuple(float(v) for v in box[0])
    hi = tuple(float(v) for v in box[1])
    if len(lo) != len(hi) or any(b < a for a, b in zip(lo, hi)):
        raise ValueError(f"invalid box {box}")
    d = len(lo)
    scales = tuple(float(h) for h in scales)
    if not scales:
        raise ValueError("scales must be nonempty")
    if any(not 0 < h <= 1 for h in scales):
        raise ValueError(f"scales must lie in (0, 1], got {scales}")

    def dirs_for(h):
        given = directions_per_scale.get(h) if isinstance(directions_per_scale, dict) else directions_per_scale
        if isinstance(given, int):
            if d != 2:
                raise ValueError("integer direction counts are supported for d = 2 only")
            given = unit_directions(given)
        if given is None or len(given) == 0:
            raise ValueError("directions must be nonempty")
        out = [_normalize(v) for v in given]
        if any(len(v) != d for v in out):
            raise ValueError("direction dimension does not match the box")
        if symmetric:
            for v in list(out):
                neg = tuple(-x + 0.0 for x in v)
                if not any(_same_vec(neg, u) for u in out):
                    out.append(neg)
        return out

    triples, dir_map = [], {}
    for h in scales:
        dirs = dirs_for(h)
        dir_map[h] = tuple(dirs)
        wd = h if width is None else float(width)
        axes = [_grid_axis(a, b, wd) for a, b in zip(lo, hi)]
        for t in itertools.product(*axes):
            for s in dirs:
                triples.append(Triple(s, tuple(float(x) for x in t), h))

    warns = []
    if n is not None:
        h_min, h_max = min(scales), max(scales)
        floor_h = n ** (-1.0 / d + eps)
        if h_min < floor_h:
            warns.append(f"smallest scale {h_min:g} is below n^(-1/d+eps) = {floor_h:.3g}")
        if n > 3 and h_max * math.log(n) * math.log(math.log(n)) > 1:
            warns.append(f"largest scale {h_max:g} is not small relative to 1/(log n log log n)")
        if len(triples) > n**2:
            warns.append(f"{len(triples)} triples exceed n^2 = {n**2}")
    if h_bounds is not None:
        if min(scales) < h_bounds[0] or max(scales) > h_bounds[1]:
            warns.append(f"scales outside the supplied bounds {h_bounds}")
    for w in warns:
        log.warning(w)
    return TripleGrid(tuple(triples), (lo, hi), scales, dir_map, symmetric, tuple(warns))


# ---------------------------------------------------------------------------
# The multiscale test
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class DecisionReport:
    statistics: tuple[TripleStatistics, ...]
    critical: np.ndarray
    decisions: tuple[str, ...]
    alpha: float
    kappa_n: float
    gamma: float
    symmetric: bool
    metadata: dict = field(default_factory=dict)

    @property
    def triples(self) -> list[Triple]:
        return [st.triple for st in self.statistics]

    @property
    def T(self) -> np.ndarray:
        return np.array([st.statistic for st in self.statistics])

    def rejections(self) -> list[int]:
        return [j for j, dcs in enumerate(self.decisions) if dcs != Decision.RETAIN]

    def recomputed_decisions(self) -> tuple[str, ...]:
        return tuple(decide(st.statistic, c) for st, c in zip(self.statistics, self.critical))

    def to_csv(self) -> str:
        d = self.statistics[0].triple.dim if self.statistics else 0
        buf = io.StringIO()
        wr = csv.writer(buf, lineterminator="\n")
        wr.writerow([f"t{i+1}" for i in range(d)] + [f"s{i+1}" for i in range(d)] +
                    ["h", "statistic", "critical", "kappa_j", "V", "g_hat", "decision"])
        for st, c, dec in zip(self.statistics, self.critical, self.decisions):
            tr = st.triple
            wr.writerow([repr(v) for v in tr.t] + [repr(v) for v in tr.s] +
                        [repr(tr.h), repr(st.statistic), repr(float(c)), repr(st.kappa_j),
                         repr(st.V), repr(st.g_hat_at_t), dec])
        return buf.getvalue()


class MultiscaleTest:
    """Kernels, normalizing constants and the multiscale quantile for a fixed
    triple set, error model and sample size, reusable across datasets.
    """

    def __init__(self, triples: Sequence[Triple], error, n: int, alpha: float = 0.05, *,
                 kappa_reps: int = 1000, seed: int = 0, test_kernel: TestKernel | None = None,
                 bandwidth=None, floor: float = 1e-4, symmetric: bool = False, spectral_options=None):
        if not triples:
            raise ValueError("the triple set is empty")
        if not 0 < alpha < 1:
            raise ValueError(f"alpha must lie in (0, 1), got {alpha}")
        self.triples = tuple(triples)
        self.error = error
        self.n = int(n)
        self.alpha = alpha
        self.seed = seed
        self.bandwidth = bandwidth
        self.floor = floor
        self.symmetric = symmetric
        self.test_kernel = test_kernel or make_quartic_kernel(self.triples[0].dim)
        if isinstance(error, LaplaceError):
            self.kernels = [make_deconv_kernel_laplace(self.test_kernel, tr, error.sigma)
                            for tr in self.triples]
        else:
            opts = spectral_options or {}
            self.kernels = [make_deconv_kernel_spectral(self.test_kernel, tr, error, **opts)
                            for tr in self.triples]
        self.r = float(error.r)
        self.V = np.array([compute_V(F, self.r) for F in self.kernels])
        self.model: LimitModel = build_limit_model(self.triples, self.kernels)
        self.quantile: MultiscaleQuantile = simulate_kappa(self.model, alpha, kappa_reps, seed)
        self.locations = np.array([tr.t for tr in self.triples])
        self._coef = np.array([
            v / math.sqrt(self.n) * tr.h ** (-tr.dim / 2 - self.r - 1) for tr, v in zip(self.triples, self.V)])
        self._w = self.model.w
        self._wt = self.model.w_tilde

    @property
    def kappa_n(self) -> float:
        return self.quantile.kappa

    def statistics(self, sample: Sample) -> np.ndarray:
        if sample.d != self.triples[0].dim:
            raise ValueError(f"sample dimension {sample.d} does not match triple dimension")
        return np.array([float(np.mean(F(sample.observations))) for F in self.kernels])

    def g_hat(self, sample: Sample) -> np.ndarray:
        return pilot_density(sample, self.bandwidth, self.floor)(self.locations)

    def critical_values(self, sample: Sample) -> np.ndarray:
        g = self.g_hat(sample)
        return np.sqrt(g) * self._coef * (self.kappa_n / self._w + self._wt)

    def __call__(self, sample: Sample) -> tuple[np.ndarray, np.ndarray]:
        """``(T, kappa_j)`` for one dataset; the calibration pipeline contract."""
        return self.statistics(sample), self.critical_values(sample)

    def report(self, sample: Sample, gamma: float = 1.0, metadata: dict | None = None) -> DecisionReport:
        if sample.n != self.n:
            raise ValueError(f"test prepared for n={self.n}, sample has n={sample.n}")
        T = self.statistics(sample)
        g = self.g_hat(sample)
        stats = []
        for j, tr in enumerate(self.triples):
            kj = critical_value(g[j], self.V[j], tr.h, tr.dim, self.r, self.kappa_n, self.n)
            w, wt = weights(tr.h, tr.dim)
            stats.append(TripleStatistics(tr, float(T[j]), float(self.V[j]), float(g[j]), w, wt,
                                          kj, self.kappa_n, self.n, self.r))
        crit = gamma * np.array([st.kappa_j for st in stats])
        decisions = tuple(decide(st.statistic, c) for st, c in zip(stats, crit))
        meta = {"n": self.n, "error": self.error.label, "seed": self.seed,
                "kappa_reps": self.quantile.replications}
        meta.update(metadata or {})
        return DecisionReport(tuple(stats), crit, decisions, self.alpha, self.kappa_n, gamma,
                              self.symmetric, meta)


def run_multiscale_test(sample: Sample, grid: TripleGrid | Sequence[Triple], error, alpha: float = 0.05,
                        seed: int = 0, *, kappa_reps: int = 1000, gamma: float = 1.0,
                        **options) -> DecisionReport:
    """Run all one-sided tests on ``grid`` with multiscale critical values."""
    triples = grid.triples if isinstance(grid, TripleGrid) else tuple(grid)
    symmetric = grid.is_symmetric() if isinstance(grid, TripleGrid) else False
    test = MultiscaleTest(triples, error, sample.n, alpha, kappa_reps=kappa_reps, seed=seed,
                          symmetric=symmetric, **options)
    return test.report(sample, gamma)


# ---------------------------------------------------------------------------
# Modes
# ---------------------------------------------------------------------------


def _angle(u: np.ndarray, v: np.ndarray) -> float:
    nu, nv = np.linalg.norm(u), np.linalg.norm(v)
    if nu == 0 or nv == 0:
        return math.pi
    return math.acos(max(-1.0, min(1.0, float(u @ v) / (nu * nv))))


def candidate_set(grid: TripleGrid | Sequence[Triple], x0, c: float = 5.0,
                  angle_tolerance: float = math.radians(15.0),
                  lower_multiplier: float | None = None) -> list[Triple]:
    """Triples in the annulus ``lower*h <= |t - x0| <= c*h`` pointing away from ``x0``.

    ``lower_multiplier`` defaults to ``2 sqrt(d)``; the direction ``s`` must
    be within ``angle_tolerance`` (radians) of ``t - x0``.
    """
    triples = grid.triples if isinstance(grid, TripleGrid) else tuple(grid)
    x0 = np.asarray(x0, dtype=float)
    if lower_multiplier is None:
        lower_multiplier = 2.0 * math.sqrt(len(x0))
    if not c > lower_multiplier:
        raise ValueError(f"c={c} must exceed the lower annulus multiplier {lower_multiplier}")
    if not angle_tolerance > 0:
        raise ValueError("angle tolerance must be positive")
    out = []
    for tr in triples:
        off = np.asarray(tr.t) - x0
        dist = float(np.linalg.norm(off))
        if not lower_multiplier * tr.h - 1e-12 <= dist <= c * tr.h + 1e-12:
            continue
        if _angle(off, np.asarray(tr.s)) <= angle_tolerance + 1e-12:
            out.append(tr)
    return out


def mode_threshold(n: int, d: int, r: float, C: float = 1.0) -> float:
    """Smallest scale ``C (log n / n)^{1/(d+2r+4)}`` covered by the detection guarantee."""
    return C * (math.log(n) / n) ** (1.0 / (d + 2 * r + 4))


@dataclass(frozen=True)
class ModeReport:
    candidate: tuple[float, ...]
    candidate_set: tuple[Triple, ...]
    detected: bool
    decisions: tuple[str, ...]
    reason: str = ""
    scales_above_threshold: tuple[float, ...] = ()


def detect_modes(sample: Sample | None, grid: TripleGrid, error=None, alpha: float = 0.05,
                 candidates="auto", *, report: DecisionReport | None = None, c: float = 5.0,
                 angle_tolerance: float = math.radians(15.0), lower_multiplier: float | None = None,
                 C: float = 1.0, seed: int = 0, **options) -> list[ModeReport]:
    """Declare a mode at each candidate whose outward decrease tests all reject.

    A precomputed ``report`` on ``grid`` may be passed to avoid rerunning
    the tests (for example with calibrated critical values).
    """
    if report is None:
        report = run_multiscale_test(sample, grid, error, alpha, seed, **options)
    if candidates == "auto":
        candidates = grid.locations()
    index = {(tr.s, tr.t, tr.h): j for j, tr in enumerate(report.triples)}
    n = report.metadata.get("n", sample.n if sample is not None else None)
    r = report.statistics[0].r if report.statistics else 2.0
    d = grid.dim
    if C == 1.0:
        log.debug("mode threshold constant C=1; the guarantee needs C sufficiently large")
    thr = mode_threshold(n, d, r, C) if n else 0.0
    out = []
    for x0 in candidates:
        cset = candidate_set(grid, x0, c, angle_tolerance, lower_multiplier)
        decs = tuple(report.decisions[index[(tr.s, tr.t, tr.h)]] for tr in cset)
        above = tuple(sorted({tr.h for tr in cset if tr.h >= thr}))
        if not cset:
            out.append(ModeReport(tuple(float(v) for v in x0), (), False, (), "empty candidate set", above))
            continue
        detected = all(dc == Decision.REJECT_DECR for dc in decs)
        reason = "" if detected else "not all outward decrease hypotheses rejected"
        out.append(ModeReport(tuple(float(v) for v in x0), tuple(cset), detected, decs, reason, above))
    return out


def mode_reports_to_csv(reports: Iterable[ModeReport], d: int) -> str:
    buf = io.StringIO()
    wr = csv.writer(buf, lineterminator="\n")
    wr.writerow([f"x{i+1}" for i in range(d)] +
                ["detected", "reason", "n_triples", "triples", "scales_above_threshold"])
    for rep in reports:
        trip = ";".join("(" + " ".join(repr(v) for v in tr.t) + "|" +
                        " ".join(repr(v) for v in tr.s) + f"|{tr.h!r})" for tr in rep.candidate_set)
        wr.writerow([repr(v) for v in rep.candidate] +
                    [str(rep.detected).lower(), rep.reason, len(rep.candidate_set), trip,
                     ";".join(repr(h) for h in rep.scales_above_threshold)])
    return buf.getvalue()


# ---------------------------------------------------------------------------
# Monotonicity maps
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Arrow:
    t: tuple[float, ...]
    s: tuple[float, ...]
    h: float
    statistic: float
    critical: float
    decision: str


@dataclass(frozen=True)
class ArrowMap:
    arrows: tuple[Arrow, ...]
    box: tuple[tuple[float, ...], tuple[float, ...]]
    dim: int
    arrow_scale: float = 0.3

    def __len__(self) -> int:
        return len(self.arrows)

    def to_csv(self) -> str:
        d = self.dim
        buf = io.StringIO()
        wr = csv.writer(buf, lineterminator="\n")
        wr.writerow([f"t{i+1}" for i in range(d)] + [f"s{i+1}" for i in range(d)] +
                    ["h", "statistic", "critical", "decision"])
        for a in self.arrows:
            wr.writerow([repr(v) for v in a.t] + [repr(v) for v in a.s] +
                        [repr(a.h), repr(a.statistic), repr(a.critical), a.decision])
        return buf.getvalue()

    def to_svg(self, size: int = 480, margin: int = 50, header: str = "") -> str:
        """Deterministic SVG rendering: axes with ticks, one arrow per rejection."""
        if self.dim != 2:
            raise ValueError("vector-graphic maps are drawn for d = 2 only")
        (x0, y0), (x1, y1) = self.box
        pad = max(self.arrows[0].h if self.arrows else 0.5, 0.5)
        x0, y0, x1, y1 = x0 - pad, y0 - pad, x1 + pad, y1 + pad
        span = max(x1 - x0, y1 - y0)
        scale = (size - 2 * margin) / span

        def px(x, y):
            return margin + (x - x0) * scale, size - margin - (y - y0) * scale

        lines = ['<?xml version="1.0" encoding="UTF-8"?>']
        if header:
            lines.append("<!--\n" + header.replace("--", "- -") + "\n-->")
        lines += [
            f'<svg xmlns="http://www.w3.org/2000/svg" width="{size}" height="{size}" '
            f'viewBox="0 0 {size} {size}">',
            '<defs><marker id="head" markerWidth="8" markerHeight="8" refX="6" refY="3" '
            'orient="auto"><path d="M0,0 L6,3 L0,6 z" fill="black"/></marker></defs>',
            '<rect width="100%" height="100%" fill="white"/>',
        ]
        ax0, ay0 = px(x0, y0)
        ax1, _ = px(x1, y0)
        _, ay1 = px(x0, y1)
        lines.append(f'<line x1="{ax0:.2f}" y1="{ay0:.2f}" x2="{ax1:.2f}" y2="{ay0:.2f}" stroke="black"/>')
        lines.append(f'<line x1="{ax0:.2f}" y1="{ay0:.2f}" x2="{ax0:.2f}" y2="{ay1:.2f}" stroke="black"/>')
        for v in np.arange(math.ceil(x0), math.floor(x1) + 1):
            tx, ty = px(v, y0)
            lines.append(f'<line x1="{tx:.2f}" y1="{ty:.2f}" x2="{tx:.2f}" y2="{ty + 5:.2f}" stroke="black"/>')
            lines.append(f'<text x="{tx:.2f}" y="{ty + 18:.2f}" font-size="11" text-anchor="middle">{v:g}</text>')
        for v in np.arange(math.ceil(y0), math.floor(y1) + 1):
            tx, ty = px(x0, v)
            lines.append(f'<line x1="{tx - 5:.2f}" y1="{ty:.2f}" x2="{tx:.2f}" y2="{ty:.2f}" stroke="black"/>')
            lines.append(f'<text x="{tx - 8:.2f}" y="{ty + 4:.2f}" font-size="11" text-anchor="end">{v:g}</text>')
        lines.append(f'<text x="{(ax0 + ax1) / 2:.2f}" y="{size - 8}" font-size="12" text-anchor="middle">x1</text>')
        lines.append(f'<text x="12" y="{(ay0 + ay1) / 2:.2f}" font-size="12" text-anchor="middle">x2</text>')
        for a in self.arrows:
            length = self.arrow_scale * a.h
            sx, sy = px(*a.t)
            ex, ey = px(a.t[0] + length * a.s[0], a.t[1] + length * a.s[1])
            lines.append(f'<circle cx="{sx:.2f}" cy="{sy:.2f}" r="2" fill="black"/>')
            lines.append(f'<line x1="{sx:.2f}" y1="{sy:.2f}" x2="{ex:.2f}" y2="{ey:.2f}" '
                         'stroke="black" stroke-width="1.5" marker-end="url(#head)"/>')
        lines.append("</svg>")
        return "\n".join(lines) + "\n"


def monotonicity_map(report: DecisionReport, box=None, arrow_scale: float = 0.3) -> ArrowMap:
    """One arrow per rejected increase hypothesis, pointing in its direction.

    Rejecting the increase hypothesis at ``(s, t, h)`` is the same event as
    rejecting the decrease hypothesis at ``(-s, t, h)``; only the former is
    listed so each finding appears once.
    """
    if not report.symmetric:
        raise ValueError("monotonicity maps need a symmetric triple set "
                         "(every direction paired with its negation)")
    d = report.triples[0].dim if report.triples else 2
    arrows = []
    for st, c, dec in zip(report.statistics, report.critical, report.decisions):
        if dec == Decision.REJECT_INCR:
            tr = st.triple
            arrows.append(Arrow(tr.t, tr.s, tr.h, st.statistic, float(c), dec))
    if box is None:
        pts = np.array([tr.t for tr in report.triples]) if report.triples else np.zeros((1, d))
        box = (tuple(pts.min(axis=0)), tuple(pts.max(axis=0)))
    return ArrowMap(tuple(arrows), (tuple(box[0]), tuple(box[1])), d, arrow_scale)
