"""Data generation and the Monte Carlo runner for the published simulation tables."""

from __future__ import annotations

import csv
import io
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .estimator import Sample
from .kernel import LaplaceError, TestKernel, Triple
from .limit import all_exceed, calibrate_quantiles, replication_rng
from .inference import MultiscaleTest

__all__ = [
    "Uniform",
    "Normal",
    "Mixture",
    "Scenario",
    "TableRow",
    "TableResult",
    "PUBLISHED_TABLES",
    "sample_laplace_noise",
    "sample_scenario",
    "mode_triples",
    "reproduce_table",
]


def sample_laplace_noise(sigma: float, n: int, d: int = 2, rng=None) -> np.ndarray:
    """Symmetric multivariate Laplace draws as ``sqrt(E) * sigma * G``.

    With ``E ~ Exp(1)`` and ``G ~ N(0, I_d)`` independent, the characteristic
    function is ``E exp(-E sigma^2 |y|^2 / 2) = 1 / (1 + sigma^2 |y|^2 / 2)``.
    """
    if sigma < 0:
        raise ValueError("sigma must be nonnegative")
    rng = np.random.default_rng(rng)
    if sigma == 0:
        return np.zeros((n, d))
    scale = np.sqrt(rng.standard_exponential(n))[:, None]
    return sigma * scale * rng.standard_normal((n, d))


@dataclass(frozen=True)
class Uniform:
    lo: tuple[float, ...]
    hi: tuple[float, ...]

    @property
    def dim(self) -> int:
        return len(self.lo)

    def sample(self, n: int, rng) -> np.ndarray:
        return rng.uniform(self.lo, self.hi, size=(n, self.dim))

    def density(self, x) -> np.ndarray:
        x = np.atleast_2d(x)
        inside = np.all((x >= self.lo) & (x <= self.hi), axis=1)
        return inside / float(np.prod(np.subtract(self.hi, self.lo)))


@dataclass(frozen=True, eq=False)
class Normal:
    mean: tuple[float, ...]
    cov: np.ndarray

    def __post_init__(self):
        cov = np.asarray(self.cov, dtype=float)
        cov = 0.5 * (cov + cov.T)
        if cov.shape != (len(self.mean),) * 2:
            raise ValueError("covariance shape does not match the mean")
        if np.min(np.linalg.eigvalsh(cov)) <= 0:
            raise ValueError(f"covariance is not positive definite after symmetrization: {cov.tolist()}")
        object.__setattr__(self, "cov", cov)
        object.__setattr__(self, "mean", tuple(float(v) for v in self.mean))

    @classmethod
    def isotropic(cls, mean, var: float = 1.0) -> "Normal":
        return cls(tuple(mean), var * np.eye(len(mean)))

    @property
    def dim(self) -> int:
        return len(self.mean)

    def sample(self, n: int, rng) -> np.ndarray:
        L = np.linalg.cholesky(self.cov)
        return np.asarray(self.mean) + rng.standard_normal((n, self.dim)) @ L.T

    def density(self, x) -> np.ndarray:
        x = np.atleast_2d(x) - np.asarray(self.mean)
        inv = np.linalg.inv(self.cov)
        q = np.einsum("ij,jk,ik->i", x, inv, x)
        return np.exp(-0.5 * q) / math.sqrt((2 * math.pi) ** self.dim * np.linalg.det(self.cov))


@dataclass(frozen=True)
class Mixture:
    components: tuple
    weights: tuple[float, ...]

    def __post_init__(self):
        w = tuple(float(v) for v in self.weights)
        if len(w) != len(self.components) or not w:
            raise ValueError("one weight per component is required")
        if min(w) <= 0 or abs(sum(w) - 1.0) > 1e-12:
            raise ValueError("mixture weights must be positive and sum to one")
        object.__setattr__(self, "weights", w)

    @property
    def dim(self) -> int:
        return self.components[0].dim

    def labels(self, n: int, rng) -> np.ndarray:
        return rng.choice(len(self.components), size=n, p=self.weights)

    def sample(self, n: int, rng) -> np.ndarray:
        lab = self.labels(n, rng)
        out = np.empty((n, self.dim))
        for k, comp in enumerate(self.components):
            idx = np.nonzero(lab == k)[0]
            out[idx] = comp.sample(len(idx), rng)
        return out

    def density(self, x) -> np.ndarray:
        return sum(w * c.density(x) for w, c in zip(self.weights, self.components))


@dataclass(frozen=True)
class Scenario:
    signal: object
    noise: LaplaceError
    n: int
    replications: int = 1000
    seed: int = 0


def sample_scenario(sc: Scenario, rng) -> Sample:
    """``Y = Z + eps`` with ``Z`` from the signal law and Laplace noise."""
    rng = np.random.default_rng(rng)
    z = sc.signal.sample(sc.n, rng)
    return Sample(z + sample_laplace_noise(sc.noise.sigma, sc.n, z.shape[1], rng))


# ---------------------------------------------------------------------------
# Published configurations
# ---------------------------------------------------------------------------

AXIS_DIRECTIONS = ((1.0, 0.0), (0.0, 1.0), (-1.0, 0.0), (0.0, -1.0))


def mode_triples(x0, h0: float, distance: float = 1.0) -> list[Triple]:
    """Four outward triples around ``x0``: ``s`` along the axes, ``t = x0 + distance * s``."""
    return [Triple(s, tuple(x + distance * v for x, v in zip(x0, s)), h0) for s in AXIS_DIRECTIONS]


def rotated_cov(eigenvalues: Sequence[float], angle: float = math.pi / 4) -> np.ndarray:
    c, s = math.cos(angle), math.sin(angle)
    Q = np.array([[c, -s], [s, c]])
    return Q @ np.diag(eigenvalues) @ Q.T


STANDARD_NORMAL = Normal.isotropic((0.0, 0.0))
FLAT_NULL = Uniform((-2.5, -2.5), (2.5, 2.5))
BIMODAL_NULL = Uniform((-2.5, -2.5), (5.5, 2.5))
SYMMETRIC_BIMODAL = Mixture((Normal.isotropic((0.0, 0.0)), Normal.isotropic((3.0, 0.0))), (0.5, 0.5))
ASYMMETRIC_BIMODAL = Mixture((Normal.isotropic((0.0, 0.0), 1.2), Normal.isotropic((3.2, 0.1), 0.8)),
                             (0.5, 0.5))
SIGMA1 = Normal((0.0, 0.0), rotated_cov((0.5, 1.0)))
SIGMA2 = Normal((0.0, 0.0), rotated_cov((0.5, 1.5)))
TRIMODAL = Mixture((Normal.isotropic((-0.4, -0.57), 0.2), Normal.isotropic((1.5, -0.6), 0.25),
                    Normal.isotropic((0.45, 1.6), 0.5)), (1 / 3, 1 / 3, 1 / 3))

# Published values (percent, except table 1).
PUBLISHED_TABLES: dict[int, dict[str, float]] = {
    1: {"n=500": 0.039, "n=1000": 0.044, "n=4000": 0.041},
    2: {"n=500 level": 0.3, "n=500 power": 39.4, "n=500 level (cal.)": 4.2, "n=500 power (cal.)": 74.7,
        "n=1000 level": 0.1, "n=1000 power": 71.1, "n=1000 level (cal.)": 4.0, "n=1000 power (cal.)": 93.3,
        "n=4000 level": 0.4, "n=4000 power": 99.9, "n=4000 level (cal.)": 3.1, "n=4000 power (cal.)": 100.0},
    3: {"n=1000 level": 0.1, "n=1000 power": 71.1, "n=1000 level (cal.)": 4.0, "n=1000 power (cal.)": 93.3},
    4: {"h0=0.3 level": 0.5, "h0=0.3 power": 7.8, "h0=0.3 level (cal.)": 4.6, "h0=0.3 power (cal.)": 35.3,
        "h0=0.4 level": 0.2, "h0=0.4 power": 29.6, "h0=0.4 level (cal.)": 4.5, "h0=0.4 power (cal.)": 71.7,
        "h0=0.5 level": 0.1, "h0=0.5 power": 71.7, "h0=0.5 level (cal.)": 4.0, "h0=0.5 power (cal.)": 93.3,
        "h0=0.6 level": 0.2, "h0=0.6 power": 95.3, "h0=0.6 level (cal.)": 4.8, "h0=0.6 power (cal.)": 99.5},
    5: {"sigma=0 level": 0.4, "sigma=0 power": 77.7, "sigma=0 level (cal.)": 4.7, "sigma=0 power (cal.)": 94.1,
        "sigma=0.075 level": 0.1, "sigma=0.075 power": 71.7, "sigma=0.075 level (cal.)": 4.0,
        "sigma=0.075 power (cal.)": 93.3,
        "sigma=0.15 level": 0.2, "sigma=0.15 power": 71.1, "sigma=0.15 level (cal.)": 3.6,
        "sigma=0.15 power (cal.)": 92.8,
        "sigma=0.3 level": 0.4, "sigma=0.3 power": 62.3, "sigma=0.3 level (cal.)": 3.8,
        "sigma=0.3 power (cal.)": 87.2,
        "sigma=1 level": 0.3, "sigma=1 power": 31.4, "sigma=1 level (cal.)": 4.5, "sigma=1 power (cal.)": 59.4},
    6: {"Sigma1 n=500 power": 78.5, "Sigma1 n=500 power (cal.)": 94.7,
        "Sigma1 n=1000 power": 96.7, "Sigma1 n=1000 power (cal.)": 99.3,
        "Sigma1 n=4000 power": 100.0, "Sigma1 n=4000 power (cal.)": 100.0,
        "Sigma2 n=500 power": 72.6, "Sigma2 n=500 power (cal.)": 92.6,
        "Sigma2 n=1000 power": 96.5, "Sigma2 n=1000 power (cal.)": 98.9,
        "Sigma2 n=4000 power": 100.0, "Sigma2 n=4000 power (cal.)": 100.0},
    7: {"n=500 power": 34.9, "n=500 power (cal.)": 70.8, "n=1000 power": 70.1, "n=1000 power (cal.)": 89.3,
        "n=4000 power": 99.9, "n=4000 power (cal.)": 100.0},
    8: {"n=500 level (cal.)": 5.3, "n=500 sym x1 (cal.)": 34.6, "n=500 sym x2 (cal.)": 33.0,
        "n=500 asym x1 (cal.)": 23.6, "n=500 asym x2 (cal.)": 48.5,
        "n=1000 level (cal.)": 5.2, "n=1000 sym x1 (cal.)": 48.7, "n=1000 sym x2 (cal.)": 49.9,
        "n=1000 asym x1 (cal.)": 39.0, "n=1000 asym x2 (cal.)": 72.9,
        "n=4000 level (cal.)": 4.2, "n=4000 sym x1 (cal.)": 84.4, "n=4000 sym x2 (cal.)": 81.7,
        "n=4000 asym x1 (cal.)": 76.1, "n=4000 asym x2 (cal.)": 97.1},
}


@dataclass(frozen=True)
class TableRow:
    label: str
    estimate: float
    se: float
    reps: int
    published: float | None = None
    compare_se: float | None = None

    def tolerance(self, k: float = 3.0, absolute: float | None = None) -> float:
        if absolute is not None:
            return absolute
        return k * (self.se if self.compare_se is None else self.compare_se)

    def passes(self, k: float = 3.0, absolute: float | None = None) -> bool | None:
        if self.published is None:
            return None
        return abs(self.estimate - self.published) <= self.tolerance(k, absolute) + 1e-12


@dataclass(frozen=True)
class TableResult:
    table: int
    rows: tuple[TableRow, ...]
    seed: int
    wall_seconds: float
    notes: tuple[str, ...] = ()

    def row(self, label: str) -> TableRow:
        for r in self.rows:
            if r.label == label:
                return r
        raise KeyError(label)

    def to_csv(self) -> str:
        buf = io.StringIO()
        wr = csv.writer(buf, lineterminator="\n")
        wr.writerow(["table", "row label", "estimate_pct", "se_pct", "reps", "seed", "wall_seconds"])
        for r in self.rows:
            wr.writerow([self.table, r.label, f"{r.estimate:.6g}", f"{r.se:.6g}", r.reps, self.seed,
                         f"{self.wall_seconds:.3f}"])
        return buf.getvalue()

    def comparison(self, k: float = 3.0) -> list[tuple[TableRow, bool | None, float]]:
        absolute = 0.005 if self.table == 1 else None
        return [(r, r.passes(k, absolute), r.tolerance(k, absolute)) for r in self.rows]


def binomial_row(label: str, hits: Sequence[bool], published: float | None) -> TableRow:
    """Percentage estimate with binomial SE ``sqrt(p(1-p)/reps)``.

    Comparisons with a published value use the larger of the SEs at the
    estimate and at the published proportion, floored at one success in
    ``reps``, so cells at 0 or 100 are not compared with zero tolerance.
    """
    reps = len(hits)
    p_hat = float(np.mean(hits))
    se = 100 * math.sqrt(p_hat * (1 - p_hat) / reps)
    p_ref = p_hat if published is None else published / 100.0
    var = max(p_hat * (1 - p_hat), p_ref * (1 - p_ref), (1.0 / reps) * (1 - 1.0 / reps))
    return TableRow(label, 100 * p_hat, se, reps, published, 100 * math.sqrt(var / reps))


# ---------------------------------------------------------------------------
# Monte Carlo cells
# ---------------------------------------------------------------------------


@dataclass
class ModeCell:
    """One configuration of the local mode test (one or more candidate groups)."""

    groups: list[list[Triple]]
    sigma: float
    n: int
    null_law: object
    seed: int
    kappa_reps: int = 1000
    calibration_reps: int = 2000
    alpha: float = 0.05
    test_kernel: TestKernel | None = None
    test: MultiscaleTest = field(init=False)

    def __post_init__(self):
        triples = [tr for g in self.groups for tr in g]
        self.test = MultiscaleTest(triples, LaplaceError(self.sigma), self.n, self.alpha,
                                   kappa_reps=self.kappa_reps, seed=self.seed, test_kernel=self.test_kernel)
        sizes = np.cumsum([0] + [len(g) for g in self.groups])
        self.slices = [slice(a, b) for a, b in zip(sizes[:-1], sizes[1:])]

    def detected(self, T: np.ndarray, crit: np.ndarray) -> list[bool]:
        return [all_exceed(T[sl], crit[sl]) for sl in self.slices]

    def any_detected(self, T: np.ndarray, crit: np.ndarray) -> bool:
        return any(self.detected(T, crit))

    def sampler(self, law) -> Callable:
        noise = LaplaceError(self.sigma)

        def draw(rng):
            return sample_scenario(Scenario(law, noise, self.n), rng)
        return draw

    def calibrate(self):
        return calibrate_quantiles(self.test.model, self.test, self.sampler(self.null_law), self.alpha,
                                   self.calibration_reps, self.seed + 1, rule=self.any_detected)

    def run(self, law, reps: int, stream: int) -> list[tuple[np.ndarray, np.ndarray]]:
        draw = self.sampler(law)
        return [self.test(draw(replication_rng(self.seed, stream, i))) for i in range(reps)]


def _cell_seed(seed: int, table: int, cell: int) -> int:
    return int(np.random.SeedSequence([seed, table, cell]).generate_state(1)[0])


def _mode_table_cell(label: str, published: dict, groups, sigma, n, null_law, alt_laws: dict, reps: int,
                     seed: int, calibration_reps: int, uncalibrated: bool = True,
                     level_label: str = "level", test_kernel: TestKernel | None = None) -> list[TableRow]:
    cell = ModeCell(groups, sigma, n, null_law, seed, calibration_reps=calibration_reps,
                    test_kernel=test_kernel)
    cal = cell.calibrate()
    rows = []
    null_stats = cell.run(null_law, reps, 11)
    if uncalibrated:
        key = f"{label} {level_label}"
        rows.append(binomial_row(key, [cell.any_detected(T, k) for T, k in null_stats], published.get(key)))
    key = f"{label} {level_label} (cal.)"
    rows.append(binomial_row(key, [cell.any_detected(T, cal.gamma * k) for T, k in null_stats],
                             published.get(key)))
    for j, (name, (law, group)) in enumerate(alt_laws.items()):
        stats = cell.run(law, reps, 12 + j)
        if uncalibrated:
            key = f"{label} {name}"
            rows.append(binomial_row(key, [cell.detected(T, k)[group] for T, k in stats], published.get(key)))
        key = f"{label} {name} (cal.)"
        rows.append(binomial_row(key, [cell.detected(T, cal.gamma * k)[group] for T, k in stats],
                                 published.get(key)))
    return rows


def _table1(reps: int, seed: int, test_kernel: TestKernel | None = None) -> tuple[list[TableRow], list[str]]:
    rows = []
    for i, n in enumerate((500, 1000, 4000)):
        cell_seed = _cell_seed(seed, 1, i)
        test = MultiscaleTest(mode_triples((0.0, 0.0), 0.5), LaplaceError(0.075), n, 0.05,
                              kappa_reps=1000, seed=cell_seed, test_kernel=test_kernel)
        draw = lambda rng: sample_scenario(Scenario(STANDARD_NORMAL, LaplaceError(0.075), n), rng)
        vals = np.array([math.sqrt(n) * test.critical_values(draw(replication_rng(cell_seed, 1, k)))[0]
                         for k in range(reps)])
        rows.append(TableRow(f"n={n}", float(vals.mean()), float(vals.std(ddof=1) / math.sqrt(reps)) if reps > 1
                             else 0.0, reps, PUBLISHED_TABLES[1][f"n={n}"]))
    return rows, ["sqrt(n) kappa_n^1(0.05); pilot density from standard-normal signal data"]


def _cells(table: int) -> list[tuple[str, dict]]:
    """Cell label and configuration for the mode-test tables."""
    std = {"power": (STANDARD_NORMAL, 0)}
    origin = [mode_triples((0.0, 0.0), 0.5)]
    if table in (2, 3):
        ns = (500, 1000, 4000) if table == 2 else (1000,)
        return [(f"n={n}", dict(groups=origin, sigma=0.075, n=n, null_law=FLAT_NULL, alt_laws=std)) for n in ns]
    if table == 4:
        return [(f"h0={h:g}", dict(groups=[mode_triples((0.0, 0.0), h)], sigma=0.075, n=1000,
                                   null_law=FLAT_NULL, alt_laws=std)) for h in (0.3, 0.4, 0.5, 0.6)]
    if table == 5:
        return [(f"sigma={s:g}", dict(groups=origin, sigma=s, n=1000, null_law=FLAT_NULL, alt_laws=std))
                for s in (0.0, 0.075, 0.15, 0.3, 1.0)]
    if table == 6:
        return [(f"{name} n={n}", dict(groups=origin, sigma=0.075, n=n, null_law=FLAT_NULL,
                                       alt_laws={"power": (law, 0)}, level=False))
                for name, law in (("Sigma1", SIGMA1), ("Sigma2", SIGMA2)) for n in (500, 1000, 4000)]
    if table == 7:
        return [(f"n={n}", dict(groups=[mode_triples((0.2, 0.2), 0.5)], sigma=0.075, n=n, null_law=FLAT_NULL,
                                alt_laws=std, level=False)) for n in (500, 1000, 4000)]
    if table == 8:
        groups = [mode_triples((0.0, 0.0), 0.5), mode_triples((3.0, 0.0), 0.5)]
        alts = {"sym x1": (SYMMETRIC_BIMODAL, 0), "sym x2": (SYMMETRIC_BIMODAL, 1),
                "asym x1": (ASYMMETRIC_BIMODAL, 0), "asym x2": (ASYMMETRIC_BIMODAL, 1)}
        return [(f"n={n}", dict(groups=groups, sigma=0.075, n=n, null_law=BIMODAL_NULL, alt_laws=alts,
                                uncal=False)) for n in (500, 1000, 4000)]
    raise ValueError(f"unknown table id {table}")


TABLE_NOTES = {
    2: "flat null Uniform([-2.5,2.5]^2); power under standard-normal signal; sigma=0.075, h0=0.5",
    3: "n=1000 row of table 2",
    4: "n=1000, sigma=0.075; locations fixed at distance 1 from the origin",
    5: "n=1000, h0=0.5",
    6: "covariances replaced by SPD matrices with eigenvalues (0.5,1) and (0.5,1.5), eigenvectors at 45 degrees",
    7: "candidate (0.2,0.2); triples at candidate + s",
    8: "calibrated on 'either mode detected' under Uniform([-2.5,5.5]x[-2.5,2.5])",
}


def reproduce_table(table: int, reps: int | None = None, seed: int = 0, *, calibration_reps: int = 2000,
                    threads: int = 1, test_kernel: TestKernel | None = None,
                    cells: Sequence[str] | None = None) -> TableResult:
    """Re-run one published table; every estimate carries a Monte Carlo SE.

    ``test_kernel`` defaults to the quartic product kernel of the published
    study.  ``cells`` restricts the run to configurations with these labels
    (for example ``["n=1000"]``); cell seeds do not depend on the selection.
    """
    if table not in PUBLISHED_TABLES:
        raise ValueError(f"unknown table id {table}; expected one of {sorted(PUBLISHED_TABLES)}")
    start = time.perf_counter()
    if table == 1:
        rows, notes = _table1(reps or 100, seed, test_kernel)
        return TableResult(1, tuple(rows), seed, time.perf_counter() - start, tuple(notes))
    reps = reps or 1000
    published = PUBLISHED_TABLES[table]

    def one(item):
        idx, (label, cfg) = item
        alt = dict(cfg["alt_laws"])
        return _mode_table_cell(label, published, cfg["groups"], cfg["sigma"], cfg["n"], cfg["null_law"], alt,
                                reps, _cell_seed(seed, table, idx), calibration_reps,
                                uncalibrated=cfg.get("uncal", True), test_kernel=test_kernel)

    items = list(enumerate(_cells(table)))
    if cells is not None:
        known = {label for _, (label, _) in items}
        missing = set(cells) - known
        if missing:
            raise ValueError(f"unknown cells {sorted(missing)} for table {table}; known: {sorted(known)}")
        items = [it for it in items if it[1][0] in cells]
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            chunks = list(pool.map(one, items))
    else:
        chunks = [one(it) for it in items]
    rows = [r for chunk in chunks for r in chunk]
    if table in (6, 7):
        rows = [r for r in rows if "level" not in r.label]
    return TableResult(table, tuple(rows), seed, time.perf_counter() - start, (TABLE_NOTES[table],))
