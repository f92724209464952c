"""Command-line entry point.

Every run is described by one YAML file plus flag overrides.  Each output
file starts with ``#`` comment lines holding the seed and the fully
resolved configuration, so any result can be regenerated from its header.
"""

from __future__ import annotations

import argparse
import dataclasses
import logging
import math
import os
import sys
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Any

import numpy as np
import yaml

from .estimator import Sample, SampleFormatError, read_sample_csv
from .inference import (MultiscaleTest, TripleGrid, build_grid, detect_modes, mode_reports_to_csv,
                        monotonicity_map)
from .kernel import KernelConfigurationError, LaplaceError, Triple, laplace_as_spectral, make_quartic_kernel, \
    make_smooth_kernel
from .limit import CalibrationError, all_exceed, any_exceeds_abs, calibrate_quantiles
from .simulate import PUBLISHED_TABLES, Mixture, Normal, Scenario, Uniform, reproduce_table, sample_scenario

log = logging.getLogger("msdeconv")

OUTPUT_ENV = "MSDECONV_OUTPUT_DIR"
DEFAULT_OUTPUT = "msdeconv-out"
COMMANDS = ("test", "modes", "map", "calibrate", "reproduce", "simulate")


class ConfigError(ValueError):
    """Invalid configuration; ``field`` names the offending entry."""

    def __init__(self, field_name: str, message: str):
        super().__init__(f"{field_name}: {message}")
        self.field = field_name


# ---------------------------------------------------------------------------
# Configuration
# ---------------------------------------------------------------------------


@dataclass
class ErrorConfig:
    family: str = "laplace"
    sigma: float = 0.075


@dataclass
class GridConfig:
    box: list | None = None
    scales: list = field(default_factory=list)
    directions: Any = 4
    symmetric: bool = False
    width: float | None = None
    triples: list | None = None


@dataclass
class TestConfig:
    kappa_reps: int = 1000
    kernel: str = "quartic"
    bandwidth: float | None = None
    floor: float = 1e-4
    gamma: float = 1.0


@dataclass
class ModesConfig:
    candidates: Any = "auto"
    c: float = 5.0
    angle_deg: float = 15.0
    lower: float | None = None
    replications: int = 0


@dataclass
class CalibrateConfig:
    reps: int = 2000
    n: int | None = None
    null_box: list | None = None
    rule: str = "all"


@dataclass
class ReproduceConfig:
    table: int = 2
    reps: int | None = None
    calibration_reps: int = 2000


@dataclass
class SimulateConfig:
    signal: dict = field(default_factory=lambda: {"law": "normal", "mean": [0.0, 0.0], "cov": [[1, 0], [0, 1]]})
    n: int = 1000


@dataclass
class RunConfig:
    seed: int = 0
    alpha: float = 0.05
    threads: int = 1
    verbosity: int = 0
    input: str | None = None
    output_dir: str | None = None
    error: ErrorConfig = field(default_factory=ErrorConfig)
    grid: GridConfig = field(default_factory=GridConfig)
    test: TestConfig = field(default_factory=TestConfig)
    modes: ModesConfig = field(default_factory=ModesConfig)
    calibrate: CalibrateConfig = field(default_factory=CalibrateConfig)
    reproduce: ReproduceConfig = field(default_factory=ReproduceConfig)
    simulate: SimulateConfig = field(default_factory=SimulateConfig)

    @classmethod
    def from_dict(cls, data: dict | None) -> "RunConfig":
        data = dict(data or {})
        kwargs = {}
        for f in dataclasses.fields(cls):
            if f.name not in data:
                continue
            val = data.pop(f.name)
            sub = f.default_factory if f.default_factory is not dataclasses.MISSING else None
            if sub is not None and dataclasses.is_dataclass(sub):
                if val is None:
                    val = {}
                if not isinstance(val, dict):
                    raise ConfigError(f.name, "expected a mapping")
                names = {g.name for g in dataclasses.fields(sub)}
                extra = set(val) - names
                if extra:
                    raise ConfigError(f"{f.name}.{sorted(extra)[0]}", "unknown key")
                val = sub(**val)
            kwargs[f.name] = val
        if data:
            raise ConfigError(sorted(data)[0], "unknown key")
        return cls(**kwargs)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def dump(self) -> str:
        return yaml.safe_dump(self.to_dict(), sort_keys=True, default_flow_style=None)

    @classmethod
    def parse(cls, text: str) -> "RunConfig":
        try:
            data = yaml.safe_load(text)
        except yaml.YAMLError as exc:
            raise ConfigError("config", f"not valid YAML: {exc}") from None
        if data is not None and not isinstance(data, dict):
            raise ConfigError("config", "top level must be a mapping")
        return cls.from_dict(data)


def _resource(name: str) -> Path:
    return Path(str(resources.files("msdeconv") / "data" / name))


def resolve_path(name_or_path: str) -> Path:
    """``demo:NAME`` refers to files bundled with the package."""
    if name_or_path.startswith("demo:"):
        name = name_or_path[5:]
        for cand in (name, name + ".yaml", name + ".csv"):
            p = _resource(cand)
            if p.exists():
                return p
        raise ConfigError("input", f"no bundled demo file named {name!r}")
    return Path(name_or_path)


def load_config(path: str | None) -> RunConfig:
    if path is None:
        return RunConfig()
    p = resolve_path(path)
    if not p.exists():
        raise ConfigError("config", f"file not found: {p}")
    return RunConfig.parse(p.read_text())


def _positive(name: str, value, integer: bool = False, allow_none: bool = False):
    if value is None and allow_none:
        return
    ok = isinstance(value, (int, float)) and not isinstance(value, bool) and math.isfinite(value) and value > 0
    if integer:
        ok = ok and float(value).is_integer()
    if not ok:
        raise ConfigError(name, f"must be a positive {'integer' if integer else 'number'}, got {value!r}")


def validate(cfg: RunConfig, command: str) -> None:
    """Check every numeric parameter before any heavy work starts."""
    if not isinstance(cfg.seed, int) or isinstance(cfg.seed, bool) or cfg.seed < 0:
        raise ConfigError("seed", f"must be a nonnegative integer, got {cfg.seed!r}")
    if not isinstance(cfg.alpha, (int, float)) or not 0 < cfg.alpha < 1:
        raise ConfigError("alpha", f"must lie in (0, 1), got {cfg.alpha!r}")
    _positive("threads", cfg.threads, integer=True)
    if command in ("test", "modes", "map", "calibrate"):
        if cfg.error.family not in ("laplace", "laplace-spectral"):
            raise ConfigError("error.family", f"unknown family {cfg.error.family!r}")
        if not isinstance(cfg.error.sigma, (int, float)) or cfg.error.sigma < 0:
            raise ConfigError("error.sigma", f"must be nonnegative, got {cfg.error.sigma!r}")
        _validate_grid(cfg.grid)
        _positive("test.kappa_reps", cfg.test.kappa_reps, integer=True)
        if cfg.test.kappa_reps < 100:
            raise ConfigError("test.kappa_reps", "at least 100 replications are required")
        if cfg.test.kernel not in ("quartic", "smooth"):
            raise ConfigError("test.kernel", f"unknown kernel {cfg.test.kernel!r}")
        _positive("test.bandwidth", cfg.test.bandwidth, allow_none=True)
        _positive("test.floor", cfg.test.floor)
        g = cfg.test.gamma
        if not isinstance(g, (int, float)) or not 0 < g <= 1:
            raise ConfigError("test.gamma", f"must lie in (0, 1], got {g!r}")
    if command in ("test", "map") or (command == "modes" and not cfg.modes.replications):
        if not cfg.input:
            raise ConfigError("input", "an input CSV is required")
    if command == "modes":
        m = cfg.modes
        lower = 2 * math.sqrt(_grid_dim(cfg.grid)) if m.lower is None else m.lower
        _positive("modes.c", m.c)
        _positive("modes.angle_deg", m.angle_deg)
        if not m.c > lower:
            raise ConfigError("modes.c", f"must exceed the lower annulus multiplier {lower:g}")
        if not (m.candidates == "auto" or isinstance(m.candidates, list)):
            raise ConfigError("modes.candidates", "must be 'auto' or a list of points")
        if not isinstance(m.replications, int) or m.replications < 0:
            raise ConfigError("modes.replications", "must be a nonnegative integer")
    if command == "calibrate":
        c = cfg.calibrate
        _positive("calibrate.reps", c.reps, integer=True)
        if c.reps < 500:
            raise ConfigError("calibrate.reps", "calibration needs at least 500 replications")
        _positive("calibrate.n", c.n, integer=True, allow_none=True)
        if c.n is None and not cfg.input:
            raise ConfigError("calibrate.n", "give n or an input CSV to take it from")
        if c.rule not in ("all", "any"):
            raise ConfigError("calibrate.rule", f"must be 'all' or 'any', got {c.rule!r}")
        if c.null_box is not None:
            _validate_box("calibrate.null_box", c.null_box)
    if command == "reproduce":
        r = cfg.reproduce
        if r.table not in PUBLISHED_TABLES:
            raise ConfigError("reproduce.table", f"unknown table id {r.table!r}; expected 1-8")
        _positive("reproduce.reps", r.reps, integer=True, allow_none=True)
        _positive("reproduce.calibration_reps", r.calibration_reps, integer=True)
        if r.table != 1 and r.calibration_reps < 500:
            raise ConfigError("reproduce.calibration_reps", "calibration needs at least 500 replications")
    if command in ("simulate",) or (command == "modes" and cfg.modes.replications):
        _positive("simulate.n", cfg.simulate.n, integer=True)
        _signal_law(cfg.simulate.signal)


def _validate_box(name: str, box) -> None:
    try:
        lo, hi = np.asarray(box[0], dtype=float), np.asarray(box[1], dtype=float)
    except (TypeError, ValueError, IndexError):
        raise ConfigError(name, "must be [[lo...], [hi...]]") from None
    if lo.shape != hi.shape or lo.ndim != 1 or np.any(hi < lo) or not np.all(np.isfinite([lo, hi])):
        raise ConfigError(name, f"invalid box {box!r}")


def _grid_dim(g: GridConfig) -> int:
    if g.triples:
        return len(g.triples[0]["t"])
    return len(g.box[0]) if g.box else 2


def _validate_grid(g: GridConfig) -> None:
    if g.triples:
        for i, tr in enumerate(g.triples):
            try:
                Triple(tr["s"], tr["t"], tr["h"])
            except (KeyError, TypeError, ValueError) as exc:
                raise ConfigError(f"grid.triples[{i}]", str(exc)) from None
            if not 0 < tr["h"] <= 1:
                raise ConfigError(f"grid.triples[{i}].h", "must lie in (0, 1]")
        return
    if not g.scales:
        raise ConfigError("grid.scales", "the grid is empty; give at least one scale or explicit triples")
    for h in g.scales:
        if not isinstance(h, (int, float)) or not 0 < h <= 1:
            raise ConfigError("grid.scales", f"scales must lie in (0, 1], got {h!r}")
    if g.box is None:
        raise ConfigError("grid.box", "a location box is required")
    _validate_box("grid.box", g.box)
    _positive("grid.width", g.width, allow_none=True)
    if isinstance(g.directions, int):
        _positive("grid.directions", g.directions, integer=True)
    elif not isinstance(g.directions, list) or not g.directions:
        raise ConfigError("grid.directions", "must be a count or a nonempty list of vectors")


def _signal_law(law_cfg: dict):
    if not isinstance(law_cfg, dict) or "law" not in law_cfg:
        raise ConfigError("simulate.signal", "must be a mapping with a 'law' key")
    law = law_cfg["law"]
    try:
        if law == "uniform":
            return Uniform(tuple(law_cfg["box"][0]), tuple(law_cfg["box"][1]))
        if law == "normal":
            return Normal(tuple(law_cfg["mean"]), np.asarray(law_cfg.get("cov", np.eye(len(law_cfg["mean"])))))
        if law == "mixture":
            comps = tuple(_signal_law(c) for c in law_cfg["components"])
            return Mixture(comps, tuple(law_cfg["weights"]))
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError("simulate.signal", str(exc)) from None
    raise ConfigError("simulate.signal.law", f"unknown law {law!r}")


# ---------------------------------------------------------------------------
# Building blocks
# ---------------------------------------------------------------------------


def _grid(cfg: RunConfig, n: int | None) -> TripleGrid:
    g = cfg.grid
    if g.triples:
        triples = tuple(Triple(tr["s"], tr["t"], tr["h"]) for tr in g.triples)
        pts = np.array([tr.t for tr in triples])
        box = (tuple(pts.min(axis=0)), tuple(pts.max(axis=0)))
        scales = tuple(sorted({tr.h for tr in triples}))
        grid = TripleGrid(triples, box, scales, {}, g.symmetric)
        return dataclasses.replace(grid, symmetric=grid.is_symmetric())
    return build_grid(g.box, g.scales, g.directions, symmetric=g.symmetric, n=n, width=g.width)


def _error(cfg: RunConfig):
    err = LaplaceError(float(cfg.error.sigma), _grid_dim(cfg.grid))
    return laplace_as_spectral(err) if cfg.error.family == "laplace-spectral" else err


def _test(cfg: RunConfig, grid: TripleGrid, n: int) -> MultiscaleTest:
    kernel = make_quartic_kernel(grid.dim) if cfg.test.kernel == "quartic" else make_smooth_kernel(grid.dim)
    return MultiscaleTest(grid.triples, _error(cfg), n, cfg.alpha, kappa_reps=cfg.test.kappa_reps,
                          seed=cfg.seed, test_kernel=kernel, bandwidth=cfg.test.bandwidth,
                          floor=cfg.test.floor, symmetric=grid.is_symmetric())


def _read_input(cfg: RunConfig) -> Sample:
    p = resolve_path(cfg.input)
    if not p.exists():
        raise ConfigError("input", f"file not found: {p}")
    return read_sample_csv(p)


class OutputDir:
    """Writes confined to one directory; every file gets the provenance header."""

    def __init__(self, root: str | Path, cfg: RunConfig, command: str):
        self.root = Path(root).resolve()
        self.root.mkdir(parents=True, exist_ok=True)
        self.header = self._header(cfg, command)
        self.written: list[Path] = []

    @staticmethod
    def _header(cfg: RunConfig, command: str) -> str:
        lines = [f"msdeconv {command}", f"seed: {cfg.seed}", "config:"]
        lines += ["  " + ln for ln in cfg.dump().splitlines()]
        return "\n".join(lines)

    def path(self, name: str) -> Path:
        p = (self.root / name).resolve()
        if p.parent != self.root:
            raise ValueError(f"refusing to write outside the output directory: {name}")
        return p

    def write(self, name: str, body: str, comment: str = "# ") -> Path:
        p = self.path(name)
        head = "".join(comment + ln + "\n" for ln in self.header.splitlines())
        p.write_text(head + body)
        self.written.append(p)
        return p

    def write_raw(self, name: str, body: str) -> Path:
        p = self.path(name)
        p.write_text(body)
        self.written.append(p)
        return p


def output_root(cfg: RunConfig) -> str:
    return cfg.output_dir or os.environ.get(OUTPUT_ENV) or DEFAULT_OUTPUT


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------


def _quantile_report(test: MultiscaleTest, gamma: float) -> str:
    q = test.quantile
    return (f"alpha,kappa_n,replications,seed,empirical_cdf_at_kappa,gamma,p\n"
            f"{q.alpha!r},{q.kappa!r},{q.replications},{q.seed},{q.empirical_cdf_at_kappa!r},{gamma!r},"
            f"{test.model.p}\n")


def cmd_test(cfg: RunConfig, out: OutputDir) -> int:
    sample = _read_input(cfg)
    grid = _grid(cfg, sample.n)
    test = _test(cfg, grid, sample.n)
    report = test.report(sample, cfg.test.gamma)
    out.write("decisions.csv", report.to_csv())
    out.write("quantile.csv", _quantile_report(test, cfg.test.gamma))
    rej = len(report.rejections())
    print(f"{len(report.decisions)} triples, {rej} rejections, kappa_n = {test.kappa_n:.6g}")
    return 0


def _mode_kwargs(cfg: RunConfig) -> dict:
    m = cfg.modes
    return dict(candidates=m.candidates, c=m.c, angle_tolerance=math.radians(m.angle_deg),
                lower_multiplier=m.lower)


def cmd_modes(cfg: RunConfig, out: OutputDir) -> int:
    if cfg.modes.replications:
        return _modes_replicated(cfg, out)
    sample = _read_input(cfg)
    grid = _grid(cfg, sample.n)
    test = _test(cfg, grid, sample.n)
    report = test.report(sample, cfg.test.gamma)
    reps = detect_modes(sample, grid, report=report, **_mode_kwargs(cfg))
    out.write("modes.csv", mode_reports_to_csv(reps, grid.dim))
    out.write("quantile.csv", _quantile_report(test, cfg.test.gamma))
    print(f"{len(reps)} candidates, {sum(r.detected for r in reps)} detected")
    return 0


def _modes_replicated(cfg: RunConfig, out: OutputDir) -> int:
    """Detection frequency per candidate over simulated datasets."""
    from .limit import replication_rng

    law = _signal_law(cfg.simulate.signal)
    n = cfg.simulate.n
    grid = _grid(cfg, n)
    test = _test(cfg, grid, n)
    sc = Scenario(law, LaplaceError(float(cfg.error.sigma), grid.dim), n)
    counts: dict[tuple, int] = {}
    order: list[tuple] = []
    R = cfg.modes.replications
    for i in range(R):
        sample = sample_scenario(sc, replication_rng(cfg.seed, 21, i))
        report = test.report(sample, cfg.test.gamma)
        for rep in detect_modes(sample, grid, report=report, **_mode_kwargs(cfg)):
            if rep.candidate not in counts:
                counts[rep.candidate] = 0
                order.append(rep.candidate)
            counts[rep.candidate] += rep.detected
    d = grid.dim
    lines = [",".join([f"x{i + 1}" for i in range(d)] + ["detected_pct", "se_pct", "reps"])]
    for cand in order:
        p = counts[cand] / R
        lines.append(",".join([repr(v) for v in cand] +
                              [f"{100 * p:.6g}", f"{100 * math.sqrt(p * (1 - p) / R):.6g}", str(R)]))
        print(f"candidate {cand}: detected in {100 * p:.1f}% of {R} replications")
    out.write("modes_replicated.csv", "\n".join(lines) + "\n")
    return 0


def cmd_map(cfg: RunConfig, out: OutputDir) -> int:
    sample = _read_input(cfg)
    grid = _grid(cfg, sample.n)
    if not grid.is_symmetric():
        raise ConfigError("grid.symmetric", "monotonicity maps need every direction paired with its negation")
    test = _test(cfg, grid, sample.n)
    report = test.report(sample, cfg.test.gamma)
    amap = monotonicity_map(report, grid.box)
    out.write("map.csv", amap.to_csv())
    out.write_raw("map.svg", amap.to_svg(header=out.header))
    print(f"{len(amap)} arrows")
    return 0


def cmd_calibrate(cfg: RunConfig, out: OutputDir) -> int:
    c = cfg.calibrate
    n = c.n if c.n is not None else _read_input(cfg).n
    grid = _grid(cfg, n)
    test = _test(cfg, grid, n)
    if c.null_box is not None:
        lo, hi = c.null_box
    else:
        # kernel support boxes t +- h, widened by twice the largest scale
        pts = np.array([tr.t for tr in grid.triples])
        pad = 3 * max(grid.scales)
        lo, hi = pts.min(axis=0) - pad, pts.max(axis=0) + pad
    sc = Scenario(Uniform(tuple(map(float, lo)), tuple(map(float, hi))),
                  LaplaceError(float(cfg.error.sigma), grid.dim), n)
    rule = all_exceed if c.rule == "all" else any_exceeds_abs
    res = calibrate_quantiles(test.model, test, lambda rng: sample_scenario(sc, rng), cfg.alpha, c.reps,
                              cfg.seed, rule=rule)
    body = ["gamma,level,alpha,reps,seed", f"{res.gamma!r},{res.level!r},{res.alpha!r},{res.reps},{res.seed}"]
    out.write("calibration.csv", "\n".join(body) + "\n")
    curve = ["gamma,level"] + [f"{g!r},{lv!r}" for g, lv in res.level_curve]
    out.write("level_curve.csv", "\n".join(curve) + "\n")
    print(f"gamma = {res.gamma:.6g}, calibrated level = {res.level:.4f}")
    return 0


def cmd_reproduce(cfg: RunConfig, out: OutputDir) -> int:
    r = cfg.reproduce
    res = reproduce_table(r.table, r.reps, cfg.seed, calibration_reps=r.calibration_reps, threads=cfg.threads)
    out.write(f"table{r.table}.csv", res.to_csv())
    print(f"table {r.table} ({res.wall_seconds:.1f} s); {'; '.join(res.notes)}")
    for row, ok, tol in res.comparison():
        verdict = "n/a" if ok is None else ("PASS" if ok else "FAIL")
        published = "" if row.published is None else f"published {row.published:g} +- {tol:.3g}"
        print(f"  {row.label:<28} {row.estimate:9.4g} (se {row.se:.3g})  {published}  {verdict}")
    return 0


def cmd_simulate(cfg: RunConfig, out: OutputDir) -> int:
    law = _signal_law(cfg.simulate.signal)
    sc = Scenario(law, LaplaceError(float(cfg.error.sigma), law.dim), cfg.simulate.n, seed=cfg.seed)
    sample = sample_scenario(sc, np.random.default_rng(cfg.seed))
    lines = [",".join(f"y{i + 1}" for i in range(sample.d))]
    lines += [",".join(repr(float(v)) for v in row) for row in sample.observations]
    out.write("sample.csv", "\n".join(lines) + "\n")
    print(f"wrote {sample.n} observations")
    return 0


HANDLERS = {"test": cmd_test, "modes": cmd_modes, "map": cmd_map, "calibrate": cmd_calibrate,
            "reproduce": cmd_reproduce, "simulate": cmd_simulate}


# ---------------------------------------------------------------------------
# Argument parsing
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("-c", "--config", help="YAML run configuration (or demo:NAME for a bundled one)")
    common.add_argument("-i", "--input", help="observation CSV (or demo:NAME)")
    common.add_argument("-o", "--output-dir", help=f"output directory (default ${OUTPUT_ENV} or ./{DEFAULT_OUTPUT})")
    common.add_argument("--seed", type=int, help="root seed for all randomness")
    common.add_argument("--reps", type=int, help="main replication count of the subcommand")
    common.add_argument("--alpha", type=float, help="nominal level")
    common.add_argument("--threads", type=int, help="maximum worker threads")
    common.add_argument("-v", "--verbose", action="count", default=None, help="more logging")
    common.add_argument("--dump-config", action="store_true", help="print the resolved configuration and exit")

    parser = argparse.ArgumentParser(prog="msdeconv", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("test", parents=[common], help="all one-sided tests on a triple grid")
    sub.add_parser("modes", parents=[common], help="local mode detection")
    sub.add_parser("map", parents=[common], help="monotonicity arrow map (CSV and SVG)")
    sub.add_parser("calibrate", parents=[common], help="calibrate critical values under a flat null")
    p = sub.add_parser("reproduce", parents=[common], help="re-run a published simulation table")
    p.add_argument("table", type=int, nargs="?", help="table id 1-8")
    p.add_argument("--calibration-reps", type=int)
    p = sub.add_parser("simulate", parents=[common], help="draw one dataset from a scenario")
    p.add_argument("-n", type=int, help="sample size")
    return parser


def resolve_config(args: argparse.Namespace) -> RunConfig:
    cfg = load_config(args.config)
    for name in ("seed", "alpha", "threads", "input", "output_dir"):
        val = getattr(args, name, None)
        if val is not None:
            setattr(cfg, name, val)
    if args.verbose is not None:
        cfg.verbosity = args.verbose
    if args.reps is not None:
        target = {"test": (cfg.test, "kappa_reps"), "map": (cfg.test, "kappa_reps"),
                  "modes": (cfg.modes, "replications"), "calibrate": (cfg.calibrate, "reps"),
                  "reproduce": (cfg.reproduce, "reps"), "simulate": (cfg.simulate, "n")}[args.command]
        setattr(target[0], target[1], args.reps)
    if args.command == "reproduce":
        if args.table is not None:
            cfg.reproduce.table = args.table
        if args.calibration_reps is not None:
            cfg.reproduce.calibration_reps = args.calibration_reps
    if args.command == "simulate" and args.n is not None:
        cfg.simulate.n = args.n
    return cfg


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = resolve_config(args)
        validate(cfg, args.command)
    except (ConfigError, TypeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    logging.basicConfig(level=logging.WARNING - 10 * min(cfg.verbosity, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    if args.dump_config:
        sys.stdout.write(cfg.dump())
        return 0
    try:
        out = OutputDir(output_root(cfg), cfg, args.command)
        status = HANDLERS[args.command](cfg, out)
    except (ConfigError, SampleFormatError, KernelConfigurationError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (CalibrationError, ArithmeticError, np.linalg.LinAlgError, ValueError, OSError) as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return 1
    for p in out.written:
        log.info("wrote %s", p)
    return status


if __name__ == "__main__":
    sys.exit(main())
