import math

import numpy as np
import pytest

from msdeconv.estimator import Sample
from msdeconv.inference import (Decision, MultiscaleTest, build_grid, candidate_set, decide, detect_modes,
                                mode_reports_to_csv, monotonicity_map, run_multiscale_test, unit_directions)
from msdeconv.kernel import LaplaceError, Triple
from msdeconv.simulate import FLAT_NULL, STANDARD_NORMAL, TRIMODAL, mode_triples, sample_laplace_noise

ERR = LaplaceError(0.075)


def noisy(law, n, seed, sigma=0.075):
    rng = np.random.default_rng(seed)
    return Sample(law.sample(n, rng) + sample_laplace_noise(sigma, n, 2, rng))


def test_grid_layout_counts():
    g = build_grid(([-1, -1], [2, 2]), [0.5], list(unit_directions(4)), width=1.0)
    assert len(g.locations()) == 16 and len(g) == 64
    unit = build_grid(([0, 0], [1, 1]), [0.5], [(1.0, 0.0)])
    assert len(unit.locations()) == 9 and len(unit) == 9


def test_symmetric_flag_idempotent():
    dirs = unit_directions(4)
    plain = build_grid(([0, 0], [1, 1]), [0.5], dirs)
    sym = build_grid(([0, 0], [1, 1]), [0.5], dirs, symmetric=True)
    assert len(plain) == len(sym) and sym.is_symmetric()
    half = build_grid(([0, 0], [1, 1]), [0.5], [(1.0, 1.0)], symmetric=True)
    assert len(half) == 18 and half.is_symmetric()


def test_grid_validation_and_warnings():
    with pytest.raises(ValueError):
        build_grid(([0, 0], [1, 1]), [], [(1.0, 0.0)])
    with pytest.raises(ValueError):
        build_grid(([0, 0], [1, 1]), [0.5], [])
    with pytest.raises(ValueError):
        build_grid(([0, 0], [1, 1]), [1.5], [(1.0, 0.0)])
    g = build_grid(([0, 0], [1, 1]), [0.01], [(1.0, 0.0)], n=100, width=0.5)
    assert g.warnings


def test_decide_rules():
    assert decide(-2.0, 1.0) == Decision.REJECT_INCR
    assert decide(2.0, 1.0) == Decision.REJECT_DECR
    assert decide(0.5, 1.0) == Decision.RETAIN
    assert decide(1.0, 1.0) == Decision.RETAIN


def test_report_consistency_and_negation_duality():
    triples = mode_triples((0.0, 0.0), 0.5)
    triples = triples + [tr.negated() for tr in triples]
    rep = run_multiscale_test(noisy(STANDARD_NORMAL, 1000, 1), triples, ERR, kappa_reps=500)
    assert rep.decisions == rep.recomputed_decisions()
    np.testing.assert_array_equal(rep.T[:4], -rep.T[4:])
    np.testing.assert_array_equal(rep.critical[:4], rep.critical[4:])
    flip = {Decision.REJECT_INCR: Decision.REJECT_DECR, Decision.REJECT_DECR: Decision.REJECT_INCR,
            Decision.RETAIN: Decision.RETAIN}
    assert rep.decisions[4:] == tuple(flip[dc] for dc in rep.decisions[:4])
    assert all(c > 0 for c in rep.critical)


def test_mass_outside_supports_gives_no_rejections():
    obs = np.random.default_rng(2).uniform(10, 11, size=(500, 2))
    rep = run_multiscale_test(Sample(obs), mode_triples((0.0, 0.0), 0.5), ERR, kappa_reps=200)
    assert np.all(rep.T == 0.0)
    assert all(dc == Decision.RETAIN for dc in rep.decisions)


def test_smaller_alpha_rejects_less():
    triples = build_grid(([-1, -1], [1, 1]), [0.5], 4, symmetric=True).triples
    s = noisy(STANDARD_NORMAL, 1000, 3)
    a = run_multiscale_test(s, triples, ERR, 0.10, kappa_reps=500)
    b = run_multiscale_test(s, triples, ERR, 0.01, kappa_reps=500)
    assert np.all(b.critical >= a.critical)
    assert set(b.rejections()) <= set(a.rejections())


def test_report_requires_matching_n():
    test = MultiscaleTest(mode_triples((0.0, 0.0), 0.5), ERR, 100, kappa_reps=200)
    with pytest.raises(ValueError):
        test.report(noisy(STANDARD_NORMAL, 101, 0))
    with pytest.raises(ValueError):
        MultiscaleTest([], ERR, 100)


def _flat_null_rejection_rate(triples, two_sided, n=1000, reps=500, seed=4):
    test = MultiscaleTest(triples, ERR, n, 0.05, kappa_reps=1000)
    hits = 0
    for i in range(reps):
        T, crit = test(noisy(FLAT_NULL, n, [seed, i]))
        hits += bool(np.any((np.abs(T) if two_sided else T) > crit))
    return hits / reps


def test_family_wise_error_on_flat_null():
    # the four outward decrease tests of the single-mode layout
    rate = _flat_null_rejection_rate(mode_triples((0.0, 0.0), 0.5), two_sided=False)
    assert rate <= 0.05 + 2 * math.sqrt(0.05 * 0.95 / 500)


@pytest.mark.xfail(strict=True, reason="two-sided family is anti-conservative at n=1000 (see decisions ledger)")
def test_family_wise_error_both_rules_flat_null():
    rate = _flat_null_rejection_rate(mode_triples((0.0, 0.0), 0.5), two_sided=True)
    assert rate <= 0.05 + 2 * math.sqrt(0.05 * 0.95 / 500)


def test_candidate_set_single_mode_layout_and_annulus():
    grid = mode_triples((0.0, 0.0), 0.5)
    assert candidate_set(grid, (0.0, 0.0), c=5, angle_tolerance=1e-6) == []
    chosen = candidate_set(grid, (0.0, 0.0), c=5, angle_tolerance=1e-6, lower_multiplier=2.0)
    assert chosen == grid
    assert candidate_set(grid, (20.0, 20.0), c=5, lower_multiplier=2.0) == []
    with pytest.raises(ValueError):
        candidate_set(grid, (0.0, 0.0), c=2.0)


def test_candidate_set_predicates_rechecked():
    grid = build_grid(([0, 0], [1, 1]), [0.1], 16)
    x0 = np.array([0.5, 0.5])
    tol = math.radians(15)
    chosen = candidate_set(grid, x0, 5.0, tol)
    assert chosen
    lower = 2 * math.sqrt(2)
    for tr in grid.triples:
        off = np.asarray(tr.t) - x0
        dist = np.linalg.norm(off)
        cosang = off @ np.asarray(tr.s) / dist if dist > 0 else -1.0
        ok = lower * tr.h - 1e-12 <= dist <= 5 * tr.h + 1e-12 and cosang >= math.cos(tol) - 1e-12
        assert ok == (tr in chosen)


def test_detect_modes_auto_rows_and_empty_reason():
    grid = build_grid(([-1, -1], [2, 2]), [0.5], 4, width=1.0)
    s = noisy(STANDARD_NORMAL, 500, 5)
    reps = detect_modes(s, grid, ERR, candidates="auto", kappa_reps=200)
    assert len(reps) == 16
    empty = [r for r in reps if not r.candidate_set]
    assert all(not r.detected and r.reason == "empty candidate set" for r in empty)
    text = mode_reports_to_csv(reps, 2)
    assert len(text.strip().splitlines()) == 17


def test_detect_modes_all_reject_rule():
    grid = build_grid(([-1, -1], [1, 1]), [0.5], 4, width=1.0)
    s = noisy(STANDARD_NORMAL, 4000, 6)
    rep = run_multiscale_test(s, grid, ERR, kappa_reps=500)
    out = detect_modes(None, grid, report=rep, candidates=[(0.0, 0.0)], lower_multiplier=2.0)[0]
    assert len(out.candidate_set) == 4
    assert out.detected == all(dc == Decision.REJECT_DECR for dc in out.decisions)


@pytest.mark.xfail(strict=True, reason="uncalibrated power at n=4000 is about 91% here (see decisions ledger)")
def test_uncalibrated_power_n4000():
    test = MultiscaleTest(mode_triples((0.0, 0.0), 0.5), ERR, 4000, kappa_reps=1000)
    hits = []
    for i in range(200):
        T, crit = test(noisy(STANDARD_NORMAL, 4000, [7, i]))
        hits.append(bool(np.all(T > crit)))
    assert np.mean(hits) >= 0.99


@pytest.fixture(scope="module")
def trimodal_report():
    grid = build_grid(([-1, -1], [2, 2]), [0.5], [(1.0, 1.0), (-1.0, 1.0)], symmetric=True, width=1.0)
    return run_multiscale_test(noisy(TRIMODAL, 4000, 8), grid, ERR, kappa_reps=1000)


def test_monotonicity_map_points_towards_modes(trimodal_report):
    amap = monotonicity_map(trimodal_report, ((-1, -1), (2, 2)))
    assert len(amap) > 0
    modes = np.array([c.mean for c in TRIMODAL.components])
    for a in amap.arrows:
        assert a.decision == Decision.REJECT_INCR
        toward = (modes - np.asarray(a.t)) @ np.asarray(a.s)
        assert np.max(toward) > 0
    for m in modes:
        assert any(np.max(np.abs(np.asarray(a.t) - m)) <= 1.0 and (m - np.asarray(a.t)) @ np.asarray(a.s) > 0
                   for a in amap.arrows)


def test_map_svg_deterministic_and_empty(trimodal_report):
    amap = monotonicity_map(trimodal_report, ((-1, -1), (2, 2)))
    assert amap.to_svg() == amap.to_svg()
    assert amap.to_svg().count("marker-end") == len(amap)
    triples = [Triple((1.0, 0.0), (0.0, 0.0), 0.5), Triple((-1.0, 0.0), (0.0, 0.0), 0.5)]
    rep = run_multiscale_test(Sample(np.full((50, 2), 9.0)), triples, ERR, kappa_reps=200)
    rep = type(rep)(rep.statistics, rep.critical, rep.decisions, rep.alpha, rep.kappa_n, rep.gamma, True)
    svg = monotonicity_map(rep, ((-1, -1), (1, 1))).to_svg()
    assert "<line" in svg and "marker-end" not in svg


def test_map_refuses_asymmetric_report():
    rep = run_multiscale_test(noisy(STANDARD_NORMAL, 200, 9), mode_triples((0.0, 0.0), 0.5), ERR, kappa_reps=200)
    with pytest.raises(ValueError):
        monotonicity_map(rep)


def test_decision_csv_has_row_per_triple(trimodal_report):
    lines = trimodal_report.to_csv().strip().splitlines()
    assert len([ln for ln in lines if not ln.startswith("#")]) == len(trimodal_report.triples) + 1
