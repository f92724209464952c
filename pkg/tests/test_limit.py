import numpy as np
import pytest
from scipy import stats

from msdeconv.estimator import Sample
from msdeconv.kernel import Triple, kernel_inner_product, make_deconv_kernel_laplace, make_quartic_kernel
from msdeconv.limit import (CalibrationError, LimitModel, all_exceed, build_limit_model, calibrate_quantiles,
                            simulate_kappa, simulate_maxima)

K = make_quartic_kernel(2)


def model_for(triples, sigma=0.075):
    kernels = [make_deconv_kernel_laplace(K, tr, sigma) for tr in triples]
    return build_limit_model(triples, kernels), kernels


def four_triples(h=0.5):
    return [Triple(s, s, h) for s in ((1.0, 0.0), (0.0, 1.0), (-1.0, 0.0), (0.0, -1.0))]


def overlapping_triples():
    return [Triple((1.0, 0.0), (0.0, 0.0), 0.5), Triple((0.6, 0.8), (0.3, 0.1), 0.4),
            Triple((0.0, 1.0), (-0.2, 0.3), 0.25), Triple((-0.8, 0.6), (0.1, -0.2), 0.5)]


def test_single_triple_correlation():
    m, _ = model_for([Triple((1.0, 0.0), (0.0, 0.0), 0.5)])
    np.testing.assert_array_equal(m.correlation, [[1.0]])


def test_disjoint_supports_uncorrelated():
    m, _ = model_for([Triple((1.0, 0.0), (0.0, 0.0), 0.5), Triple((1.0, 0.0), (3.0, 0.0), 0.5)])
    assert m.correlation[0, 1] == 0.0


def test_negated_direction_fully_anticorrelated():
    tr = Triple((0.6, 0.8), (0.0, 0.0), 0.5)
    m, _ = model_for([tr, tr.negated()])
    assert m.correlation[0, 1] == pytest.approx(-1.0, abs=1e-12)
    assert np.all(np.isfinite(m.cholesky_factor))


def test_correlation_entries_match_inner_products():
    triples = overlapping_triples()
    m, kernels = model_for(triples, 0.3)
    for j in range(4):
        assert m.correlation[j, j] == 1.0
        for k in range(4):
            ref = kernel_inner_product(kernels[j], kernels[k]) / np.sqrt(
                kernel_inner_product(kernels[j], kernels[j]) * kernel_inner_product(kernels[k], kernels[k]))
            assert m.correlation[j, k] == pytest.approx(ref, abs=1e-8)
    assert np.all(np.abs(m.correlation) <= 1 + 1e-10)
    assert np.min(np.linalg.eigvalsh(m.correlation)) > -1e-10


def test_kappa_half_normal_quantile():
    tr = Triple((1.0, 0.0), (0.0, 0.0), 1.0)
    m, _ = model_for([tr])
    q = simulate_kappa(m, 0.05, reps=10_000, seed=3)
    assert q.kappa == pytest.approx(stats.norm.ppf(0.975), abs=0.1)
    assert q.empirical_cdf_at_kappa >= 0.95


def test_kappa_order_in_alpha_and_determinism():
    m, _ = model_for(four_triples())
    a = simulate_kappa(m, 0.05, reps=1000, seed=9)
    b = simulate_kappa(m, 0.01, reps=1000, seed=9)
    assert b.kappa >= a.kappa
    assert simulate_kappa(m, 0.05, reps=1000, seed=9).kappa == a.kappa
    np.testing.assert_array_equal(simulate_maxima(m, 200, 4), simulate_maxima(m, 200, 4))


def test_kappa_validation():
    m, _ = model_for(four_triples())
    with pytest.raises(ValueError):
        simulate_kappa(m, 0.05, reps=50)
    with pytest.raises(ValueError):
        simulate_kappa(m, 1.5)


def test_symmetric_set_leaves_maximum_unchanged():
    triples = four_triples()
    m, _ = model_for(triples)
    sym, _ = model_for(triples + [tr.negated() for tr in triples])
    # couple the draws: the negated copies are exact sign flips of the originals
    rng = np.random.default_rng(0)
    z = rng.standard_normal((5000, 4))
    x = z @ m.cholesky_factor.T
    base = np.max(m.w * (np.abs(x) - m.w_tilde), axis=1)
    xs = np.hstack([x, -x])
    doubled = np.max(sym.w * (np.abs(xs) - sym.w_tilde), axis=1)
    np.testing.assert_allclose(doubled, base, rtol=0, atol=1e-12)
    k1 = simulate_kappa(m, 0.05, 4000, 1).kappa
    k2 = simulate_kappa(sym, 0.05, 4000, 1).kappa
    assert abs(k1 - k2) < 0.1


def test_permutation_exchangeability():
    triples = overlapping_triples()
    perm = [2, 0, 3, 1]
    m, _ = model_for(triples)
    mp, _ = model_for([triples[i] for i in perm])
    np.testing.assert_allclose(mp.correlation, m.correlation[np.ix_(perm, perm)], atol=1e-14)
    # matched-permutation seeding: the same Gaussian vector, reordered
    rng = np.random.default_rng(5)
    g = rng.multivariate_normal(np.zeros(4), m.correlation, size=4000, method="eigh")
    a = np.max(m.w * (np.abs(g) - m.w_tilde), axis=1)
    b = np.max(mp.w * (np.abs(g[:, perm]) - mp.w_tilde), axis=1)
    np.testing.assert_array_equal(np.sort(a), np.sort(b))
    assert abs(simulate_kappa(m, 0.05, 4000, 2).kappa - simulate_kappa(mp, 0.05, 4000, 2).kappa) < 0.1


def _toy_pipeline():
    """Four independent N(0,1) statistics with unit critical values."""
    def sampler(rng):
        return Sample(rng.standard_normal((1, 4)))

    def pipeline(sample):
        return sample.observations[0], np.full(4, 1.0)
    return pipeline, sampler


def test_calibration_toy_model():
    pipeline, sampler = _toy_pipeline()
    res = calibrate_quantiles(None, pipeline, sampler, 0.05, reps=2000, seed=0)
    # P(all four N(0,1) > c) = 0.05 at c = Phi^{-1}(1 - 0.05^{1/4})
    c = stats.norm.ppf(1 - 0.05 ** 0.25)
    assert res.gamma == pytest.approx(c, abs=0.06)
    assert abs(res.level - 0.05) <= 0.005
    levels = [lv for _, lv in res.level_curve]
    assert levels == sorted(levels, reverse=True)


def test_calibration_gamma_one_is_uncalibrated():
    pipeline, sampler = _toy_pipeline()
    res = calibrate_quantiles(None, pipeline, sampler, 0.05, reps=500, seed=1)
    assert res.level_curve[-1][0] == 1.0
    assert res.level_curve[-1][1] == np.mean([all_exceed(*pipeline(sampler(np.random.default_rng([1, i]))))
                                              for i in range(500)])


def test_calibration_reports_anticonservative_start():
    def sampler(rng):
        return Sample(rng.standard_normal((1, 4)) + 3.0)

    def pipeline(sample):
        return sample.observations[0], np.full(4, 1.0)
    with pytest.raises(CalibrationError) as info:
        calibrate_quantiles(None, pipeline, sampler, 0.05, reps=500)
    assert len(info.value.level_curve) == 20


def test_calibration_needs_enough_reps():
    pipeline, sampler = _toy_pipeline()
    with pytest.raises(ValueError):
        calibrate_quantiles(None, pipeline, sampler, 0.05, reps=100)


def test_limit_model_is_immutable():
    m, _ = model_for(four_triples())
    assert isinstance(m, LimitModel)
    with pytest.raises(Exception):
        m.w = None
