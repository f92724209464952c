import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from msdeconv.estimator import (Sample, SampleFormatError, compute_V, critical_value, expected_statistic_oracle,
                                pilot_density, read_sample_csv, test_statistic, weights)
from msdeconv.kernel import Triple, kernel_inner_product, make_deconv_kernel_laplace, make_quartic_kernel, \
    make_smooth_kernel
from msdeconv.simulate import STANDARD_NORMAL, sample_laplace_noise

K = make_quartic_kernel(2)


def kernel(s=(1.0, 0.0), t=(0.0, 0.0), h=0.5, sigma=0.075, k=K):
    return make_deconv_kernel_laplace(k, Triple(s, t, h), sigma)


def test_sample_validation():
    with pytest.raises(ValueError):
        Sample(np.array([[1.0, np.nan]]))
    with pytest.raises(ValueError):
        Sample(np.zeros((0, 2)))
    s = Sample([[1.0, 2.0], [3.0, 4.0]])
    assert (s.n, s.d) == (2, 2)
    with pytest.raises(ValueError):
        s.observations[0, 0] = 5.0


def test_read_csv_header_and_comments(tmp_path):
    p = tmp_path / "y.csv"
    p.write_text("# produced elsewhere\ny1,y2\n0.5,0.25\n-1,2e-1\n")
    s = read_sample_csv(p)
    np.testing.assert_array_equal(s.observations, [[0.5, 0.25], [-1.0, 0.2]])


def test_read_csv_reports_line_numbers(tmp_path):
    p = tmp_path / "bad.csv"
    p.write_text("y1,y2\n0.5,0.25\n1.0\n")
    with pytest.raises(SampleFormatError) as info:
        read_sample_csv(p)
    assert info.value.line == 3
    p.write_text("0.5,0.25\n1.0,abc\n")
    with pytest.raises(SampleFormatError) as info:
        read_sample_csv(p)
    assert info.value.line == 2
    p.write_text("0.5,inf\n")
    with pytest.raises(SampleFormatError):
        read_sample_csv(p)


def test_statistic_single_observation():
    F = kernel(t=(0.0, 0.0), h=1.0, sigma=0.0)
    assert test_statistic(Sample([[0.5, 0.5]]), F) == pytest.approx(-0.183105468750, abs=1e-14)


def test_statistic_zero_outside_support():
    obs = np.random.default_rng(0).uniform(3, 4, size=(100, 2))
    assert test_statistic(Sample(obs), kernel()) == 0.0


def test_statistic_dimension_mismatch():
    with pytest.raises(ValueError):
        test_statistic(Sample(np.zeros((3, 3))), kernel())


def test_statistic_flat_density_has_mean_zero():
    rng = np.random.default_rng(11)
    n = 100_000
    y = rng.uniform(-2.5, 2.5, size=(n, 2)) + sample_laplace_noise(0.075, n, 2, rng)
    F = kernel(s=(0.6, 0.8), t=(0.7, -1.1), h=0.5)
    vals = F(y)
    assert abs(vals.mean()) < 3 * vals.std(ddof=1) / math.sqrt(n)


@settings(max_examples=30, deadline=None)
@given(split=st.integers(1, 49), seed=st.integers(0, 10_000))
def test_statistic_linear_in_sample(split, seed):
    obs = np.random.default_rng(seed).normal(size=(50, 2)) * 0.5
    F = kernel()
    a, b = Sample(obs[:split]), Sample(obs[split:])
    whole = test_statistic(a.concat(b), F)
    parts = (split * test_statistic(a, F) + (50 - split) * test_statistic(b, F)) / 50
    assert whole == pytest.approx(parts, rel=1e-12, abs=1e-15)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 10_000), angle=st.floats(0, 2 * math.pi))
def test_statistic_direction_antisymmetry(seed, angle):
    obs = Sample(np.random.default_rng(seed).normal(size=(200, 2)) * 0.4)
    s = (math.cos(angle), math.sin(angle))
    assert test_statistic(obs, kernel(s=s)) == -test_statistic(obs, kernel(s=(-s[0], -s[1])))


def test_oracle_constant_density_is_zero():
    tr = Triple((0.6, 0.8), (0.3, 0.2), 0.5)
    assert abs(expected_statistic_oracle(lambda x: np.full(len(x), 0.04), K, tr)) < 1e-15


def test_oracle_normal_signs_and_reflection():
    right = expected_statistic_oracle(STANDARD_NORMAL.density, K, Triple((1.0, 0.0), (1.0, 0.0), 0.5))
    left = expected_statistic_oracle(STANDARD_NORMAL.density, K, Triple((1.0, 0.0), (-1.0, 0.0), 0.5))
    assert right > 0
    assert left == pytest.approx(-right, rel=1e-12)


def test_oracle_matches_integration_by_parts():
    # int f d_s phi_{t,h} = -int (d_s f) phi_{t,h}, the right side by a fine midpoint rule
    tr = Triple((1.0, 0.0), (1.0, 0.0), 0.5)
    m = 800
    g = -1 + (np.arange(m) + 0.5) * 2 / m
    U, W = np.meshgrid(g, g)
    u = np.column_stack([U.ravel(), W.ravel()])
    x = np.asarray(tr.t) + tr.h * u
    dsf = -x[:, 0] * STANDARD_NORMAL.density(x)
    rhs = -np.sum(dsf * K(u) / tr.h**2) * tr.h**2 * (2 / m) ** 2
    assert expected_statistic_oracle(STANDARD_NORMAL.density, K, tr) == pytest.approx(rhs, rel=1e-5)


def test_unbiasedness_desk_scale():
    tr = Triple((1.0, 0.0), (1.0, 0.0), 0.5)
    F = make_deconv_kernel_laplace(K, tr, 0.075)
    rng = np.random.default_rng(12)
    stats = []
    for _ in range(200):
        y = rng.standard_normal((500, 2)) + sample_laplace_noise(0.075, 500, 2, rng)
        stats.append(test_statistic(Sample(y), F))
    stats = np.array(stats)
    mu = expected_statistic_oracle(STANDARD_NORMAL.density, K, tr)
    assert abs(stats.mean() - mu) <= 3 * stats.std(ddof=1) / math.sqrt(len(stats))


def test_pointwise_quartic_kernel_bias_grows_with_sigma():
    # The closed form drops the boundary layer created by the jump of the
    # quartic's gradient; at sigma = 0.3, h = 0.5 the statistic loses its signal.
    tr = Triple((1.0, 0.0), (1.0, 0.0), 0.5)
    rng = np.random.default_rng(13)
    n = 1_000_000
    y = rng.standard_normal((n, 2)) + sample_laplace_noise(0.3, n, 2, rng)
    for k, biased in ((K, True), (make_smooth_kernel(2, 6), False)):
        vals = make_deconv_kernel_laplace(k, tr, 0.3)(y)
        se = vals.std() / math.sqrt(n)
        gap = abs(vals.mean() - expected_statistic_oracle(STANDARD_NORMAL.density, k, tr))
        assert bool(gap > 10 * se) is biased


def test_compute_V_definition_and_invariances():
    F = kernel(h=0.4)
    assert compute_V(F) == pytest.approx(0.4 ** 4 * math.sqrt(kernel_inner_product(F, F)), rel=1e-8)
    assert compute_V(kernel(t=(1.3, -2.2), h=0.4)) == pytest.approx(compute_V(F), rel=1e-10)
    assert compute_V(kernel(s=(-1.0, 0.0), h=0.4)) == pytest.approx(compute_V(F), rel=1e-12)


@pytest.mark.xfail(strict=True, reason="ratio is about 4.7 at sigma=0.075 (see decisions ledger)")
def test_compute_V_scaling_ratio_published_sigma():
    r = compute_V(kernel(h=0.4)) / compute_V(kernel(h=0.2))
    assert 0.5 < r < 2


def test_weights_examples():
    w, wt = weights(1.0, 2)
    assert w == pytest.approx(1.0, abs=1e-15) and wt == 0.0
    assert weights(0.5, 2)[1] == pytest.approx(1.6651092223153954, abs=1e-14)
    with pytest.raises(ValueError):
        weights(0.0, 2)
    with pytest.raises(ValueError):
        weights(1.5, 2)


def test_weight_squared_ratio_monotone_near_zero():
    hs = np.linspace(0.01, 0.2, 20)
    w = np.array([weights(h, 2)[0] for h in hs])
    assert np.all(np.diff(w) <= 0)


def test_critical_value_formula_and_monotonicity():
    g, V, h, n, kn = 0.1, 0.25, 0.5, 1000, 1.2
    w, wt = weights(h, 2)
    expected = math.sqrt(g) * V / math.sqrt(n) * h ** -4 * (kn / w + wt)
    assert critical_value(g, V, h, 2, 2.0, kn, n) == pytest.approx(expected, rel=1e-15)
    base = critical_value(g, V, h, 2, 2.0, kn, n)
    assert critical_value(g, V, h, 2, 2.0, kn + 0.1, n) > base
    assert critical_value(g * 1.1, V, h, 2, 2.0, kn, n) > base
    assert critical_value(g, V * 1.1, h, 2, 2.0, kn, n) > base
    with pytest.raises(ValueError):
        critical_value(0.0, V, h, 2, 2.0, kn, n)


def test_pilot_density_uniform():
    rng = np.random.default_rng(14)
    s = Sample(rng.uniform(-2.5, 2.5, size=(100_000, 2)))
    g = pilot_density(s, bandwidth=0.3)
    assert g([[0.0, 0.0]])[0] == pytest.approx(0.04, abs=0.005)
    assert g([[50.0, 50.0]])[0] == g.floor
    m = 64
    ax = -4 + (np.arange(m) + 0.5) * 8 / m
    X, Y = np.meshgrid(ax, ax)
    vals = g.raw(np.column_stack([X.ravel(), Y.ravel()]))
    assert np.sum(vals) * (8 / m) ** 2 == pytest.approx(1.0, abs=0.02)


def test_pilot_density_validation():
    with pytest.raises(ValueError):
        pilot_density(Sample([[0.0, 0.0]]))
    with pytest.raises(ValueError):
        pilot_density(Sample(np.zeros((3, 2)) + [[0, 0], [1, 1], [2, 0]]), bandwidth=0.0)
