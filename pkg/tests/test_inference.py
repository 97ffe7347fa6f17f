import math

import numpy as np
import pytest
from scipy import stats

from conftest import random_population
from loora.design import Assignment, CompleteDesign, SimpleDesign, draw_with
from loora.estimators import (
    LambdaRule,
    Method,
    ObservedSample,
    estimate_loora_dm,
    estimate_loora_ht,
)
from loora.exceptions import InvalidInput
from loora.inference import (
    confidence_interval,
    estimate_with_ci,
    hw_variance_dm,
    hw_variance_ht,
    hw_variance_ht_sandwich,
    normal_quantile,
)
from loora.oracle import Population, observed_sample

AUTO2 = LambdaRule.auto(2.0)


def simple_sample(x, y, d, p):
    p = np.asarray(p, dtype=np.float64)
    d = np.asarray(d, dtype=np.float64)
    q = p * d + (1.0 - p) * (1.0 - d)
    return ObservedSample(
        np.asarray(x, dtype=np.float64), y, Assignment(d, 2 * d - 1, q), SimpleDesign(p)
    )


def complete_sample(x, y, d):
    d = np.asarray(d, dtype=np.float64)
    spec = CompleteDesign(len(d), int(d.sum()))
    return ObservedSample(np.asarray(x, dtype=np.float64), y, Assignment(d, 2 * d - 1), spec)


# --- normal quantile and intervals -------------------------------------------


def test_normal_quantile_against_scipy_grid():
    grid = np.concatenate(
        [
            np.array([5e-4, 1e-3, 0.0228, 0.0243, 0.3, 0.5, 0.6, 0.975, 0.999, 0.9995]),
            np.linspace(0.001, 0.999, 211),
        ]
    )
    for p in grid:
        assert abs(normal_quantile(float(p)) - stats.norm.ppf(p)) < 1e-9


def test_normal_quantile_rejects_boundary():
    for bad in (0.0, 1.0, -0.1, 1.1):
        with pytest.raises(InvalidInput):
            normal_quantile(bad)


def test_confidence_interval_degenerate():
    assert confidence_interval(1.25, 0.0, 0.95) == (1.25, 1.25)


def test_confidence_interval_hand_quantiles():
    low, high = confidence_interval(0.0, 1.0, 0.95)
    assert high == pytest.approx(1.959964, abs=1e-5)
    assert low == pytest.approx(-1.959964, abs=1e-5)
    low, high = confidence_interval(0.0, 1.0, 0.6826895)
    assert high == pytest.approx(1.0, abs=1e-4)


def test_confidence_interval_width_scales_with_sqrt_variance():
    _, h1 = confidence_interval(0.0, 1.0, 0.9)
    _, h4 = confidence_interval(0.0, 4.0, 0.9)
    assert h4 == pytest.approx(2.0 * h1, rel=1e-12)
    with pytest.raises(InvalidInput):
        confidence_interval(0.0, -1.0, 0.9)
    with pytest.raises(InvalidInput):
        confidence_interval(0.0, 1.0, 1.0)


# --- HT-side HC0 --------------------------------------------------------------


def test_hw_ht_zero_residuals_for_exact_null_linear_model(rng):
    n, k = 10, 2
    x = rng.standard_normal((n, k))
    slope = rng.standard_normal(k)
    y_both = x @ slope
    pop = Population(x, y_both, y_both.copy())
    spec = SimpleDesign(np.full(n, 0.5))
    s = observed_sample(pop, draw_with(spec, rng), spec)
    assert hw_variance_ht(s, LambdaRule.fixed(0.0)) == pytest.approx(0.0, abs=1e-20)


def test_hw_ht_hand_arithmetic():
    # with a null covariate and p = 1/2, residuals are (1, 1) by construction
    s = simple_sample(np.zeros((2, 1)), [1.0, 0.0], [1, 0], [0.5, 0.5])
    assert hw_variance_ht(s, LambdaRule.fixed(1.0)) == pytest.approx(0.5, abs=1e-14)


def test_hw_ht_sandwich_equals_simplified(rng):
    for _ in range(10):
        n = int(rng.integers(5, 20))
        pop = random_population(rng, n, 2)
        spec = SimpleDesign(rng.uniform(0.3, 0.7, n))
        s = observed_sample(pop, draw_with(spec, rng), spec)
        simple = hw_variance_ht(s, AUTO2)
        sandwich = hw_variance_ht_sandwich(s, AUTO2)
        assert abs(simple - sandwich) <= 1e-12 * max(1.0, simple)


# --- DM-side HC0 --------------------------------------------------------------


def test_hw_dm_zero_when_u_affine_in_d(rng):
    d = np.array([1, 1, 0, 0, 1, 0], dtype=np.float64)
    y = 2.0 + 3.0 * d
    s = complete_sample(np.zeros((6, 1)), y, d)
    assert hw_variance_dm(s, LambdaRule.fixed(1.0)) == pytest.approx(0.0, abs=1e-20)


def test_hw_dm_hand_two_by_two_sandwich():
    # u = (2, 0, 1, 1), d = (1, 1, 0, 0): intercept 1, slope 0, residuals
    # (1, -1, 0, 0); explicit 2x2 sandwich algebra gives 0.5
    s = complete_sample(np.zeros((4, 1)), [2.0, 0.0, 1.0, 1.0], [1, 1, 0, 0])
    assert hw_variance_dm(s, LambdaRule.fixed(1.0)) == pytest.approx(0.5, abs=1e-14)


def test_hw_dm_auxiliary_regression_reproduces_estimate(rng):
    for _ in range(50):
        n = int(rng.integers(6, 25))
        k = int(rng.integers(1, 4))
        pop = random_population(rng, n, k)
        n_t = int(rng.integers(2, n - 1))
        spec = CompleteDesign(n, n_t)
        s = observed_sample(pop, draw_with(spec, rng), spec)
        from loora.estimators import loora_dm_parts
        from loora.inference import _two_column_sandwich

        parts = loora_dm_parts(s, AUTO2)
        _, slope, _ = _two_column_sandwich(parts.u, parts.d)
        assert abs(slope - estimate_loora_dm(s, AUTO2)) <= 1e-10 * max(1.0, abs(slope))


def test_hw_dm_shift_invariance_without_informative_covariates(rng):
    y = rng.standard_normal(8)
    d = np.array([1, 1, 1, 1, 0, 0, 0, 0], dtype=np.float64)
    base = hw_variance_dm(complete_sample(np.zeros((8, 1)), y, d), LambdaRule.fixed(1.0))
    shifted = hw_variance_dm(
        complete_sample(np.zeros((8, 1)), y + 7.5, d), LambdaRule.fixed(1.0)
    )
    assert shifted == pytest.approx(base, rel=1e-12)
    # plain DM inference is shift invariant with any covariates present
    x = rng.standard_normal((8, 2))
    r1 = estimate_with_ci(Method.DM, complete_sample(x, y, d))
    r2 = estimate_with_ci(Method.DM, complete_sample(x, y + 7.5, d))
    assert r2.var_hat == pytest.approx(r1.var_hat, rel=1e-12)


# --- full reports -------------------------------------------------------------


def test_estimate_with_ci_brackets_point_estimate(rng):
    n = 14
    pop = random_population(rng, n, 2)
    spec_s = SimpleDesign(rng.uniform(0.35, 0.65, n))
    s_simple = observed_sample(pop, draw_with(spec_s, rng), spec_s)
    spec_c = CompleteDesign(n, 7)
    s_complete = observed_sample(pop, draw_with(spec_c, rng), spec_c)
    for method, sample in [
        (Method.HT, s_simple),
        (Method.LOORA_HT, s_simple),
        (Method.DM, s_complete),
        (Method.ADJ, s_complete),
        (Method.INT, s_complete),
        (Method.RIDGE_REG, s_complete),
        (Method.LOORA_DM, s_complete),
    ]:
        report = estimate_with_ci(method, sample, AUTO2, 0.9)
        assert report.ci_low <= report.tau_hat <= report.ci_high
        assert report.var_hat >= 0.0
        half = (report.ci_high - report.ci_low) / 2.0
        assert half == pytest.approx(
            normal_quantile(0.95) * math.sqrt(report.var_hat), rel=1e-12
        )


def test_estimate_with_ci_lambda_metadata(rng):
    n = 10
    pop = random_population(rng, n, 2)
    spec = SimpleDesign(np.full(n, 0.5))
    s = observed_sample(pop, draw_with(spec, rng), spec)
    report = estimate_with_ci(Method.LOORA_HT, s, LambdaRule.fixed(0.75))
    assert report.lambda_used == 0.75
    assert report.method is Method.LOORA_HT
    assert report.tau_hat == pytest.approx(estimate_loora_ht(s, LambdaRule.fixed(0.75)))
