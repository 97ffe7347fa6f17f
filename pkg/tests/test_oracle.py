import math

import numpy as np
import pytest
from numpy.testing import assert_allclose

import loora.oracle as oracle_mod
from conftest import random_population, rel_gap
from loora.design import CompleteDesign, SimpleDesign, enumerate_assignments
from loora.estimators import LambdaRule, Method, ObservedSample, estimate_ht
from loora.exceptions import ParameterOutOfRange
from loora.linalg import leverage_regularizer, loo_fit_all, max_row_norm, ridge_fit
from loora.oracle import (
    Population,
    adjusted_ht_optimal_coef,
    adjusted_ht_variance,
    dm_adjusted_minimum_variance,
    dm_adjusted_optimal_coef,
    dm_adjusted_variance,
    dm_signal,
    dm_variance,
    dm_variance_neyman,
    enumeration_moments,
    ht_signal,
    ht_variance,
    lin_asymptotic_variance,
    lin_asymptotic_variance_projection,
    loora_dm_quadratic_blocks,
    loora_dm_variance,
    loora_dm_variance_terms,
    loora_ht_second_term_bound,
    loora_ht_variance,
    loora_ht_variance_terms,
    observe,
)

AUTO2 = LambdaRule.auto(2.0)


def half_probs(n):
    return np.full(n, 0.5)


# --- HT-side exact variances -------------------------------------------------


def test_ht_variance_hand_value():
    pop = Population(np.zeros((2, 1)), np.ones(2), np.zeros(2))
    assert ht_variance(pop, half_probs(2)) == pytest.approx(0.5, abs=1e-15)
    mean, var = enumeration_moments(pop, SimpleDesign(half_probs(2)), Method.HT)
    assert mean == pytest.approx(1.0, abs=1e-15)
    assert var == pytest.approx(0.5, abs=1e-15)


def test_ht_variance_zero_signal_construction(rng):
    n = 5
    p = rng.uniform(0.3, 0.7, n)
    y0 = rng.standard_normal(n)
    y1 = -(p / (1.0 - p)) * y0
    pop = Population(rng.standard_normal((n, 1)), y1, y0)
    assert ht_variance(pop, p) == pytest.approx(0.0, abs=1e-15)


def test_ht_variance_matches_enumeration(rng):
    pop = random_population(rng, 5, 2)
    p = rng.uniform(0.3, 0.7, 5)
    _, enum_var = enumeration_moments(pop, SimpleDesign(p), Method.HT)
    assert abs(ht_variance(pop, p) - enum_var) < 1e-11


def test_adjusted_ht_variance_zero_coef_reduces():
    rng = np.random.default_rng(4)
    pop = random_population(rng, 6, 2)
    p = rng.uniform(0.3, 0.7, 6)
    assert adjusted_ht_variance(pop, p, np.zeros(2)) == pytest.approx(
        ht_variance(pop, p), rel=1e-14
    )


def test_adjusted_ht_variance_perfect_adjustment(rng):
    n = 6
    p = rng.uniform(0.3, 0.7, n)
    y1 = rng.standard_normal(n)
    y0 = rng.standard_normal(n)
    sig_mu = np.sqrt((1.0 - p) / p) * y1 + np.sqrt(p / (1.0 - p)) * y0
    r = np.sqrt(p * (1.0 - p))
    pop = Population((r * sig_mu)[:, None], y1, y0)
    assert adjusted_ht_variance(pop, p, np.ones(1)) == pytest.approx(0.0, abs=1e-15)
    assert adjusted_ht_optimal_coef(pop, p)[0] == pytest.approx(1.0, rel=1e-10)


def test_adjusted_ht_variance_matches_enumeration_of_adjusted_estimator(rng):
    n = 6
    pop = random_population(rng, n, 2)
    p = rng.uniform(0.3, 0.7, n)
    b = rng.standard_normal(2)
    spec = SimpleDesign(p)
    values, probs = [], []
    for a, prob in enumerate_assignments(spec):
        y_adj = observe(pop, a) - pop.x @ b
        values.append(estimate_ht(ObservedSample(pop.x, y_adj, a, spec)))
        probs.append(prob)
    mean = math.fsum(pr * v for pr, v in zip(probs, values))
    enum_var = math.fsum(pr * (v - mean) ** 2 for pr, v in zip(probs, values))
    assert abs(adjusted_ht_variance(pop, p, b) - enum_var) < 1e-11


def test_loora_ht_variance_null_covariates_reduce_to_ht(rng):
    pop = Population(np.zeros((5, 1)), rng.standard_normal(5), rng.standard_normal(5))
    p = rng.uniform(0.3, 0.7, 5)
    term1, term2 = loora_ht_variance_terms(pop, p, 1.0)
    assert term2 == 0.0
    assert term1 == pytest.approx(ht_variance(pop, p), rel=1e-14)


def test_loora_ht_variance_matches_enumeration(rng):
    pop = random_population(rng, 4, 1)
    p = half_probs(4)
    for rule in (AUTO2, LambdaRule.fixed(0.0)):
        lam = rule.resolve(ht_signal(pop, p).xw)
        _, enum_var = enumeration_moments(pop, SimpleDesign(p), Method.LOORA_HT, rule)
        assert rel_gap(loora_ht_variance(pop, p, lam), enum_var) < 1e-10


def test_loora_ht_first_term_equals_loo_fits_of_signal(rng):
    pop = random_population(rng, 7, 2)
    p = rng.uniform(0.3, 0.7, 7)
    sig = ht_signal(pop, p)
    lam = leverage_regularizer(sig.xw, 2.0)
    term1, _ = loora_ht_variance_terms(pop, p, lam)
    coefs = loo_fit_all(sig.xw, sig.mu, lam)
    direct = math.fsum(
        (float(sig.xw[i] @ coefs[i]) - sig.mu[i]) ** 2 for i in range(7)
    ) / 7**2
    assert term1 == pytest.approx(direct, rel=1e-11)


def test_loora_ht_second_term_monotone_in_lambda(rng):
    pop = random_population(rng, 8, 2)
    p = rng.uniform(0.3, 0.7, 8)
    lams = [0.0, 0.1, 0.5, 1.0, 5.0, 25.0, 125.0]
    second = [loora_ht_variance_terms(pop, p, lam)[1] for lam in lams]
    for a, b in zip(second, second[1:]):
        assert b <= a + 1e-12


def test_loora_ht_second_term_dimension_bound(rng):
    for trial in range(10):
        n = int(rng.integers(4, 10))
        k = int(rng.integers(1, 3))
        pop = random_population(rng, n, k)
        p = rng.uniform(0.3, 0.7, n)
        for c in (0.5, 2.0):
            lam = leverage_regularizer(ht_signal(pop, p).xw, c)
            _, term2 = loora_ht_variance_terms(pop, p, lam)
            assert term2 <= loora_ht_second_term_bound(pop, p, lam) + 1e-12


def test_loora_ht_total_bound_at_unit_cap(rng):
    # at the c = 1 penalty the variance is bounded by four times the fit
    # error plus (8k/n^2) times the worst squared deviation ratio
    pop = random_population(rng, 9, 2)
    p = rng.uniform(0.3, 0.7, 9)
    sig = ht_signal(pop, p)
    lam = max_row_norm(sig.xw) ** 2
    total = loora_ht_variance(pop, p, lam)
    fit = ridge_fit(sig.xw, sig.mu, lam)
    fit_err = math.fsum((sig.xw @ fit.beta - sig.mu) ** 2)
    bound = 4.0 / 81.0 * fit_err + 8.0 * 2 / 81.0 * float(np.max(np.abs(sig.t / sig.r))) ** 2
    assert total <= bound + 1e-12


def test_equal_probability_projection_identity(rng):
    # with all p_i equal, projecting the signal on the weighted columns or
    # the raw columns is the same thing
    n, k = 8, 3
    pop = random_population(rng, n, k)
    p = np.full(n, 0.37)
    sig = ht_signal(pop, p)
    proj_w = sig.xw @ np.linalg.lstsq(sig.xw, sig.mu, rcond=None)[0]
    proj_raw = pop.x @ np.linalg.lstsq(pop.x, sig.mu, rcond=None)[0]
    assert np.max(np.abs(proj_w - proj_raw)) < 1e-10


# --- DM-side exact variances -------------------------------------------------


def test_dm_variance_constant_effect_constant_baseline():
    pop = Population(np.zeros((4, 1)), np.full(4, 5.5), np.full(4, 2.5))
    assert dm_variance(pop, 2) == pytest.approx(0.0, abs=1e-15)


def test_dm_variance_two_forms_hand_fixture():
    pop = Population(np.zeros((4, 1)), np.array([1.0, 2.0, 3.0, 4.0]), np.zeros(4))
    sig = dm_signal(pop, 2)
    assert_allclose(sig.mu, 2.0 * pop.y1, atol=1e-15)
    v1 = dm_variance(pop, 2)
    v2 = dm_variance_neyman(pop, 2)
    assert v1 == pytest.approx(v2, rel=1e-14)


def test_dm_variance_matches_enumeration(rng):
    pop = random_population(rng, 6, 1)
    for n_t in (2, 3):
        _, enum_var = enumeration_moments(pop, CompleteDesign(6, n_t), Method.DM)
        assert abs(dm_variance(pop, n_t) - enum_var) < 1e-11
        assert abs(dm_variance_neyman(pop, n_t) - enum_var) < 1e-11


def test_dm_adjusted_variance_zero_coef_reduces(rng):
    pop = random_population(rng, 6, 2)
    assert dm_adjusted_variance(pop, 3, np.zeros(2)) == pytest.approx(
        dm_variance(pop, 3), rel=1e-14
    )


def test_dm_adjusted_minimum_zero_for_perfect_column(rng):
    n = 6
    y1 = rng.standard_normal(n)
    y0 = rng.standard_normal(n)
    mu = (n - 3) * y1 + 3 * y0
    pop = Population((mu - mu.mean())[:, None], y1, y0)
    assert dm_adjusted_minimum_variance(pop, 3) == pytest.approx(0.0, abs=1e-14)
    assert dm_adjusted_optimal_coef(pop, 3)[0] == pytest.approx(1.0, rel=1e-10)


def test_dm_adjusted_variance_matches_enumeration_of_adjusted_estimator(rng):
    from loora.estimators import estimate_dm

    n = 6
    pop = random_population(rng, n, 2)
    b = rng.standard_normal(2)
    spec = CompleteDesign(n, 3)
    values, probs = [], []
    for a, prob in enumerate_assignments(spec):
        y_adj = observe(pop, a) - pop.x @ b
        values.append(estimate_dm(ObservedSample(pop.x, y_adj, a, spec)))
        probs.append(prob)
    mean = math.fsum(pr * v for pr, v in zip(probs, values))
    enum_var = math.fsum(pr * (v - mean) ** 2 for pr, v in zip(probs, values))
    # the closed form's coefficient lives on the aggregated-signal scale:
    # n times the per-outcome adjustment
    assert abs(dm_adjusted_variance(pop, 3, n * b) - enum_var) < 1e-11
    # cross-check through the adjusted population's own DM variance
    adjusted_pop = Population(pop.x, pop.y1 - pop.x @ b, pop.y0 - pop.x @ b)
    assert dm_adjusted_variance(pop, 3, n * b) == pytest.approx(
        dm_variance(adjusted_pop, 3), rel=1e-12
    )


def test_loora_dm_variance_null_covariates_reduce_to_dm(rng):
    pop = Population(np.zeros((6, 1)), rng.standard_normal(6), rng.standard_normal(6))
    t1, t2, t3 = loora_dm_variance_terms(pop, 3, 1.0)
    assert t2 == 0.0
    assert t3 == 0.0
    assert t1 == pytest.approx(dm_variance(pop, 3), rel=1e-13)


def test_loora_dm_variance_matches_enumeration_k1(rng):
    pop = random_population(rng, 6, 1)
    for rule in (AUTO2, LambdaRule.fixed(0.0)):
        lam = rule.resolve(pop.x)
        _, enum_var = enumeration_moments(pop, CompleteDesign(6, 3), Method.LOORA_DM, rule)
        assert rel_gap(loora_dm_variance(pop, 3, lam), enum_var) < 1e-9


def test_loora_dm_variance_matches_enumeration_k2(rng):
    pop = random_population(rng, 7, 2)
    lam = leverage_regularizer(pop.x, 2.0)
    _, enum_var = enumeration_moments(pop, CompleteDesign(7, 3), Method.LOORA_DM, AUTO2)
    assert rel_gap(loora_dm_variance(pop, 3, lam), enum_var) < 1e-9


def test_loora_dm_variance_guards():
    rng = np.random.default_rng(0)
    pop4 = random_population(rng, 4, 1)
    with pytest.raises(ParameterOutOfRange):
        loora_dm_variance(pop4, 2, 1.0)
    # explicit opt-in works and still matches enumeration
    lam = leverage_regularizer(pop4.x, 2.0)
    _, enum_var = enumeration_moments(pop4, CompleteDesign(4, 2), Method.LOORA_DM, AUTO2)
    assert rel_gap(loora_dm_variance(pop4, 2, lam, allow_n4=True), enum_var) < 1e-9
    pop6 = random_population(rng, 6, 1)
    with pytest.raises(ParameterOutOfRange):
        loora_dm_variance(pop6, 1, 1.0)  # singleton arm
    pop3 = random_population(rng, 3, 1)
    with pytest.raises(ParameterOutOfRange):
        loora_dm_variance(pop3, 2, 1.0)


def test_loora_dm_corrupt_hook_changes_value(rng):
    pop = random_population(rng, 6, 2)
    lam = 0.5
    clean = loora_dm_variance(pop, 3, lam)
    corrupted = loora_dm_variance(pop, 3, lam, corrupt_q=True)
    assert abs(clean - corrupted) > 1e-9


def test_quadratic_blocks_symmetry_and_cross_transpose(rng):
    pop = random_population(rng, 8, 2)
    blocks = loora_dm_quadratic_blocks(pop, 3, 0.7)
    assert_allclose(blocks[(0, 1)], blocks[(1, 0)].T, atol=1e-15)


def test_quadratic_blocks_refuse_oversized_population(rng):
    big = Population(np.ones((513, 1)), np.ones(513), np.zeros(513))
    with pytest.raises(ParameterOutOfRange, match="512"):
        loora_dm_quadratic_blocks(big, 200, 1.0)


def test_streamed_quadratic_path_matches_blocks(rng, monkeypatch):
    pop = random_population(rng, 25, 3)
    lam = leverage_regularizer(pop.x, 2.0)
    reference = loora_dm_variance(pop, 11, lam)
    monkeypatch.setattr(oracle_mod, "QUADRATIC_BLOCK_MAX_N", 7)
    streamed = loora_dm_variance(pop, 11, lam)
    assert streamed == pytest.approx(reference, rel=1e-13)


def test_pattern_tables_match_displayed_constants_where_verified():
    # closed forms for the coincidence-pattern expectations; the shared-k
    # pattern uses the corrected denominator n^3 nT nC (n-1)(n-2)
    for n, n_t in ((6, 3), (7, 2), (9, 5)):
        n_c = n - n_t
        tables = oracle_mod._pattern_tables(n, n_t)
        big_f = n**3 * n_t * n_c * (n_t - 1) * (n_c - 1)
        fc = n**3 * n_t * n_c * (n - 1) * (n - 2)
        c4 = 1.0 / (n**3 * (n - 1))
        a_t = (n_t * n_c - 2 * n_c + n_t**2 - 2 * n_t + 1) / (n_t - 1)
        a_c = (n_t * n_c - 2 * n_t + n_c**2 - 2 * n_c + 1) / (n_c - 1)
        ab_t = n_c * n_t - 3 * n_c + n_t**2 - 2 * n_t + 1
        ab_c = n_c * n_t - 3 * n_t + n_c**2 - 2 * n_c + 1
        n2 = n**2
        assert tables["pair_pair"][1, 1] * big_f / n2 == pytest.approx(n_c - 1, rel=1e-12)
        assert tables["pair_pair"][0, 0] * big_f / n2 == pytest.approx(n_t - 1, rel=1e-12)
        assert tables["pair_pair"][1, 0] == 0.0
        assert tables["shared_i"][1, 1] * big_f * (n - 2) / n2 == pytest.approx(
            -(n_c - 1), rel=1e-12
        )
        assert tables["shared_k"][1, 1] * fc / n2 == pytest.approx(a_t, rel=1e-12)
        assert tables["shared_k"][0, 0] * fc / n2 == pytest.approx(a_c, rel=1e-12)
        assert (tables["shared_k"][1, 0] + tables["shared_k"][0, 1]) * fc / n2 == pytest.approx(
            -2.0 * n, rel=1e-12
        )
        assert tables["crossed"][1, 1] / n2 == pytest.approx(
            c4 / (n_t * (n_t - 1)), rel=1e-12
        )
        assert tables["hooked_left"][1, 1] / n2 == pytest.approx(
            -c4 / ((n - 2) * n_t * (n_t - 1)), rel=1e-12
        )
        assert tables["hooked_right"][0, 0] / n2 == pytest.approx(
            -c4 / ((n - 2) * n_c * (n_c - 1)), rel=1e-12
        )
        assert tables["disjoint"][1, 1] / n2 == pytest.approx(
            -c4 * ab_t / ((n - 2) * n_c * n_t * (n - 3) * (n_t - 1)), rel=1e-12
        )
        assert tables["disjoint"][0, 0] / n2 == pytest.approx(
            -c4 * ab_c / ((n - 2) * n_c * n_t * (n - 3) * (n_c - 1)), rel=1e-12
        )
        assert tables["disjoint"][1, 0] / n2 == pytest.approx(
            c4 * (n + 1) / ((n - 2) * n_c * n_t * (n - 3)), rel=1e-12
        )


# --- asymptotic benchmark and brute-force moments ---------------------------


def test_lin_variance_zero_for_exactly_linear_outcomes(rng):
    n, k = 20, 3
    x = rng.standard_normal((n, k))
    y0 = x @ np.array([1.0, -1.0, 2.0]) + 0.5
    y1 = x @ np.array([0.5, 0.2, -1.0]) - 1.0
    pop = Population(x, y1, y0)
    assert lin_asymptotic_variance(pop, 0.5) == pytest.approx(0.0, abs=1e-18)


def test_lin_variance_single_arm_dropout(rng):
    n, k = 15, 2
    x = rng.standard_normal((n, k))
    y1 = rng.standard_normal(n)
    pop = Population(x, y1, np.zeros(n))
    xc = x - x.mean(axis=0)
    resid = (y1 - y1.mean()) - xc @ np.linalg.lstsq(xc, y1 - y1.mean(), rcond=None)[0]
    assert lin_asymptotic_variance(pop, 0.5) == pytest.approx(
        float(resid @ resid) / n, rel=1e-12
    )


def test_lin_variance_three_term_equals_projection(rng):
    pop = random_population(rng, 50, 3)
    for p_t in (0.3, 0.5, 0.62):
        three = lin_asymptotic_variance(pop, p_t)
        proj = lin_asymptotic_variance_projection(pop, p_t)
        assert abs(three - proj) < 1e-10 * max(1.0, three)


def test_enumeration_moments_null_effect_dm(rng):
    y = rng.standard_normal(5)
    pop = Population(rng.standard_normal((5, 1)), y, y.copy())
    mean, var = enumeration_moments(pop, CompleteDesign(5, 2), Method.DM)
    assert mean == pytest.approx(0.0, abs=1e-15)
    assert var == pytest.approx(dm_variance(pop, 2), rel=1e-12)


def test_formula_vs_enumeration_family(rng):
    # a compressed version of the acceptance sweep: random small populations,
    # both designs, guarded-zero and auto penalties
    for _ in range(10):
        n = int(rng.integers(4, 8))
        k = int(rng.integers(1, 3))
        pop = random_population(rng, n, k)
        p = rng.uniform(0.3, 0.7, n)
        for rule in (LambdaRule.fixed(0.0), AUTO2):
            lam = rule.resolve(ht_signal(pop, p).xw)
            _, enum_var = enumeration_moments(pop, SimpleDesign(p), Method.LOORA_HT, rule)
            assert rel_gap(loora_ht_variance(pop, p, lam), enum_var) < 1e-9
        n_t = max(2, min(n - 2, n // 2))
        for rule in (LambdaRule.fixed(0.0), AUTO2):
            lam = rule.resolve(pop.x)
            _, enum_var = enumeration_moments(pop, CompleteDesign(n, n_t), Method.LOORA_DM, rule)
            assert rel_gap(loora_dm_variance(pop, n_t, lam, allow_n4=True), enum_var) < 1e-9
