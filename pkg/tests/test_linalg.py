import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from numpy.testing import assert_allclose

from loora.exceptions import InvalidInput, LeverageSingular, RankDeficient
from loora.linalg import (
    leverage_regularizer,
    loo_fit_all,
    loo_residuals,
    max_row_norm,
    ridge_fit,
    ridge_leverages_svd,
)


def test_identity_design_ols():
    fit = ridge_fit(np.eye(2), [3.0, 5.0], 0.0)
    assert_allclose(fit.beta, [3.0, 5.0], atol=1e-12)
    assert_allclose(fit.hat_diag, [1.0, 1.0], atol=1e-12)


def test_identity_design_unit_ridge_shrinks_by_half():
    fit = ridge_fit(np.eye(2), [3.0, 5.0], 1.0)
    assert_allclose(fit.beta, [1.5, 2.5], atol=1e-12)
    assert_allclose(fit.hat_diag, [0.5, 0.5], atol=1e-12)


def test_ridge_fit_matches_independent_normal_equation_solve(rng):
    x = rng.standard_normal((8, 3))
    y = rng.standard_normal(8)
    for lam in (0.0, 0.3, 2.0):
        fit = ridge_fit(x, y, lam)
        expected = np.linalg.solve(x.T @ x + lam * np.eye(3), x.T @ y)
        assert_allclose(fit.beta, expected, atol=1e-10)


def test_rank_deficient_at_zero_lambda_raises():
    x = np.column_stack([np.ones(5), np.ones(5)])
    with pytest.raises(RankDeficient):
        ridge_fit(x, np.arange(5.0), 0.0)
    # the same matrix is fine with any positive penalty
    ridge_fit(x, np.arange(5.0), 1e-3)


def test_non_finite_input_rejected():
    with pytest.raises(InvalidInput):
        ridge_fit(np.array([[1.0], [np.nan]]), [1.0, 2.0], 0.0)
    with pytest.raises(InvalidInput):
        ridge_fit(np.eye(2), [1.0, np.inf], 0.0)
    with pytest.raises(InvalidInput):
        ridge_fit(np.eye(2), [1.0, 2.0], -0.5)


def test_full_hat_symmetric_and_trace_matches_diag(rng):
    x = rng.standard_normal((7, 3))
    fit = ridge_fit(x, rng.standard_normal(7), 0.7, want_full_hat=True)
    assert fit.hat_full is not None
    assert np.max(np.abs(fit.hat_full - fit.hat_full.T)) < 1e-10
    assert abs(np.trace(fit.hat_full) - math.fsum(fit.hat_diag)) < 1e-10
    assert ridge_fit(x, np.zeros(7), 0.7).hat_full is None


def test_loo_two_point_interpolation():
    coefs = loo_fit_all(np.array([[1.0], [1.0]]), [0.0, 2.0], 0.0)
    assert_allclose(coefs, [[2.0], [0.0]], atol=1e-12)


def test_loo_matches_direct_refit(rng):
    x = rng.standard_normal((10, 4))
    y = rng.standard_normal(10)
    for lam in (0.0, 0.4):
        fast = loo_fit_all(x, y, lam)
        for i in range(10):
            refit = ridge_fit(np.delete(x, i, axis=0), np.delete(y, i), lam)
            assert_allclose(fast[i], refit.beta, atol=1e-9)


def test_loo_infinite_shrinkage_limit(rng):
    x = rng.standard_normal((6, 2))
    y = rng.standard_normal(6)
    lam = 1e12 * max_row_norm(x) ** 2
    coefs = loo_fit_all(x, y, lam)
    assert np.max(np.sqrt((coefs**2).sum(axis=1))) <= 1e-6 * np.linalg.norm(y)


def test_loo_residuals_two_point_line():
    resid = loo_residuals(np.array([[1.0], [1.0]]), [0.0, 2.0], 0.0)
    assert_allclose(resid, [-2.0, 2.0], atol=1e-12)


def test_loo_residuals_match_refit(rng):
    x = rng.standard_normal((10, 4))
    y = rng.standard_normal(10)
    resid = loo_residuals(x, y, 0.25)
    for i in range(10):
        refit = ridge_fit(np.delete(x, i, axis=0), np.delete(y, i), 0.25)
        assert abs(resid[i] - (y[i] - x[i] @ refit.beta)) < 1e-9


def test_loo_residuals_zero_for_exact_fit(rng):
    x = rng.standard_normal((9, 3))
    y = x @ np.array([1.0, -2.0, 0.5])
    assert np.max(np.abs(loo_residuals(x, y, 0.0))) < 1e-9


def test_leverage_guard_names_offending_row():
    # a duplicated-column design makes the lone heavy row's leverage 1 at lam=0
    x = np.array([[1.0, 0.0], [0.0, 1.0], [0.0, 1.0]])
    with pytest.raises(LeverageSingular) as exc:
        loo_fit_all(x, np.arange(3.0), 0.0)
    assert exc.value.row == 0


def test_svd_leverages_identity():
    assert_allclose(ridge_leverages_svd(np.eye(2), 1.0), [0.5, 0.5], atol=1e-12)


def test_svd_leverages_zero_row():
    x = np.array([[2.0, 0.0], [0.0, 0.0]])
    for lam in (0.5, 3.0):
        assert_allclose(ridge_leverages_svd(x, lam), [4.0 / (4.0 + lam), 0.0], atol=1e-12)


def test_svd_leverages_match_normal_equation_route(rng):
    x = rng.standard_normal((9, 3))
    for lam in (0.0, 0.8, 5.0):
        direct = ridge_fit(x, rng.standard_normal(9), lam).hat_diag
        assert_allclose(ridge_leverages_svd(x, lam), direct, atol=1e-10)


def test_leverage_regularizer_values():
    x = np.array([[2.0, 0.0], [1.0, 1.0]])
    assert leverage_regularizer(x, 2.0) == pytest.approx(8.0, abs=1e-12)
    assert leverage_regularizer(x, 0.0) == 0.0


def test_leverage_cap_randomized(rng):
    for _ in range(200):
        n = int(rng.integers(3, 21))
        k = int(rng.integers(1, 7))
        x = rng.standard_t(df=2, size=(n, k))
        for c in (0.5, 1.0, 2.0, 5.0):
            h = ridge_leverages_svd(x, leverage_regularizer(x, c))
            assert np.max(h) <= 1.0 / (1.0 + c) + 1e-12


@settings(max_examples=60, deadline=None)
@given(
    n=st.integers(3, 12),
    k=st.integers(1, 4),
    lam=st.floats(0.0, 10.0),
    seed=st.integers(0, 2**32 - 1),
)
def test_loo_identity_property(n, k, lam, seed):
    # full-sample residual equals (1 - h) times the leave-one-out residual
    gen = np.random.default_rng(seed)
    x = gen.standard_normal((n, k))
    x /= np.maximum(x.std(axis=0), 1e-9)
    y = gen.standard_normal(n)
    try:
        fit = ridge_fit(x, y, lam)
        loo = loo_residuals(x, y, lam)
    except (RankDeficient, LeverageSingular):
        return
    full = y - x @ fit.beta
    scale = np.maximum(1.0, np.abs(full))
    assert np.max(np.abs(full - (1.0 - fit.hat_diag) * loo) / scale) < 1e-9


@settings(max_examples=40, deadline=None)
@given(
    n=st.integers(2, 10),
    k=st.integers(1, 4),
    seed=st.integers(0, 2**32 - 1),
)
def test_ridge_residual_monotone_in_lambda(n, k, seed):
    gen = np.random.default_rng(seed)
    x = gen.standard_normal((n, k))
    v = gen.standard_normal(n)
    lams = sorted(gen.uniform(0.0, 5.0, size=4))
    errors = []
    for lam in lams:
        fit = ridge_fit(x, v, lam) if lam > 0 else None
        if fit is None:
            try:
                fit = ridge_fit(x, v, 0.0)
            except RankDeficient:
                return
        errors.append(float(np.sum((x @ fit.beta - v) ** 2)))
    for small, large in zip(errors, errors[1:]):
        assert small <= large + 1e-10


@settings(max_examples=40, deadline=None)
@given(
    n=st.integers(2, 12),
    k=st.integers(1, 5),
    lam=st.floats(0.0, 20.0),
    seed=st.integers(0, 2**32 - 1),
)
def test_offdiagonal_leverage_frobenius_bound(n, k, lam, seed):
    # sum over pairs of squared off-diagonal hat entries never exceeds k/2
    gen = np.random.default_rng(seed)
    x = gen.standard_normal((n, k))
    try:
        hat = ridge_fit(x, gen.standard_normal(n), lam, want_full_hat=True).hat_full
    except RankDeficient:
        return
    off = hat[np.triu_indices(n, k=1)]
    assert float(np.sum(off**2)) <= k / 2.0 + 1e-10
