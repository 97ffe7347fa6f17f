"""Feasible variance estimates and confidence intervals.

The leave-one-out estimators admit a two-step regression view: residualize
outcomes with the ridge fit, then regress the residualized outcomes on the
treatment indicator. The heteroskedasticity-robust (HC0) sandwich variance of
that second step yields the interval half-widths. The same machinery, with a
zero adjustment, covers the unadjusted estimators, and a plain OLS sandwich
covers the regression benchmarks.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .estimators import (
    DEFAULT_LAMBDA_RULE,
    LambdaRule,
    Method,
    ObservedSample,
    _group_counts,
    adj_design,
    estimate_dm,
    estimate_ht,
    int_design,
    loora_dm_parts,
    loora_ht_parts,
)
from .exceptions import InvalidInput, RankDeficient, SpecMismatch
from .linalg import as_design_matrix

_SQRT2 = math.sqrt(2.0)
_SQRT_2PI = math.sqrt(2.0 * math.pi)

# Rational approximation of the standard normal quantile (Acklam's
# coefficients), refined by one Halley step against erfc.
_A = (
    -3.969683028665376e01,
    2.209460984245205e02,
    -2.759285104469687e02,
    1.383577518672690e02,
    -3.066479806614716e01,
    2.506628277459239e00,
)
_B = (
    -5.447609879822406e01,
    1.615858368580409e02,
    -1.556989798598866e02,
    6.680131188771972e01,
    -1.328068155288572e01,
)
_C = (
    -7.784894002430293e-03,
    -3.223964580411365e-01,
    -2.400758277161838e00,
    -2.549732539343734e00,
    4.374664141464968e00,
    2.938163982698783e00,
)
_D = (
    7.784695709041462e-03,
    3.224671290700398e-01,
    2.445134137142996e00,
    3.754408661907416e00,
)


def normal_quantile(p: float) -> float:
    """Standard normal quantile, accurate to well below 1e-9 on (0, 1)."""
    p = float(p)
    if not 0.0 < p < 1.0:
        raise InvalidInput(f"quantile argument must lie in (0, 1), got {p}")
    p_low = 0.02425
    if p < p_low:
        q = math.sqrt(-2.0 * math.log(p))
        x = (((((_C[0] * q + _C[1]) * q + _C[2]) * q + _C[3]) * q + _C[4]) * q + _C[5]) / (
            (((_D[0] * q + _D[1]) * q + _D[2]) * q + _D[3]) * q + 1.0
        )
    elif p <= 1.0 - p_low:
        q = p - 0.5
        r = q * q
        x = (
            (((((_A[0] * r + _A[1]) * r + _A[2]) * r + _A[3]) * r + _A[4]) * r + _A[5])
            * q
            / (((((_B[0] * r + _B[1]) * r + _B[2]) * r + _B[3]) * r + _B[4]) * r + 1.0)
        )
    else:
        q = math.sqrt(-2.0 * math.log(1.0 - p))
        x = -(((((_C[0] * q + _C[1]) * q + _C[2]) * q + _C[3]) * q + _C[4]) * q + _C[5]) / (
            (((_D[0] * q + _D[1]) * q + _D[2]) * q + _D[3]) * q + 1.0
        )
    # One Halley refinement step pins the result to machine precision.
    err = 0.5 * math.erfc(-x / _SQRT2) - p
    u = err * _SQRT_2PI * math.exp(0.5 * x * x)
    return x - u / (1.0 + 0.5 * x * u)


def confidence_interval(tau_hat: float, var_hat: float, level: float) -> tuple[float, float]:
    """Normal interval tau_hat +/- z_{1 - alpha/2} sqrt(var_hat)."""
    if not 0.0 < level < 1.0:
        raise InvalidInput(f"confidence level must lie in (0, 1), got {level}")
    if not var_hat >= 0.0:
        raise InvalidInput(f"variance estimate must be nonnegative, got {var_hat}")
    half = normal_quantile(0.5 + level / 2.0) * math.sqrt(var_hat)
    return tau_hat - half, tau_hat + half


@dataclass(frozen=True)
class EstimateReport:
    """A point estimate with its estimated variance and confidence interval."""

    method: Method
    tau_hat: float
    var_hat: float
    ci_low: float
    ci_high: float
    level: float
    lambda_used: float


def _ht_hw_residuals(s: ObservedSample, parts) -> np.ndarray:
    resid_scaled = (s.y - (s.x @ parts.beta)) / (parts.q * (1.0 - parts.hat_diag))
    return resid_scaled - parts.z * parts.tau_hat


def hw_variance_ht(s: ObservedSample, rule: LambdaRule = DEFAULT_LAMBDA_RULE) -> float:
    """HC0 variance estimate for LOORA-HT.

    Residualized outcomes (y_i - x_i' beta) / (q_i (1 - h_i)) are treated as
    a regression on the signed treatment indicator; since the regressor is
    +/-1 the sandwich collapses to n^{-2} sum of squared residuals.
    """
    hw_resid = _ht_hw_residuals(s, loora_ht_parts(s, rule))
    return math.fsum(hw_resid**2) / s.n**2


def hw_variance_ht_sandwich(s: ObservedSample, rule: LambdaRule = DEFAULT_LAMBDA_RULE) -> float:
    """The same HC0 variance through the explicit sandwich product."""
    parts = loora_ht_parts(s, rule)
    hw_resid = _ht_hw_residuals(s, parts)
    zz = math.fsum(parts.z**2)
    return math.fsum(parts.z**2 * hw_resid**2) / zz**2


def _two_column_sandwich(u: np.ndarray, d: np.ndarray) -> tuple[float, float, float]:
    """OLS of u on [1, d] plus the HC0 variance of the second coefficient.

    Returns (intercept, slope, slope variance).
    """
    n = u.shape[0]
    n_t = float(d.sum())
    n_c = n - n_t
    if n_t < 1 or n_c < 1:
        raise SpecMismatch("auxiliary regression needs both arms occupied")
    design = np.column_stack([np.ones(n), d])
    bread = np.linalg.inv(design.T @ design)
    coef = bread @ (design.T @ u)
    resid = u - design @ coef
    meat = design.T @ (design * (resid**2)[:, None])
    cov = bread @ meat @ bread
    return float(coef[0]), float(coef[1]), float(cov[1, 1])


def _dm_hw_variance_from_parts(parts) -> float:
    _, slope, var = _two_column_sandwich(parts.u, parts.d)
    if abs(slope - parts.tau_hat) > 1e-10 * max(1.0, abs(parts.tau_hat)):
        raise InvalidInput(
            "auxiliary regression failed to reproduce the point estimate; "
            f"got {slope!r} vs {parts.tau_hat!r}"
        )
    return var


def hw_variance_dm(
    s: ObservedSample,
    rule: LambdaRule = DEFAULT_LAMBDA_RULE,
    allow_design_mismatch: bool = False,
) -> float:
    """HC0 variance estimate for LOORA-DM.

    The leave-one-out adjusted outcomes u_i = y_i - x_i' beta^{(-i)} are
    regressed on an intercept and the treatment indicator; the estimator is
    the second coefficient of that regression, and its HC0 sandwich entry is
    the variance estimate.
    """
    return _dm_hw_variance_from_parts(loora_dm_parts(s, rule, allow_design_mismatch))


def _penalized_bread(m: np.ndarray, penalty: np.ndarray) -> np.ndarray:
    """(M'M + diag(penalty))^{-1}, surfacing singular designs as RankDeficient."""
    m = as_design_matrix(m)
    gram = m.T @ m + np.diag(penalty)
    if np.all(penalty == 0.0) and np.linalg.matrix_rank(m) < m.shape[1]:
        raise RankDeficient("benchmark regression design is rank-deficient")
    try:
        return np.linalg.inv(gram)
    except np.linalg.LinAlgError as exc:
        raise RankDeficient(str(exc)) from exc


def _penalized_coef_and_sandwich(
    m: np.ndarray, y: np.ndarray, penalty: np.ndarray, idx: int
) -> tuple[float, float]:
    """One coefficient of a (possibly penalized) regression and its HC0 variance."""
    bread = _penalized_bread(m, penalty)
    coef = bread @ (m.T @ y)
    resid = y - m @ coef
    meat = m.T @ (m * (resid**2)[:, None])
    cov = bread @ meat @ bread
    return float(coef[idx]), float(cov[idx, idx])


def estimate_with_ci(
    method: Method,
    s: ObservedSample,
    rule: LambdaRule = DEFAULT_LAMBDA_RULE,
    level: float = 0.95,
    allow_design_mismatch: bool = False,
) -> EstimateReport:
    """Point estimate, HC0 variance, and confidence interval for any method."""
    method = Method(method)
    lam_used = 0.0
    if method is Method.HT:
        tau = estimate_ht(s)
        p = s.spec.p
        q = p * s.assignment.d + (1.0 - p) * (1.0 - s.assignment.d)
        resid = s.y / q - s.assignment.z * tau
        var = math.fsum(resid**2) / s.n**2
    elif method is Method.DM:
        tau = estimate_dm(s, allow_design_mismatch)
        _, _, var = _two_column_sandwich(s.y, s.assignment.d)
    elif method is Method.LOORA_HT:
        parts = loora_ht_parts(s, rule)
        tau, lam_used = parts.tau_hat, parts.lam
        var = math.fsum(_ht_hw_residuals(s, parts) ** 2) / s.n**2
    elif method is Method.LOORA_DM:
        parts = loora_dm_parts(s, rule, allow_design_mismatch)
        tau, lam_used = parts.tau_hat, parts.lam
        var = _dm_hw_variance_from_parts(parts)
    elif method in (Method.ADJ, Method.INT, Method.RIDGE_REG):
        _group_counts(s, method.value, allow_design_mismatch)
        if method is Method.ADJ:
            m = adj_design(s)
            penalty = np.zeros(m.shape[1])
        elif method is Method.INT:
            m = int_design(s)
            penalty = np.zeros(m.shape[1])
        else:
            m = adj_design(s)
            lam_used = rule.resolve(s.x)
            penalty = np.zeros(m.shape[1])
            penalty[2:] = lam_used
        tau, var = _penalized_coef_and_sandwich(m, s.y, penalty, 1)
    else:  # pragma: no cover - exhaustive above
        raise InvalidInput(f"unknown method {method!r}")
    low, high = confidence_interval(tau, var, level)
    return EstimateReport(
        method=method,
        tau_hat=tau,
        var_hat=var,
        ci_low=low,
        ci_high=high,
        level=level,
        lambda_used=lam_used,
    )
