"""Ridge regression, leverage scores, and leave-one-out identities.

Everything downstream (estimators, exact variance formulas, robust variance
estimates) is built on the machinery in this module: symmetric positive
definite ridge solves, the diagonal and full hat matrix of a ridge fit, and
the rank-one identities that turn n leave-one-out refits into one factorization.

A design matrix here is any finite real ndarray of shape (n, k) with
n >= 1 and k >= 1.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .exceptions import InvalidInput, LeverageSingular, RankDeficient

# (1 - h) below this threshold makes leave-one-out denominators meaningless.
LEVERAGE_GUARD = 1e-12


def as_design_matrix(x) -> np.ndarray:
    """Validate and return a design matrix as a float64 (n, k) array."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2:
        raise InvalidInput(f"design matrix must be 2-dimensional, got shape {x.shape}")
    n, k = x.shape
    if n < 1 or k < 1:
        raise InvalidInput(f"design matrix must have n >= 1 and k >= 1, got {x.shape}")
    if not np.all(np.isfinite(x)):
        raise InvalidInput("design matrix contains non-finite entries")
    return x


def as_vector(y, n: int | None = None, name: str = "vector") -> np.ndarray:
    """Validate and return a finite float64 1-d array, optionally of length n."""
    y = np.asarray(y, dtype=np.float64)
    if y.ndim != 1:
        raise InvalidInput(f"{name} must be 1-dimensional, got shape {y.shape}")
    if n is not None and y.shape[0] != n:
        raise InvalidInput(f"{name} has length {y.shape[0]}, expected {n}")
    if not np.all(np.isfinite(y)):
        raise InvalidInput(f"{name} contains non-finite entries")
    return y


def max_row_norm(x) -> float:
    """Largest Euclidean row norm of a design matrix (its (2, inf) norm)."""
    x = as_design_matrix(x)
    return float(np.sqrt(np.max(np.einsum("ij,ij->i", x, x))))


@dataclass(frozen=True)
class RidgeFit:
    """Result of a ridge regression solve for one (X, y, lambda).

    Attributes
    ----------
    lam : float
        Ridge penalty used.
    beta : ndarray of shape (k,)
        Solution of (X'X + lam I) beta = X'y.
    hat_diag : ndarray of shape (n,)
        Ridge leverage scores h_i = x_i' (X'X + lam I)^{-1} x_i.
    hat_full : ndarray of shape (n, n), optional
        Full hat matrix X (X'X + lam I)^{-1} X'. Only populated on request;
        it costs O(n^2) memory.
    """

    lam: float
    beta: np.ndarray
    hat_diag: np.ndarray
    hat_full: np.ndarray | None = None


def _gram_factor(x: np.ndarray, lam: float):
    """Cholesky factor of (X'X + lam I), raising RankDeficient when singular."""
    k = x.shape[1]
    gram = x.T @ x + lam * np.eye(k)
    if lam == 0.0 and np.linalg.matrix_rank(x) < k:
        raise RankDeficient(
            "design matrix is rank-deficient and lambda = 0; the normal "
            "equations are singular"
        )
    try:
        return scipy.linalg.cho_factor(gram, lower=False)
    except scipy.linalg.LinAlgError as exc:
        # numerically singular even though the SVD rank check passed
        raise RankDeficient(str(exc)) from exc


def ridge_fit(x, y, lam: float, want_full_hat: bool = False) -> RidgeFit:
    """Solve a ridge regression and return coefficients plus leverage scores.

    Parameters
    ----------
    x : array_like of shape (n, k)
        Design matrix.
    y : array_like of shape (n,)
        Response vector.
    lam : float
        Nonnegative ridge penalty. At lam = 0 the design must have full
        column rank.
    want_full_hat : bool
        Materialize the full n x n hat matrix (O(n^2) memory).

    Returns
    -------
    RidgeFit

    Raises
    ------
    InvalidInput
        On non-finite input, dimension mismatch, or negative lambda.
    RankDeficient
        When lam = 0 and the design matrix is rank-deficient.
    """
    x = as_design_matrix(x)
    y = as_vector(y, x.shape[0], "response")
    lam = float(lam)
    if not np.isfinite(lam) or lam < 0.0:
        raise InvalidInput(f"lambda must be a finite nonnegative real, got {lam}")
    factor = _gram_factor(x, lam)
    beta = scipy.linalg.cho_solve(factor, x.T @ y)
    # z holds (X'X + lam I)^{-1} X', so h_i = x_i . z[:, i]
    z = scipy.linalg.cho_solve(factor, x.T)
    hat_diag = np.einsum("ij,ji->i", x, z)
    hat_full = x @ z if want_full_hat else None
    return RidgeFit(lam=lam, beta=beta, hat_diag=hat_diag, hat_full=hat_full)


def check_loo_feasible(hat_diag: np.ndarray) -> None:
    """Raise LeverageSingular if any (1 - h_i) falls below the guard."""
    gap = 1.0 - hat_diag
    bad = np.nonzero(gap <= LEVERAGE_GUARD)[0]
    if bad.size:
        row = int(bad[np.argmin(gap[bad])])
        raise LeverageSingular(row, float(hat_diag[row]))


def loo_fit_all(x, y, lam: float) -> np.ndarray:
    """Coefficients of the n leave-one-out ridge fits, via the rank-one identity.

    Row i of the returned (n, k) array minimizes
    ||y_{-i} - X_{-i} b||^2 + lam ||b||^2. The computation uses
    beta - beta^{(-i)} = (X'X + lam I)^{-1} x_i (y_i - x_i'beta) / (1 - h_i)
    from a single factorization, never n refits.

    Raises
    ------
    LeverageSingular
        If some (1 - h_i) <= 1e-12, naming the offending row.
    """
    x = as_design_matrix(x)
    y = as_vector(y, x.shape[0], "response")
    lam = float(lam)
    if not np.isfinite(lam) or lam < 0.0:
        raise InvalidInput(f"lambda must be a finite nonnegative real, got {lam}")
    factor = _gram_factor(x, lam)
    beta = scipy.linalg.cho_solve(factor, x.T @ y)
    z = scipy.linalg.cho_solve(factor, x.T)  # (k, n): column i is (X'X+lam I)^{-1} x_i
    hat_diag = np.einsum("ij,ji->i", x, z)
    check_loo_feasible(hat_diag)
    resid = y - x @ beta
    return beta[None, :] - z.T * (resid / (1.0 - hat_diag))[:, None]


def gram_inverse(x, lam: float) -> np.ndarray:
    """Dense (X'X + lam I)^{-1}. Prefer the solve-based helpers when possible."""
    x = as_design_matrix(x)
    lam = float(lam)
    if not np.isfinite(lam) or lam < 0.0:
        raise InvalidInput(f"lambda must be a finite nonnegative real, got {lam}")
    factor = _gram_factor(x, lam)
    return scipy.linalg.cho_solve(factor, np.eye(x.shape[1]))


def loo_residuals(x, y, lam: float) -> np.ndarray:
    """Leave-one-out residuals y_i - x_i' beta^{(-i)}.

    Equal to the full-sample ridge residual divided by (1 - h_i); this is the
    quantity the leave-one-out estimators consume per unit.
    """
    x = as_design_matrix(x)
    y = as_vector(y, x.shape[0], "response")
    fit = ridge_fit(x, y, lam)
    check_loo_feasible(fit.hat_diag)
    return (y - x @ fit.beta) / (1.0 - fit.hat_diag)


def ridge_leverages_svd(x, lam: float) -> np.ndarray:
    """Ridge leverage scores through the compact SVD of X.

    h_i = sum_j sigma_j^2 u_ij^2 / (sigma_j^2 + lam) over the nonzero
    singular values. Unlike the normal-equation route, this is well defined
    for rank-deficient X whenever lam > 0.
    """
    x = as_design_matrix(x)
    lam = float(lam)
    if not np.isfinite(lam) or lam < 0.0:
        raise InvalidInput(f"lambda must be a finite nonnegative real, got {lam}")
    u, s, _ = np.linalg.svd(x, full_matrices=False)
    tol = max(x.shape) * np.finfo(np.float64).eps * (s[0] if s.size else 0.0)
    keep = s > tol
    u = u[:, keep]
    s2 = s[keep] ** 2
    if s2.size == 0:
        return np.zeros(x.shape[0])
    return (u * u) @ (s2 / (s2 + lam))


def leverage_regularizer(x, c: float) -> float:
    """Ridge penalty c * ||X||_{2,inf}^2 that caps every leverage at 1/(1+c).

    Any ridge leverage computed at the returned penalty is guaranteed to be
    at most 1 / (1 + c), uniformly over rows.
    """
    c = float(c)
    if not np.isfinite(c) or c < 0.0:
        raise InvalidInput(f"c must be a finite nonnegative real, got {c}")
    return c * max_row_norm(x) ** 2
