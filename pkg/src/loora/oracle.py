"""Ground-truth computations that require both potential outcomes.

Nothing here is feasible for a real analyst: every function sees the full
population (covariates plus both potential-outcome vectors) and returns exact
design-based quantities, such as the closed-form variances of the
leave-one-out adjusted estimators or brute-force moments over every possible
assignment. They exist to certify the estimators and the feasible variance
machinery.

Large cancellations appear in the cross-unit terms at small n, so final
reductions use compensated summation (math.fsum) throughout.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .design import Assignment, DesignSpec, enumerate_assignments
from .estimators import LambdaRule, Method, ObservedSample, estimate
from .exceptions import InvalidInput, ParameterOutOfRange, RankDeficient
from .linalg import as_design_matrix, as_vector, check_loo_feasible, ridge_fit

# Above this n the 2n x 2n quadratic-form matrix is not materialized; its
# rows are generated and contracted in chunks instead.
QUADRATIC_BLOCK_MAX_N = 512


@dataclass(frozen=True)
class Population:
    """Full ground truth: covariates and both potential-outcome vectors."""

    x: np.ndarray
    y1: np.ndarray
    y0: np.ndarray

    def __post_init__(self):
        x = as_design_matrix(self.x)
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "y1", as_vector(self.y1, x.shape[0], "treated outcomes"))
        object.__setattr__(self, "y0", as_vector(self.y0, x.shape[0], "control outcomes"))

    @property
    def n(self) -> int:
        return self.x.shape[0]

    @property
    def k(self) -> int:
        return self.x.shape[1]

    @property
    def tau(self) -> float:
        """The estimand: the average unit-level treatment effect."""
        return math.fsum(self.y1 - self.y0) / self.n


def observe(pop: Population, assignment: Assignment) -> np.ndarray:
    """Mask the population down to what the assignment reveals."""
    return assignment.d * pop.y1 + (1.0 - assignment.d) * pop.y0


def observed_sample(pop: Population, assignment: Assignment, spec: DesignSpec) -> ObservedSample:
    return ObservedSample(pop.x, observe(pop, assignment), assignment, spec)


# ---------------------------------------------------------------------------
# Simple random assignment: HT-side signals and exact variances
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class HtSignal:
    """The vectors that drive HT-side variance under simple assignment.

    mu is the signal whose squared norm is the HT variance; t measures how
    far the reweighted-outcome proxy deviates from mu; r are the per-unit
    Bernoulli standard deviations; xw the inverse-weighted covariates X / r.
    """

    mu: np.ndarray
    t: np.ndarray
    r: np.ndarray
    xw: np.ndarray


def _check_probs(pop: Population, p) -> np.ndarray:
    p = as_vector(p, pop.n, "probability vector")
    if np.any(p <= 0.0) or np.any(p >= 1.0):
        raise InvalidInput("probabilities must lie strictly inside (0, 1)")
    return p


def ht_signal(pop: Population, p) -> HtSignal:
    p = _check_probs(pop, p)
    r = np.sqrt(p * (1.0 - p))
    mu = np.sqrt((1.0 - p) / p) * pop.y1 + np.sqrt(p / (1.0 - p)) * pop.y0
    t = ((1.0 - p) ** 2 * pop.y1 - p**2 * pop.y0) / r
    return HtSignal(mu=mu, t=t, r=r, xw=pop.x / r[:, None])


def ht_variance(pop: Population, p) -> float:
    """Exact variance of the unadjusted HT estimator: ||mu||^2 / n^2."""
    sig = ht_signal(pop, p)
    return math.fsum(sig.mu**2) / pop.n**2


def adjusted_ht_variance(pop: Population, p, b) -> float:
    """Exact variance of the HT estimator on outcomes adjusted by a fixed b."""
    sig = ht_signal(pop, p)
    b = as_vector(b, pop.k, "coefficient vector")
    return math.fsum((sig.mu - sig.xw @ b) ** 2) / pop.n**2


def adjusted_ht_optimal_coef(pop: Population, p) -> np.ndarray:
    """The fixed adjustment vector minimizing the adjusted HT variance."""
    sig = ht_signal(pop, p)
    coef, _, _, _ = np.linalg.lstsq(sig.xw, sig.mu, rcond=None)
    return coef


def loora_ht_variance_terms(pop: Population, p, lam: float) -> tuple[float, float]:
    """The two pieces of the exact LOORA-HT variance.

    The first term is the leverage-corrected squared distance between the
    signal mu and its infeasible ridge fit; the second collects the
    cross-unit error from regressing the random proxy instead of mu.
    """
    sig = ht_signal(pop, p)
    n = pop.n
    fit = ridge_fit(sig.xw, sig.mu, lam, want_full_hat=True)
    check_loo_feasible(fit.hat_diag)
    gap = 1.0 - fit.hat_diag
    term1 = math.fsum(((sig.xw @ fit.beta - sig.mu) / gap) ** 2) / n**2
    a = sig.t / sig.r
    cross = np.outer(1.0 / gap, a)
    both = fit.hat_full**2 * (cross + cross.T) ** 2
    iu = np.triu_indices(n, k=1)
    term2 = math.fsum(both[iu]) / n**2
    return term1, term2


def loora_ht_variance(pop: Population, p, lam: float) -> float:
    """Exact finite-population variance of LOORA-HT at penalty lam."""
    term1, term2 = loora_ht_variance_terms(pop, p, lam)
    return term1 + term2


def loora_ht_second_term_bound(pop: Population, p, lam: float) -> float:
    """Dimension-based upper bound on the cross-unit variance term.

    (2k / n^2) * ||(1 - h)^{-1}||_inf^2 * ||t / r||_inf^2; the double sum of
    squared off-diagonal leverages is at most k/2 for any penalty.
    """
    sig = ht_signal(pop, p)
    fit = ridge_fit(sig.xw, sig.mu, lam)
    gap = 1.0 - fit.hat_diag
    return (
        2.0
        * pop.k
        / pop.n**2
        * float(np.max(1.0 / gap)) ** 2
        * float(np.max(np.abs(sig.t / sig.r))) ** 2
    )


# ---------------------------------------------------------------------------
# Complete random assignment: DM-side signals and exact variances
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class DmSignal:
    """Signal vectors for DM-side variance under complete assignment."""

    mu: np.ndarray  # n_c * y1 + n_t * y0
    t1: np.ndarray  # n_c^2 * y1 - n_t (n_t - 1) * y0
    t0: np.ndarray  # n_c (n_c - 1) * y1 - n_t^2 * y0


def _check_n_t(pop: Population, n_t: int) -> tuple[int, int]:
    n_t = int(n_t)
    if not 1 <= n_t <= pop.n - 1:
        raise ParameterOutOfRange(f"treated count must satisfy 1 <= n_t <= n - 1, got {n_t}")
    return n_t, pop.n - n_t


def dm_signal(pop: Population, n_t: int) -> DmSignal:
    n_t, n_c = _check_n_t(pop, n_t)
    return DmSignal(
        mu=n_c * pop.y1 + n_t * pop.y0,
        t1=n_c**2 * pop.y1 - n_t * (n_t - 1) * pop.y0,
        t0=n_c * (n_c - 1) * pop.y1 - n_t**2 * pop.y0,
    )


def dm_variance(pop: Population, n_t: int) -> float:
    """Exact DM variance as the centered squared norm of the DM signal."""
    n_t, n_c = _check_n_t(pop, n_t)
    mu = dm_signal(pop, n_t).mu
    centered = mu - math.fsum(mu) / pop.n
    return math.fsum(centered**2) / (n_t * n_c * pop.n * (pop.n - 1))


def dm_variance_neyman(pop: Population, n_t: int) -> float:
    """Exact DM variance in the classical three-term form.

    S^2(y1)/n_t + S^2(y0)/n_c - S^2(effects)/n with (n-1)-divisor variances;
    must agree with dm_variance.
    """
    n_t, n_c = _check_n_t(pop, n_t)

    def s2(v):
        centered = v - math.fsum(v) / pop.n
        return math.fsum(centered**2) / (pop.n - 1)

    return s2(pop.y1) / n_t + s2(pop.y0) / n_c - s2(pop.y1 - pop.y0) / pop.n


def dm_adjusted_variance(pop: Population, n_t: int, b) -> float:
    """Exact variance of covariate-adjusted DM, coefficient on the signal scale.

    The coefficient adjusts the aggregated DM signal (which sums n outcome
    contributions), so it equals n times the per-outcome adjustment: passing
    b here matches DM run on outcomes y - x'(b / n).
    """
    n_t, n_c = _check_n_t(pop, n_t)
    b = as_vector(b, pop.k, "coefficient vector")
    resid = dm_signal(pop, n_t).mu - pop.x @ b
    centered = resid - math.fsum(resid) / pop.n
    return math.fsum(centered**2) / (n_t * n_c * pop.n * (pop.n - 1))


def dm_adjusted_optimal_coef(pop: Population, n_t: int) -> np.ndarray:
    """The fixed adjustment minimizing the adjusted DM variance."""
    mu = dm_signal(pop, n_t).mu
    xc = pop.x - pop.x.mean(axis=0)
    coef, _, _, _ = np.linalg.lstsq(xc, mu - mu.mean(), rcond=None)
    return coef


def dm_adjusted_minimum_variance(pop: Population, n_t: int) -> float:
    """The smallest variance any fixed adjustment can reach for DM."""
    return dm_adjusted_variance(pop, n_t, dm_adjusted_optimal_coef(pop, n_t))


# --- the exact LOORA-DM variance -------------------------------------------
#
# Writing the estimator error as G1 - G2 (signal dispersion minus the
# cross-unit proxy error), the variance splits into T1 = E[G1^2],
# T2 = -2 E[G1 G2], and T3 = E[G2^2]. T3 is a quadratic form in the stacked
# signal vectors (t1, t0) whose coefficients are expectations of products of
# assignment weights over at most four distinct units. Those expectations
# are computed exactly from falling-factorial joint probabilities below,
# classified by the coincidence pattern of the four indices.

# pattern name -> (distinct unit count, unit slot of each of (i, k, j, l))
_PATTERNS = {
    "pair_pair": (2, (0, 1, 0, 1)),  # i = j, k = l
    "shared_i": (3, (0, 1, 0, 2)),  # i = j, k != l
    "shared_k": (3, (0, 2, 1, 2)),  # k = l, i != j
    "crossed": (2, (0, 1, 1, 0)),  # i = l, k = j
    "hooked_left": (3, (0, 1, 2, 0)),  # i = l only
    "hooked_right": (3, (0, 1, 1, 2)),  # k = j only
    "disjoint": (4, (0, 2, 1, 3)),  # all four distinct
}


def _falling(a: int, b: int) -> float:
    out = 1.0
    for step in range(b):
        out *= a - step
    return out


def _weight_product(di: int, dk: int, dj: int, dl: int, n_t: int, n_c: int) -> float:
    """v_i z_i v_k^(-i) z_k v_j z_j v_l^(-j) z_l for one joint arm pattern."""

    def v(d):
        return 1.0 / n_t if d else 1.0 / n_c

    def z(d):
        return 1.0 if d else -1.0

    def v_minus(d_removed, d_kept):
        if d_removed and d_kept:
            return 1.0 / (n_t - 1)
        if d_removed and not d_kept:
            return 1.0 / n_c
        if not d_removed and d_kept:
            return 1.0 / n_t
        return 1.0 / (n_c - 1)

    return (
        v(di) * z(di) * v_minus(di, dk) * z(dk) * v(dj) * z(dj) * v_minus(dj, dl) * z(dl)
    )


def _pattern_tables(n: int, n_t: int) -> dict[str, np.ndarray]:
    """Exact E[weight product | d_i = a, d_j = b] summed over the other arms.

    Returns, per coincidence pattern, a 2 x 2 table indexed by (a, b); entry
    (a, b) multiplies t1-or-t0 at position k (chosen by a) and at position l
    (chosen by b) in the quadratic form.
    """
    n_c = n - n_t
    tables = {}
    for name, (m, (ri, rk, rj, rl)) in _PATTERNS.items():
        table = np.zeros((2, 2))
        for bits in range(1 << m):
            arms = [(bits >> s) & 1 for s in range(m)]
            treated = sum(arms)
            prob = _falling(n_t, treated) * _falling(n_c, m - treated) / _falling(n, m)
            if prob == 0.0:
                continue
            di, dk, dj, dl = arms[ri], arms[rk], arms[rj], arms[rl]
            table[di, dj] += prob * _weight_product(di, dk, dj, dl, n_t, n_c)
        tables[name] = table
    return tables


def _quadratic_geometry(hat_full: np.ndarray, hat_diag: np.ndarray):
    """Leverage-derived arrays every quadratic-form entry is built from."""
    w = 1.0 / (1.0 - hat_diag)
    m2 = hat_full * hat_full
    alpha = hat_full @ w
    uprime = alpha - hat_diag * w
    colsum2 = m2 @ (w * w)
    v2 = colsum2 - hat_diag**2 * w**2
    c_k = uprime**2 - v2
    j_mat = (hat_full * (w * w)[None, :]) @ hat_full
    j_excl = j_mat - (hat_diag * w**2)[:, None] * hat_full - hat_full * (hat_diag * w**2)[None, :]
    return w, m2, uprime, v2, c_k, j_excl


def _quadratic_row_block(
    rows: np.ndarray,
    tables: dict[str, np.ndarray],
    a: int,
    b: int,
    n: int,
    hat_full: np.ndarray,
    w: np.ndarray,
    m2: np.ndarray,
    uprime: np.ndarray,
    v2: np.ndarray,
    c_k: np.ndarray,
    j_excl: np.ndarray,
) -> np.ndarray:
    """Rows [k in rows] of the (a, b) quadratic-form block.

    Entry (k, l) multiplies the k-th entry of the arm-a signal and the l-th
    entry of the arm-b signal in E[G2^2].
    """
    h_kl = hat_full[rows]
    excl_kl = uprime[rows, None] - h_kl * w[None, :]  # sum_{i not in {k,l}} h_ik w_i
    excl_lk = uprime[None, :] - h_kl * w[rows, None]  # sum_{i not in {k,l}} h_il w_i
    block = tables["shared_i"][a, b] * j_excl[rows]
    block += tables["crossed"][a, b] * m2[rows] * np.outer(w[rows], w)
    block += tables["hooked_left"][a, b] * h_kl * w[None, :] * excl_lk
    block += tables["hooked_right"][a, b] * h_kl * w[rows, None] * excl_kl
    block += tables["disjoint"][a, b] * (excl_kl * excl_lk - j_excl[rows])
    diag_value = tables["pair_pair"][a, b] * v2 + tables["shared_k"][a, b] * c_k
    cols = np.arange(n)
    on_diag = rows[:, None] == cols[None, :]
    block = np.where(on_diag, diag_value[None, :], block)
    return block / n**2


def loora_dm_quadratic_blocks(
    pop: Population, n_t: int, lam: float, corrupt: bool = False
) -> dict[tuple[int, int], np.ndarray]:
    """Materialize the four n x n blocks of the cross-unit quadratic form.

    Block (a, b) pairs the arm-a signal with the arm-b signal, so the T3
    variance term is sum_ab t^(a)' Q^(ab) t^(b). Only available up to
    n = 512; beyond that the variance evaluation streams rows instead.

    corrupt=True perturbs one entry; it exists solely as a negative-control
    hook for the verification command.
    """
    n_t, n_c = _check_n_t(pop, n_t)
    if pop.n > QUADRATIC_BLOCK_MAX_N:
        raise ParameterOutOfRange(
            f"quadratic-form blocks are materialized only for n <= {QUADRATIC_BLOCK_MAX_N}"
        )
    sig = dm_signal(pop, n_t)
    fit = ridge_fit(pop.x, sig.mu, lam, want_full_hat=True)
    check_loo_feasible(fit.hat_diag)
    tables = _pattern_tables(pop.n, n_t)
    geometry = _quadratic_geometry(fit.hat_full, fit.hat_diag)
    rows = np.arange(pop.n)
    blocks = {
        (a, b): _quadratic_row_block(rows, tables, a, b, pop.n, fit.hat_full, *geometry)
        for a in (0, 1)
        for b in (0, 1)
    }
    if corrupt:
        j = 1 % pop.n
        blocks[(1, 1)] = blocks[(1, 1)].copy()
        blocks[(1, 1)][0, j] += 1e-3 * (1.0 + abs(blocks[(1, 1)][0, j]))
    return blocks


def _loora_dm_t3(
    pop: Population, n_t: int, lam: float, corrupt: bool = False
) -> float:
    n = pop.n
    n_t, n_c = _check_n_t(pop, n_t)
    sig = dm_signal(pop, n_t)
    signals = {1: sig.t1, 0: sig.t0}
    if n <= QUADRATIC_BLOCK_MAX_N:
        blocks = loora_dm_quadratic_blocks(pop, n_t, lam, corrupt=corrupt)
        contribs = []
        for k in range(n):
            contribs.append(
                math.fsum(
                    signals[a][k] * float(blocks[(a, b)][k] @ signals[b])
                    for a in (0, 1)
                    for b in (0, 1)
                )
            )
        return math.fsum(contribs)
    # Streamed path: generate rows in chunks, never materializing 2n x 2n.
    fit = ridge_fit(pop.x, sig.mu, lam, want_full_hat=True)
    check_loo_feasible(fit.hat_diag)
    tables = _pattern_tables(n, n_t)
    geometry = _quadratic_geometry(fit.hat_full, fit.hat_diag)
    contribs = []
    chunk = 256
    for start in range(0, n, chunk):
        rows = np.arange(start, min(start + chunk, n))
        for a in (0, 1):
            for b in (0, 1):
                block = _quadratic_row_block(
                    rows, tables, a, b, n, fit.hat_full, *geometry
                )
                row_dots = block @ signals[b]
                contribs.extend(
                    (signals[a][row] * float(dot) for row, dot in zip(rows, row_dots))
                )
    return math.fsum(contribs)


def loora_dm_variance_terms(
    pop: Population, n_t: int, lam: float, allow_n4: bool = False, corrupt_q: bool = False
) -> tuple[float, float, float]:
    """The three pieces of the exact LOORA-DM variance.

    T1 is the centered, leverage-corrected dispersion of the adjusted DM
    signal; T2 the signal-by-proxy cross term; T3 the quadratic form of the
    proxy error. Requires n_t >= 2 and n_c >= 2; n = 4 (where the four-unit
    expectations rest on a single remaining pair) needs the explicit opt-in.
    """
    n = pop.n
    n_t, n_c = _check_n_t(pop, n_t)
    if n_t < 2 or n_c < 2:
        raise ParameterOutOfRange("exact LOORA-DM variance requires n_t >= 2 and n_c >= 2")
    if n == 4 and not allow_n4:
        raise ParameterOutOfRange(
            "n = 4 sits on the formula's denominator boundary (n - 3 = 1); "
            "pass allow_n4=True to evaluate anyway"
        )
    if n < 4:
        raise ParameterOutOfRange("exact LOORA-DM variance requires n >= 4")
    sig = dm_signal(pop, n_t)
    fit = ridge_fit(pop.x, sig.mu, lam, want_full_hat=True)
    check_loo_feasible(fit.hat_diag)
    h = fit.hat_diag
    hat = fit.hat_full
    w = 1.0 / (1.0 - h)
    resid = (sig.mu - pop.x @ fit.beta) * w
    resid_bar = math.fsum(resid) / n
    t1_term = math.fsum((resid - resid_bar) ** 2) / (n * (n - 1) * n_t * n_c)

    uprime = hat @ w - h * w
    proxy = hat @ sig.mu - h * sig.mu  # sum_{k != j} h_jk mu_k, per j
    cross_a = math.fsum(resid * sig.mu * uprime)
    total_wp = math.fsum(w * proxy)
    cross_b = math.fsum(resid * ((total_wp - w * proxy) - sig.mu * uprime))
    t2_term = -2.0 * (cross_a - cross_b / (n - 2)) / (n**2 * (n - 1) * n_t * n_c)

    t3_term = _loora_dm_t3(pop, n_t, lam, corrupt=corrupt_q)
    return t1_term, t2_term, t3_term


def loora_dm_variance(
    pop: Population, n_t: int, lam: float, allow_n4: bool = False, corrupt_q: bool = False
) -> float:
    """Exact finite-population variance of LOORA-DM at penalty lam."""
    t1, t2, t3 = loora_dm_variance_terms(pop, n_t, lam, allow_n4=allow_n4, corrupt_q=corrupt_q)
    return math.fsum((t1, t2, t3))


# ---------------------------------------------------------------------------
# Asymptotic benchmark variance and brute-force moments
# ---------------------------------------------------------------------------


def _centered_residuals(pop: Population, outcomes: np.ndarray) -> np.ndarray:
    xc = pop.x - pop.x.mean(axis=0)
    yc = outcomes - math.fsum(outcomes) / pop.n
    coef, _, rank, _ = np.linalg.lstsq(xc, yc, rcond=None)
    if rank < pop.k:
        raise RankDeficient("centered covariates are rank-deficient")
    return xc @ coef - yc


def lin_asymptotic_variance(pop: Population, p_t: float) -> float:
    """Finite-n value of the interacted-adjustment asymptotic variance.

    ((1 - p) / p) sT^2 + (p / (1 - p)) sC^2 + 2 sTC, with each sigma built
    from the centered least-squares residuals of the respective potential
    outcome vector. This is the efficiency benchmark both leave-one-out
    estimators attain in large samples.
    """
    p_t = float(p_t)
    if not 0.0 < p_t < 1.0:
        raise InvalidInput(f"treated fraction must lie in (0, 1), got {p_t}")
    e_t = _centered_residuals(pop, pop.y1)
    e_c = _centered_residuals(pop, pop.y0)
    n = pop.n
    s_t = math.fsum(e_t**2) / n
    s_c = math.fsum(e_c**2) / n
    s_tc = math.fsum(e_t * e_c) / n
    return (1.0 - p_t) / p_t * s_t + p_t / (1.0 - p_t) * s_c + 2.0 * s_tc


def lin_asymptotic_variance_projection(pop: Population, p_t: float) -> float:
    """The same benchmark as a single centered projection of the HT signal."""
    p_t = float(p_t)
    if not 0.0 < p_t < 1.0:
        raise InvalidInput(f"treated fraction must lie in (0, 1), got {p_t}")
    mu = np.sqrt((1.0 - p_t) / p_t) * pop.y1 + np.sqrt(p_t / (1.0 - p_t)) * pop.y0
    return math.fsum(_centered_residuals(pop, mu) ** 2) / pop.n


def enumeration_moments(
    pop: Population,
    spec: DesignSpec,
    method: Method,
    rule: LambdaRule | None = None,
    allow_design_mismatch: bool = False,
) -> tuple[float, float]:
    """Exact mean and variance of an estimator over the assignment design.

    Walks every possible assignment with its probability; the definitive
    oracle behind the unbiasedness and exact-variance certifications.
    """
    rule = rule if rule is not None else LambdaRule.auto(2.0)
    values, probs = [], []
    for assignment, prob in enumerate_assignments(spec):
        sample = observed_sample(pop, assignment, spec)
        values.append(estimate(method, sample, rule, allow_design_mismatch))
        probs.append(prob)
    mean = math.fsum(p * v for p, v in zip(probs, values))
    variance = math.fsum(p * (v - mean) ** 2 for p, v in zip(probs, values))
    return mean, variance
