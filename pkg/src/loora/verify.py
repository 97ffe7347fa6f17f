"""On-demand certification suites behind the `verify` CLI command.

Each check pits an implementation against an independent route: closed-form
variances against brute-force enumeration over every assignment, fast
leave-one-out paths against literal refits, leverage caps against randomized
matrices, and the large-sample variance against its analytic benchmark.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .design import CompleteDesign, SimpleDesign, draw_with
from .estimators import (
    LambdaRule,
    Method,
    estimate_loora_dm,
    estimate_loora_dm_pairwise,
    estimate_loora_ht,
)
from .linalg import leverage_regularizer, ridge_leverages_svd
from .oracle import (
    Population,
    enumeration_moments,
    lin_asymptotic_variance,
    loora_dm_variance,
    loora_ht_variance,
    observed_sample,
)
from .simulation import StudyConfig, run_study, synth_population

CORE_CHECKS = (
    "unbiasedness",
    "variance-ht-exact",
    "variance-dm-exact",
    "loo-identities",
    "leverage-bound",
    "pairwise-equivalence",
)
OPTIONAL_CHECKS = ("lin-equivalence",)


@dataclass(frozen=True)
class CheckResult:
    name: str
    passed: bool
    worst: float
    tolerance: float
    detail: str


def _rel_gap(a: float, b: float) -> float:
    return abs(a - b) / max(1.0, abs(a), abs(b))


def _random_population(rng, n, k) -> Population:
    x = rng.standard_normal((n, k))
    x /= np.maximum(x.std(axis=0), 1e-9)
    y1 = rng.standard_normal(n) + 1.0
    y0 = rng.standard_normal(n)
    return Population(x, y1, y0)


def check_unbiasedness(seed: int = 0, trials: int = 25) -> CheckResult:
    """Enumeration mean of both leave-one-out estimators equals the ATE."""
    rng = np.random.default_rng(seed)
    tol = 1e-11
    worst = 0.0
    for _ in range(trials):
        n = int(rng.integers(4, 8))
        k = int(rng.integers(1, 3))
        pop = _random_population(rng, n, k)
        p = rng.uniform(0.25, 0.75, n)
        mean, _ = enumeration_moments(pop, SimpleDesign(p), Method.LOORA_HT)
        worst = max(worst, _rel_gap(mean, pop.tau))
        n_t = max(2, min(n - 2, int(rng.integers(2, n - 1))))
        mean, _ = enumeration_moments(pop, CompleteDesign(n, n_t), Method.LOORA_DM)
        worst = max(worst, _rel_gap(mean, pop.tau))
    return CheckResult("unbiasedness", worst <= tol, worst, tol, f"{2 * trials} enumerations")


def check_variance_ht_exact(seed: int = 1, trials: int = 15) -> CheckResult:
    """Closed-form LOORA-HT variance equals the enumeration variance."""
    rng = np.random.default_rng(seed)
    tol = 1e-9
    worst = 0.0
    for _ in range(trials):
        n = int(rng.integers(4, 8))
        k = int(rng.integers(1, 3))
        pop = _random_population(rng, n, k)
        p = rng.uniform(0.3, 0.7, n)
        for rule in (LambdaRule.auto(2.0), LambdaRule.fixed(0.0)):
            r = np.sqrt(p * (1.0 - p))
            lam = rule.resolve(pop.x / r[:, None])
            _, enum_var = enumeration_moments(pop, SimpleDesign(p), Method.LOORA_HT, rule)
            worst = max(worst, _rel_gap(loora_ht_variance(pop, p, lam), enum_var))
    return CheckResult("variance-ht-exact", worst <= tol, worst, tol, f"{2 * trials} fixtures")


def check_variance_dm_exact(seed: int = 2, trials: int = 15, corrupt_q: bool = False) -> CheckResult:
    """Closed-form LOORA-DM variance (with its cross-unit quadratic form)
    equals the enumeration variance; corrupt_q perturbs one quadratic-form
    entry as a negative control."""
    rng = np.random.default_rng(seed)
    tol = 1e-9
    worst = 0.0
    for _ in range(trials):
        n = int(rng.integers(5, 8))
        k = int(rng.integers(1, 3))
        pop = _random_population(rng, n, k)
        n_t = int(rng.integers(2, n - 1))
        if n - n_t < 2:
            n_t = n - 2
        for rule in (LambdaRule.auto(2.0), LambdaRule.fixed(0.0)):
            lam = rule.resolve(pop.x)
            _, enum_var = enumeration_moments(pop, CompleteDesign(n, n_t), Method.LOORA_DM, rule)
            formula = loora_dm_variance(pop, n_t, lam, corrupt_q=corrupt_q)
            worst = max(worst, _rel_gap(formula, enum_var))
    return CheckResult("variance-dm-exact", worst <= tol, worst, tol, f"{2 * trials} fixtures")


def check_loo_identities(seed: int = 3, trials: int = 10) -> CheckResult:
    """Hat-identity estimator paths equal literal per-unit refits."""
    rng = np.random.default_rng(seed)
    tol = 1e-9
    worst = 0.0
    rule = LambdaRule.auto(2.0)
    for trial in range(trials):
        n = int(rng.integers(10, 30))
        k = int(rng.integers(1, 5))
        pop = _random_population(rng, n, k)
        p = rng.uniform(0.3, 0.7, n)
        spec_s = SimpleDesign(p)
        rng_draw = np.random.default_rng(seed + 1000 + trial)
        a = draw_with(spec_s, rng_draw)
        s = observed_sample(pop, a, spec_s)
        worst = max(worst, _rel_gap(estimate_loora_ht(s, rule), estimate_loora_ht(s, rule, refit=True)))
        n_t = n // 2
        spec_c = CompleteDesign(n, n_t)
        a = draw_with(spec_c, rng_draw)
        s = observed_sample(pop, a, spec_c)
        worst = max(
            worst, _rel_gap(estimate_loora_dm(s, rule), estimate_loora_dm(s, rule, refit=True))
        )
    return CheckResult("loo-identities", worst <= tol, worst, tol, f"{2 * trials} fixtures")


def check_leverage_bound(seed: int = 4, trials: int = 200) -> CheckResult:
    """Ridge leverages at the capped penalty stay below 1 / (1 + c)."""
    rng = np.random.default_rng(seed)
    tol = 1e-12
    worst = -np.inf
    for _ in range(trials):
        n = int(rng.integers(3, 21))
        k = int(rng.integers(1, 7))
        x = rng.standard_t(df=2, size=(n, k))  # heavy-tailed rows
        for c in (0.5, 1.0, 2.0, 5.0):
            lam = leverage_regularizer(x, c)
            h = ridge_leverages_svd(x, lam)
            worst = max(worst, float(np.max(h)) - 1.0 / (1.0 + c))
    return CheckResult("leverage-bound", worst <= tol, worst, tol, f"{trials} matrices x 4 caps")


def check_pairwise_equivalence(seed: int = 5, trials: int = 10) -> CheckResult:
    """The pairwise leave-two-out form reproduces the LOORA-DM value."""
    rng = np.random.default_rng(seed)
    tol = 1e-9
    worst = 0.0
    rule = LambdaRule.auto(2.0)
    for trial in range(trials):
        n = int(rng.integers(6, 16))
        k = int(rng.integers(1, 4))
        pop = _random_population(rng, n, k)
        # The pairwise rewriting needs both arms to hold at least two units;
        # a singleton arm's rescaled outcome carries a 0 * undefined weight.
        n_t = int(rng.integers(2, n - 1))
        spec = CompleteDesign(n, n_t)
        a = draw_with(spec, np.random.default_rng(seed + trial))
        s = observed_sample(pop, a, spec)
        worst = max(
            worst,
            _rel_gap(estimate_loora_dm(s, rule), estimate_loora_dm_pairwise(s, rule)),
        )
    return CheckResult("pairwise-equivalence", worst <= tol, worst, tol, f"{trials} fixtures")


def check_lin_equivalence(n: int = 5000, reps: int = 5000, seed: int = 6) -> CheckResult:
    """Monte Carlo variance of LOORA-HT matches the analytic benchmark.

    With equal assignment probabilities, centered covariates plus an
    intercept, the scaled variance converges to the interacted-adjustment
    asymptotic variance; this checks the finite-n value within 5%.
    """
    k = 5
    pop = synth_population("linear-heterogeneous", n, k, seed)
    target = lin_asymptotic_variance(pop, 0.5)
    x_aug = np.column_stack([np.ones(pop.n), pop.x])
    pop_est = Population(x_aug, pop.y1, pop.y0)
    cfg = StudyConfig(
        design="simple-half", methods=("LOORA_HT",), reps=reps, level=0.95, seed=seed
    )
    report = run_study(pop_est, cfg)
    got = n * report.stats[0].std ** 2
    worst = abs(got - target) / target
    return CheckResult(
        "lin-equivalence",
        worst <= 0.05,
        worst,
        0.05,
        f"n={n} reps={reps} scaled MC variance {got:.6f} vs benchmark {target:.6f}",
    )


def run_checks(names, seed: int = 0, n: int = 5000, corrupt_q: bool = False) -> list[CheckResult]:
    results = []
    for name in names:
        if name == "unbiasedness":
            results.append(check_unbiasedness(seed))
        elif name == "variance-ht-exact":
            results.append(check_variance_ht_exact(seed + 1))
        elif name == "variance-dm-exact":
            results.append(check_variance_dm_exact(seed + 2, corrupt_q=corrupt_q))
        elif name == "loo-identities":
            results.append(check_loo_identities(seed + 3))
        elif name == "leverage-bound":
            results.append(check_leverage_bound(seed + 4))
        elif name == "pairwise-equivalence":
            results.append(check_pairwise_equivalence(seed + 5))
        elif name == "lin-equivalence":
            results.append(check_lin_equivalence(n=n, seed=seed + 6))
        else:
            raise ValueError(f"unknown check {name!r}")
    return results
