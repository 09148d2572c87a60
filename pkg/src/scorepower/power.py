"""Score-gap Monte Carlo, normal-approximation power, minimal n, and tuning.

The gap for one trial is the forecast's score minus the ground truth's score
on the same realized outcome.  Powers come from the normal approximation of
the n-trial ensemble mean; epsilon tuning bisects the discrepancy size until
the likelihood score reaches a target power, either from closed-form gap
moments or from a fixed common-random-number Monte Carlo sample.
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.special import ndtr, ndtri
from scipy.stats import kurtosis as _kurtosis

from . import rng
from .distributions import log_density, sample
from .scoring import RankDeficientError, RuleKind, ScoringRule, evaluate
from .testcases import CasePair, TestCaseId, case_info, make_case

__all__ = [
    "TrialConfig",
    "DeltaStats",
    "PowerResult",
    "BracketError",
    "estimate_delta",
    "power_from_stats",
    "n_min",
    "tune_epsilon",
    "power_analysis",
]

DEFAULT_TUNE_SEED = 1777


class BracketError(ValueError):
    """The tuning search could not bracket the target power."""


@dataclass(frozen=True)
class TrialConfig:
    case: CasePair
    rule: ScoringRule
    m: int
    n: int
    K: int
    alpha: float
    seed: int

    def __post_init__(self):
        if self.K < 2:
            raise ValueError(f"need K >= 2 trials, got {self.K}")
        if not 0.0 < self.alpha < 1.0:
            raise ValueError(f"alpha must be in (0, 1), got {self.alpha}")
        if self.n < 1:
            raise ValueError(f"need n >= 1, got {self.n}")
        if self.m < 1:
            raise ValueError(f"need m >= 1, got {self.m}")


@dataclass(frozen=True)
class DeltaStats:
    mean: float
    stddev: float
    K: int
    excess_kurtosis: float
    deltas: Optional[np.ndarray] = None


@dataclass(frozen=True)
class PowerResult:
    power: float
    n_min_80: float
    stats: DeltaStats
    degenerate: bool = False


def _trial_outcome(case: CasePair, seed: int, k: int) -> np.ndarray:
    return sample(case.ground_truth, 1, rng.derive_seed(seed, "trial", k, 0))[0]


def _trial_delta(case: CasePair, rule: ScoringRule, m: int, seed: int, k: int) -> float:
    y = _trial_outcome(case, seed, k)
    x_gt = sample(case.ground_truth, m, rng.derive_seed(seed, "trial", k, 1))
    x_f = sample(case.forecast, m, rng.derive_seed(seed, "trial", k, 2))
    try:
        return evaluate(rule, y, sample=x_f) - evaluate(rule, y, sample=x_gt)
    except ValueError as exc:
        raise type(exc)(f"trial {k}: {exc}") from exc


def estimate_delta(case: CasePair, rule: ScoringRule, m: int, K: int, seed: int,
                   workers: Optional[int] = None,
                   keep_deltas: bool = False) -> DeltaStats:
    """Score gaps over K trials with per-trial derived seeds.

    The result is bit-identical for any worker count: trial k always consumes
    the substreams derived from (seed, k), and aggregation runs in trial
    order over the filled array.
    """
    if K < 2:
        raise ValueError(f"need K >= 2 trials, got {K}")
    if m < 1:
        raise ValueError(f"need m >= 1, got {m}")
    if rule.kind is RuleKind.DS and m <= case.d:
        raise RankDeficientError(
            f"Dawid-Sebastiani needs m > d; got m={m}, d={case.d}"
        )
    deltas = np.empty(K)
    if rule.kind is RuleKind.NLL:
        # densities only, no forecast samples drawn; the outcome of trial k
        # still comes from its own derived stream, densities batch row-wise
        ys = np.stack([_trial_outcome(case, seed, k) for k in range(K)])
        deltas[:] = log_density(case.ground_truth, ys) - log_density(case.forecast, ys)
    elif workers is None or workers <= 1:
        for k in range(K):
            deltas[k] = _trial_delta(case, rule, m, seed, k)
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            futures = {
                pool.submit(_trial_delta, case, rule, m, seed, k): k
                for k in range(K)
            }
            for fut, k in futures.items():
                deltas[k] = fut.result()
    mean = float(np.mean(deltas))
    stddev = float(np.std(deltas, ddof=1))
    kurt = 0.0 if stddev == 0.0 else float(_kurtosis(deltas, fisher=True, bias=True))
    return DeltaStats(mean, stddev, K, kurt, deltas if keep_deltas else None)


def power_from_stats(stats: DeltaStats, n: int, alpha: float) -> PowerResult:
    """Normal-approximation power of the level-alpha one-sided gap test."""
    if n < 1:
        raise ValueError(f"need n >= 1, got {n}")
    if not 0.0 < alpha < 1.0:
        raise ValueError(f"alpha must be in (0, 1), got {alpha}")
    if stats.stddev == 0.0:
        # the gap is deterministic; the test is degenerate at this n
        power = 1.0 if stats.mean > 0.0 else alpha
        return PowerResult(power, n_min(stats, alpha, 0.80), stats, degenerate=True)
    if stats.mean == 0.0:
        # central statistic: the rejection rate is alpha by construction,
        # not subject to the ndtr/ndtri round-trip error
        return PowerResult(alpha, n_min(stats, alpha, 0.80), stats)
    z = ndtri(1.0 - alpha)
    power = float(ndtr(math.sqrt(n) * stats.mean / stats.stddev - z))
    return PowerResult(power, n_min(stats, alpha, 0.80), stats)


def n_min(stats: DeltaStats, alpha: float, target_power: float):
    """Smallest n whose approximate power reaches the target; inf if none."""
    if not 0.0 < target_power < 1.0:
        raise ValueError(f"target power must be in (0, 1), got {target_power}")
    if not 0.0 < alpha < 1.0:
        raise ValueError(f"alpha must be in (0, 1), got {alpha}")
    if stats.mean <= 0.0:
        return math.inf
    if stats.stddev == 0.0:
        return 1
    z_sum = ndtri(1.0 - alpha) + ndtri(target_power)
    return max(1, math.ceil((z_sum * stats.stddev / stats.mean) ** 2))


def power_analysis(config: TrialConfig, workers: Optional[int] = None,
                   keep_deltas: bool = False) -> PowerResult:
    stats = estimate_delta(config.case, config.rule, config.m, config.K,
                           config.seed, workers=workers, keep_deltas=keep_deltas)
    return power_from_stats(stats, config.n, config.alpha)


# ---------------------------------------------------------------------------
# epsilon tuning

def _structured_eigenvalues(family: str, d: int, eps: float) -> np.ndarray:
    if family in ("covariance-block", "covariance-checker") and d % 2:
        raise ValueError(f"{family} requires even d, got d={d}")
    if family == "covariance-block":
        return np.concatenate([np.full(d // 2, 1.0 + eps), np.full(d // 2, 1.0 - eps)])
    # full-constant and checker share the same eigenvalue multiset
    return np.concatenate([[1.0 + (d - 1) * eps], np.full(d - 1, 1.0 - eps)])


def _analytic_ratio(info, d: int, eps: float) -> float:
    """Closed-form mean/stddev of the per-realization likelihood gap."""
    k = 1 if info.scope == "single" else d
    if info.family == "normal-mean":
        return math.sqrt(k) * abs(eps) / 2.0
    if info.family == "normal-std":
        if eps == 1.0:
            return 0.0
        mu1 = (eps * eps - 1.0) / 2.0 - math.log(eps)
        var1 = (eps * eps - 1.0) ** 2 / 2.0
        return math.sqrt(k) * mu1 / math.sqrt(var1)
    if info.family.startswith("covariance-"):
        if d < 2:
            raise ValueError(f"covariance cases need d >= 2, got d={d}")
        if eps == 0.0:
            return 0.0
        lam = _structured_eigenvalues(info.family, d, eps)
        if info.variant == "missing":
            mu = 0.5 * float(np.sum(lam - 1.0 - np.log(lam)))
            var = 0.5 * float(np.sum((lam - 1.0) ** 2))
        else:
            mu = 0.5 * float(np.sum(np.log(lam) + 1.0 / lam - 1.0))
            var = 0.5 * float(np.sum((1.0 / lam - 1.0) ** 2))
        return mu / math.sqrt(var)
    raise ValueError(
        f"no closed-form gap moments for family {info.family!r}; use monte_carlo"
    )


def _mc_ratio(case_id: TestCaseId, d: int, eps: float, mc_sample: int, seed: int) -> float:
    # one fixed stream across all eps probes: the samplers consume their base
    # draws independently of eps, so power varies smoothly during bisection
    pair = make_case(case_id, d, eps)
    y = sample(pair.ground_truth, mc_sample,
               rng.derive_seed(seed, "tune", case_id.value, d))
    deltas = log_density(pair.ground_truth, y) - log_density(pair.forecast, y)
    sd = float(np.std(deltas, ddof=1))
    if sd == 0.0:
        return 0.0
    return float(np.mean(deltas)) / sd


def _candidate_epsilons(info):
    identity = info.identity_epsilon
    sign = 1.0 if info.direction == "up" else -1.0
    if info.epsilon_bound is None:
        for k in range(60):
            yield identity + sign * 0.1 * 2.0 ** k
    else:
        span = info.epsilon_bound - identity
        for k in range(60):
            yield identity + span * (1.0 - 2.0 ** (-(k + 1.0)))


def tune_epsilon(case_id: TestCaseId, d: int, target_power: float = 0.8,
                 alpha: float = 0.05, n: int = 30, method: Optional[str] = None,
                 mc_sample: int = 10_000, seed: int = DEFAULT_TUNE_SEED) -> float:
    """Discrepancy size at which the likelihood score hits the target power.

    method "analytic" uses closed-form gap moments (normal mean/std and the
    Gaussian covariance families); "monte_carlo" estimates them from one
    fixed-seed sample; None picks analytic where available.
    """
    info = case_info(case_id)
    if not 0.0 < target_power < 1.0:
        raise ValueError(f"target power must be in (0, 1), got {target_power}")
    if method is None:
        method = "analytic" if info.analytic else "monte_carlo"
    if method not in ("analytic", "monte_carlo"):
        raise ValueError(f"unknown method {method!r}")
    if method == "analytic" and not info.analytic:
        raise ValueError(
            f"{case_id.value} has no closed-form gap moments; use method='monte_carlo'"
        )

    if method == "analytic":
        ratio = lambda eps: _analytic_ratio(info, d, eps)
    else:
        ratio = lambda eps: _mc_ratio(case_id, d, eps, mc_sample, seed)
    z = ndtri(1.0 - alpha)
    power = lambda eps: float(ndtr(math.sqrt(n) * ratio(eps) - z))

    # bracket: power at identity is alpha < target; expand toward the bound
    lo = info.identity_epsilon
    hi = None
    last = lo
    for cand in _candidate_epsilons(info):
        last = cand
        if power(cand) >= target_power:
            hi = cand
            break
        lo = cand
    if hi is None:
        a, b = sorted((info.identity_epsilon, last))
        raise BracketError(
            f"{case_id.value} at d={d}: target power {target_power} not reachable; "
            f"searched epsilon in [{a:.6g}, {b:.6g}]"
        )

    # closed-form probes are cheap, so run the bisection to full precision;
    # Monte Carlo probes stop once the bracket is negligible next to epsilon
    width_tol = 1e-14 if method == "analytic" else 1e-6
    for _ in range(500):
        mid = 0.5 * (lo + hi)
        if abs(hi - lo) < width_tol * max(abs(mid), 1e-12):
            return mid
        if power(mid) >= target_power:
            hi = mid
        else:
            lo = mid
        if lo == hi or not math.isfinite(mid):
            break
    return 0.5 * (lo + hi)
