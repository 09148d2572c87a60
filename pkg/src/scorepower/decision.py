"""Newsvendor-style commitment planning on scenario sets, plus perturbation
operators and a leave-one-out power scheme for empirical samples.

A scenario set holds non-negative production paths (scenarios x plants x
periods).  Committing s for a period earns s but pays a penalty factor on
any shortfall against the realized total, so the optimal commitment is the
order statistic at level 1/penalty of the scenario totals.
"""
from __future__ import annotations

import io
import math
from dataclasses import dataclass, field
from itertools import combinations
from typing import Callable, Dict, Optional

import numpy as np
from scipy.stats import kurtosis as _kurtosis

from . import rng
from .power import DeltaStats, PowerResult, power_from_stats
from .scoring import ScoringRule, evaluate

__all__ = [
    "ScenarioSet",
    "Plan",
    "optimal_commitments",
    "expected_profit",
    "select_plants",
    "perturb",
    "make_perturbation",
    "loo_power",
    "scenarios_to_csv",
    "scenarios_from_csv",
    "empirical_from_csv",
    "plan_to_json",
    "profit_report",
]

SCENARIO_CSV_HEADER = "scenario,plant,period,value"
TIE_BREAK_NOTE = "ties broken toward fewer plants, then lexicographic plant index"


@dataclass(frozen=True)
class ScenarioSet:
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.ndim != 3:
            raise ValueError(f"scenario tensor must be 3-d (scenarios, plants, periods), got shape {v.shape}")
        if v.shape[0] < 2:
            raise ValueError(f"need at least 2 scenarios, got {v.shape[0]}")
        if not np.isfinite(v).all():
            raise ValueError("scenario values must be finite")
        if (v < 0).any():
            raise ValueError("scenario values must be non-negative")
        object.__setattr__(self, "values", v)

    @property
    def n_scenarios(self) -> int:
        return self.values.shape[0]

    @property
    def n_plants(self) -> int:
        return self.values.shape[1]

    @property
    def n_periods(self) -> int:
        return self.values.shape[2]


@dataclass
class Plan:
    active: np.ndarray
    commitments: np.ndarray
    meta: Dict = field(default_factory=dict)

    def __post_init__(self):
        self.active = np.asarray(self.active, dtype=bool)
        self.commitments = np.asarray(self.commitments, dtype=float)
        if (self.commitments < 0).any():
            raise ValueError("commitments must be non-negative")


def _totals(scenarios: ScenarioSet, active: np.ndarray) -> np.ndarray:
    active = np.asarray(active, dtype=bool)
    if active.shape != (scenarios.n_plants,):
        raise ValueError(
            f"active vector must have length {scenarios.n_plants}, got shape {active.shape}")
    return scenarios.values[:, active, :].sum(axis=1)


def optimal_commitments(scenarios: ScenarioSet, active: np.ndarray, penalty: float) -> np.ndarray:
    """Per-period commitment maximizing the empirical shortfall objective.

    The maximizer of s - penalty * mean(max(0, s - totals)) is the order
    statistic of the totals at rank ceil(K/penalty); on plateaus the smaller
    value is taken.
    """
    if penalty <= 1.0:
        raise ValueError(f"penalty factor must exceed 1, got {penalty}")
    active = np.asarray(active, dtype=bool)
    if not active.any():
        return np.zeros(scenarios.n_periods)
    totals = np.sort(_totals(scenarios, active), axis=0)
    k = scenarios.n_scenarios
    rank = math.ceil(k / penalty)
    return totals[rank - 1, :].copy()


def expected_profit(scenarios: ScenarioSet, plan: Plan, penalty: float) -> float:
    if penalty <= 1.0:
        raise ValueError(f"penalty factor must exceed 1, got {penalty}")
    if plan.commitments.shape != (scenarios.n_periods,):
        raise ValueError(
            f"commitments must have length {scenarios.n_periods}, got shape {plan.commitments.shape}")
    totals = _totals(scenarios, plan.active)
    shortfall = np.maximum(0.0, plan.commitments[None, :] - totals)
    per_scenario = plan.commitments.sum() - penalty * shortfall.sum(axis=1)
    return float(np.mean(per_scenario))


def _plan_for(scenarios: ScenarioSet, active: np.ndarray, penalty: float) -> Plan:
    return Plan(active, optimal_commitments(scenarios, active, penalty))


def select_plants(scenarios: ScenarioSet, M: int, penalty: float,
                  strategy: str = "exhaustive") -> Plan:
    """Best plant subset of size at most M under optimal commitments."""
    if M < 0:
        raise ValueError(f"M must be non-negative, got {M}")
    n = scenarios.n_plants
    if strategy == "exhaustive":
        if n > 20:
            raise ValueError(f"exhaustive search is limited to 20 plants, got {n}")
        best_active = np.zeros(n, dtype=bool)
        best_profit = 0.0
        for size in range(1, min(M, n) + 1):
            for subset in combinations(range(n), size):
                active = np.zeros(n, dtype=bool)
                active[list(subset)] = True
                profit = expected_profit(scenarios, _plan_for(scenarios, active, penalty), penalty)
                if profit > best_profit:
                    best_profit = profit
                    best_active = active
    elif strategy == "greedy":
        best_active = np.zeros(n, dtype=bool)
        best_profit = 0.0
        while best_active.sum() < min(M, n):
            gain_active = None
            gain_profit = best_profit
            for i in range(n):
                if best_active[i]:
                    continue
                candidate = best_active.copy()
                candidate[i] = True
                profit = expected_profit(scenarios, _plan_for(scenarios, candidate, penalty), penalty)
                if profit > gain_profit:
                    gain_profit = profit
                    gain_active = candidate
            if gain_active is None:
                break
            best_active = gain_active
            best_profit = gain_profit
    else:
        raise ValueError(f"unknown strategy {strategy!r}")
    plan = _plan_for(scenarios, best_active, penalty)
    plan.meta = {"strategy": strategy, "penalty": penalty, "M": M,
                 "expected_profit": best_profit, "tie_break": TIE_BREAK_NOTE}
    return plan


# ---------------------------------------------------------------------------
# perturbation operators on empirical samples

def _check_sample(sample: np.ndarray, min_rows: int = 1) -> np.ndarray:
    sample = np.asarray(sample, dtype=float)
    if sample.ndim != 2:
        raise ValueError(f"sample must be 2-d (rows, variables), got shape {sample.shape}")
    if sample.shape[0] < min_rows:
        raise ValueError(f"need at least {min_rows} rows, got {sample.shape[0]}")
    if not np.isfinite(sample).all():
        raise ValueError("sample entries must be finite")
    return sample


def perturb(sample: np.ndarray, kind: str, value: Optional[float] = None,
            seed: int = 0) -> np.ndarray:
    """break_correlations shuffles each column independently; scale and shift
    apply the constant to every entry."""
    if kind == "break_correlations":
        sample = _check_sample(sample, min_rows=2)
        gen = rng.derive(seed, "break-correlations")
        out = np.empty_like(sample)
        for j in range(sample.shape[1]):
            out[:, j] = sample[gen.permutation(sample.shape[0]), j]
        return out
    if kind == "scale":
        if value is None:
            raise ValueError("scale needs a factor")
        return _check_sample(sample) * value
    if kind == "shift":
        if value is None:
            raise ValueError("shift needs an offset")
        return _check_sample(sample) + value
    raise ValueError(f"unknown perturbation {kind!r}")


def make_perturbation(kind: str, value: Optional[float] = None) -> Callable:
    """Row-seedable closure for loo_power; identity passes kind=None."""
    if kind is None:
        return lambda sample, seed: sample
    if kind not in ("break_correlations", "scale", "shift"):
        raise ValueError(f"unknown perturbation {kind!r}")
    return lambda sample, seed: perturb(sample, kind, value=value, seed=seed)


def loo_power(gt_sample: np.ndarray, perturbation: Callable, rule: ScoringRule,
              n: int, alpha: float, seed: int = 0) -> PowerResult:
    """Leave-one-out power on a single empirical sample.

    Row i is the outcome; the remaining rows act as the reference ensemble
    and, perturbed, as the forecast ensemble.  Rows are reused across the
    gap values, so the estimate leans toward higher power than independent
    trials would give.
    """
    if rule.needs_density:
        raise ValueError(f"{rule.label} needs a density; leave-one-out works on sample rules")
    gt_sample = _check_sample(gt_sample, min_rows=3)
    m = gt_sample.shape[0]
    deltas = np.empty(m)
    for i in range(m):
        y = gt_sample[i]
        others = np.delete(gt_sample, i, axis=0)
        forecast = perturbation(others, rng.derive_seed(seed, "loo", i))
        deltas[i] = evaluate(rule, y, sample=forecast) - evaluate(rule, y, sample=others)
    mean = float(np.mean(deltas))
    sd = float(np.std(deltas, ddof=1))
    kurt = 0.0 if sd == 0.0 else float(_kurtosis(deltas, fisher=True, bias=True))
    return power_from_stats(DeltaStats(mean, sd, m, kurt, deltas=deltas), n, alpha)


# ---------------------------------------------------------------------------
# serialization

def scenarios_to_csv(scenarios: ScenarioSet) -> str:
    buf = io.StringIO()
    buf.write(SCENARIO_CSV_HEADER + "\n")
    v = scenarios.values
    for k in range(v.shape[0]):
        for i in range(v.shape[1]):
            for t in range(v.shape[2]):
                buf.write(f"{k},{i},{t},{repr(float(v[k, i, t]))}\n")
    return buf.getvalue()


def scenarios_from_csv(text: str) -> ScenarioSet:
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines or lines[0] != SCENARIO_CSV_HEADER:
        raise ValueError("unrecognized scenario CSV header")
    entries = {}
    for ln in lines[1:]:
        parts = ln.split(",")
        if len(parts) != 4:
            raise ValueError(f"malformed scenario row: {ln!r}")
        k, i, t = int(parts[0]), int(parts[1]), int(parts[2])
        entries[(k, i, t)] = float(parts[3])
    ks = {k for k, _, _ in entries}
    is_ = {i for _, i, _ in entries}
    ts = {t for _, _, t in entries}
    shape = (max(ks) + 1, max(is_) + 1, max(ts) + 1)
    if ks != set(range(shape[0])) or is_ != set(range(shape[1])) or ts != set(range(shape[2])):
        raise ValueError("scenario indices must be contiguous from 0")
    if len(entries) != shape[0] * shape[1] * shape[2]:
        raise ValueError("scenario grid is incomplete")
    values = np.empty(shape)
    for (k, i, t), val in entries.items():
        values[k, i, t] = val
    return ScenarioSet(values)


def empirical_from_csv(text: str) -> np.ndarray:
    """Rectangular numeric CSV, one sample row per line, no header."""
    rows = []
    for ln in text.splitlines():
        if ln.strip():
            rows.append([float(x) for x in ln.split(",")])
    if not rows:
        raise ValueError("empty sample file")
    widths = {len(r) for r in rows}
    if len(widths) != 1:
        raise ValueError(f"ragged sample rows: widths {sorted(widths)}")
    return _check_sample(np.asarray(rows, dtype=float))


def plan_to_json(plan: Plan) -> dict:
    return {
        "active": [int(i) for i in np.flatnonzero(plan.active)],
        "commitments": [float(c) for c in plan.commitments],
        "meta": dict(plan.meta),
    }


def profit_report(scenarios: ScenarioSet, plan: Plan, penalty: float) -> dict:
    return {
        "expected_profit": expected_profit(scenarios, plan, penalty),
        "penalty": penalty,
        "n_scenarios": scenarios.n_scenarios,
        "n_active": int(plan.active.sum()),
        "total_commitment": float(plan.commitments.sum()),
    }
