"""Sample-based and density-based scoring rules.

Seven rules: negative log-likelihood, quantile-decomposed CRPS, ensemble CRPS,
full and partially-paired energy scores, variogram score, and Dawid-Sebastiani.
Sample inputs are (m, d) matrices of forecast draws; y is the realized (d,)
outcome.  Pairwise kernels accept a strategy flag ("exact" or "blocked"); row
order never affects results for the row-symmetric rules because samples are
canonicalized (column-sorted or row-lexsorted) before any accumulation.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import solve_triangular

from . import _pairwise

__all__ = [
    "RuleKind",
    "ScoringRule",
    "ScoreValue",
    "RankDeficientError",
    "NumericallySingularError",
    "DEFAULT_QUANTILE_LEVELS",
    "crps_q",
    "crps_e",
    "es_full",
    "es_partial",
    "variogram",
    "nll",
    "dawid_sebastiani",
    "gaussian_score_from_moments",
    "evaluate",
]

_LOG_2PI = math.log(2.0 * math.pi)

DEFAULT_QUANTILE_LEVELS = tuple(round(0.05 * i, 2) for i in range(1, 20))


class RankDeficientError(ValueError):
    """Dawid-Sebastiani needs strictly more sample rows than dimensions."""


class NumericallySingularError(ValueError):
    """The estimated covariance is not numerically positive definite."""


class RuleKind(enum.Enum):
    NLL = "nll"
    CRPS_Q = "crps-q"
    CRPS_E = "crps-e"
    ES_FULL = "es-full"
    ES_PARTIAL = "es-partial"
    VG = "vg"
    DS = "ds"


_P_RULES = (RuleKind.ES_FULL, RuleKind.ES_PARTIAL, RuleKind.VG)


@dataclass(frozen=True)
class ScoringRule:
    kind: RuleKind
    p: float = 1.0
    quantile_levels: tuple = field(default=DEFAULT_QUANTILE_LEVELS)

    def __post_init__(self):
        if self.kind in (RuleKind.ES_FULL, RuleKind.ES_PARTIAL):
            if not 0.0 < self.p < 2.0:
                raise ValueError(f"energy score requires 0 < p < 2, got {self.p}")
        if self.kind is RuleKind.VG and not self.p > 0.0:
            raise ValueError(f"variogram score requires p > 0, got {self.p}")
        if self.kind is RuleKind.CRPS_Q:
            _check_levels(self.quantile_levels)
        object.__setattr__(self, "quantile_levels", tuple(self.quantile_levels))

    @property
    def needs_density(self) -> bool:
        return self.kind is RuleKind.NLL

    @property
    def label(self) -> str:
        if self.kind in _P_RULES:
            return f"{self.kind.value}:p={self.p:g}"
        return self.kind.value

    @classmethod
    def from_string(cls, spec: str) -> "ScoringRule":
        name, _, rest = spec.strip().partition(":")
        try:
            kind = RuleKind(name)
        except ValueError:
            valid = ", ".join(k.value for k in RuleKind)
            raise ValueError(f"unknown rule {name!r}; expected one of {valid}")
        if rest:
            if kind not in _P_RULES:
                raise ValueError(f"rule {name!r} takes no p parameter")
            key, _, val = rest.partition("=")
            if key != "p":
                raise ValueError(f"bad rule suffix {rest!r}; expected p=<value>")
            return cls(kind, p=float(val))
        return cls(kind)


@dataclass(frozen=True)
class ScoreValue:
    value: float
    rule: ScoringRule
    d: int
    m: int

    def __post_init__(self):
        if not math.isfinite(self.value):
            raise ValueError(f"non-finite score {self.value}")


# ---------------------------------------------------------------------------
# input handling

def _check_levels(levels):
    arr = np.asarray(levels, dtype=float)
    if arr.ndim != 1 or arr.size == 0:
        raise ValueError("quantile levels must be a non-empty 1-d sequence")
    if np.any(arr <= 0.0) or np.any(arr >= 1.0):
        raise ValueError("quantile levels must lie strictly inside (0, 1)")
    if np.any(np.diff(arr) <= 0.0):
        raise ValueError("quantile levels must be strictly increasing")
    return arr

def _as_inputs(y, x, min_m: int = 1):
    y = np.asarray(y, dtype=float)
    x = np.asarray(x, dtype=float)
    if y.ndim != 1:
        raise ValueError(f"y must be a vector, got shape {y.shape}")
    if x.ndim != 2:
        raise ValueError(f"sample must be an (m, d) matrix, got shape {x.shape}")
    if x.shape[0] < min_m:
        raise ValueError(f"need at least {min_m} sample rows, got {x.shape[0]}")
    if x.shape[1] != y.size:
        raise ValueError(
            f"sample dimension {x.shape[1]} does not match outcome dimension {y.size}"
        )
    if not np.all(np.isfinite(y)) or not np.all(np.isfinite(x)):
        raise ValueError("non-finite inputs")
    return y, x


def _canonical_rows(x: np.ndarray) -> np.ndarray:
    # fixed row order makes every downstream accumulation order-independent
    # of how the caller happened to arrange the sample
    order = np.lexsort(x.T[::-1])
    return np.ascontiguousarray(x[order])


def _check_strategy(strategy: str):
    if strategy not in ("exact", "blocked"):
        raise ValueError(f"unknown strategy {strategy!r}; use 'exact' or 'blocked'")


# ---------------------------------------------------------------------------
# rules

def crps_q(y, x, levels=DEFAULT_QUANTILE_LEVELS) -> float:
    """Quantile-decomposed CRPS: mean pinball loss over levels and dimensions.

    Empirical quantiles use midpoint plotting positions (i - 0.5)/m with
    linear interpolation.
    """
    levels = _check_levels(levels)
    y, x = _as_inputs(y, x, min_m=2)
    qhat = np.quantile(x, levels, axis=0, method="hazen")
    diff = qhat - y[None, :]
    pinball = (np.where(diff >= 0.0, 1.0, 0.0) - levels[:, None]) * diff
    # contiguous per-dimension reduction keeps the value independent of d for
    # duplicated columns (identical summation order per column)
    per_dim = np.ascontiguousarray(pinball.T).mean(axis=1)
    return float(per_dim.mean())


def crps_e(y, x, strategy: str = "exact") -> float:
    """Ensemble CRPS with the unbiased pair term, averaged over dimensions."""
    _check_strategy(strategy)
    y, x = _as_inputs(y, x, min_m=2)
    m = x.shape[0]
    xt = np.ascontiguousarray(np.sort(x, axis=0).T)
    t1 = _pairwise.crps_cross_sums(xt, y)
    if strategy == "exact":
        t2 = _pairwise.crps_pair_sums_exact(xt)
    else:
        t2 = _pairwise.crps_pair_sums_blocked(xt, _pairwise.BLOCK)
    vals = t1 / m - t2 / (m * (m - 1.0))
    return float(np.mean(vals))


def es_full(y, x, p: float = 1.0, strategy: str = "exact") -> float:
    """Energy score from all sample pairs; reduces to crps_e when d=1, p=1."""
    _check_strategy(strategy)
    if not 0.0 < p < 2.0:
        raise ValueError(f"energy score requires 0 < p < 2, got {p}")
    y, x = _as_inputs(y, x, min_m=2)
    m = x.shape[0]
    xc = _canonical_rows(x)
    t1 = _pairwise.energy_cross_sum(y, xc, p)
    if strategy == "exact":
        t2 = _pairwise.energy_pair_sum_exact(xc, p)
    else:
        t2 = _pairwise.energy_pair_sum_blocked(xc, p, _pairwise.BLOCK)
    vals = np.array([t1]) / m - np.array([t2]) / (m * (m - 1.0))
    return float(np.mean(vals))


def es_partial(y, x, p: float = 1.0) -> float:
    """Energy score pairing row i with row i + floor(m/2); O(dm).

    Odd m pairs the first floor(m/2) rows against the next floor(m/2) and
    normalizes by 2*floor(m/2); the last row only enters the first term.
    The value depends on row order by construction.
    """
    if not 0.0 < p < 2.0:
        raise ValueError(f"energy score requires 0 < p < 2, got {p}")
    y, x = _as_inputs(y, x, min_m=2)
    m, d = x.shape
    h = m // 2
    if d == 1:
        cross = np.abs(y[0] - x[:, 0])
        pair = np.abs(x[:h, 0] - x[h:2 * h, 0])
    else:
        cross = np.sqrt(np.sum((x - y[None, :]) ** 2, axis=1))
        pair = np.sqrt(np.sum((x[:h] - x[h:2 * h]) ** 2, axis=1))
    if p != 1.0:
        cross = cross ** p
        pair = pair ** p
    return float(cross.sum() / m - pair.sum() / (2.0 * h))


def variogram(y, x, p: float = 1.0, strategy: str = "exact") -> float:
    """Variogram score over all ordered dimension pairs a != b."""
    _check_strategy(strategy)
    if not p > 0.0:
        raise ValueError(f"variogram score requires p > 0, got {p}")
    y, x = _as_inputs(y, x, min_m=1)
    if y.size < 2:
        raise ValueError("variogram score needs d >= 2 (no dimension pairs)")
    xt = np.ascontiguousarray(_canonical_rows(x).T)
    if strategy == "exact":
        return float(_pairwise.variogram_score_exact(xt, y, p))
    return float(_pairwise.variogram_score_blocked(xt, y, p, _pairwise.BLOCK))


def nll(y, forecast_density) -> float:
    """Negative log-likelihood; the only rule that needs a density object."""
    if forecast_density is None or not hasattr(forecast_density, "log_density"):
        raise TypeError(
            "NLL needs a forecast with a log_density method; a finite sample "
            "does not determine a density"
        )
    return float(-forecast_density.log_density(np.asarray(y, dtype=float)))


def gaussian_score_from_moments(y, mean, cov) -> float:
    """log det(cov) + (y - mean)^T cov^{-1} (y - mean) for given moments."""
    y = np.asarray(y, dtype=float)
    mean = np.asarray(mean, dtype=float)
    cov = np.atleast_2d(np.asarray(cov, dtype=float))
    try:
        chol = np.linalg.cholesky(cov)
    except np.linalg.LinAlgError:
        raise NumericallySingularError(
            "estimated covariance is not positive definite"
        )
    z = solve_triangular(chol, y - mean, lower=True)
    logdet = 2.0 * float(np.sum(np.log(np.diag(chol))))
    return logdet + float(z @ z)


def dawid_sebastiani(y, x) -> float:
    """Moment-based score from the sample mean and unbiased covariance."""
    y, x = _as_inputs(y, x, min_m=2)
    m, d = x.shape
    if m <= d:
        raise RankDeficientError(
            f"Dawid-Sebastiani needs m > d; got m={m}, d={d}"
        )
    xc = _canonical_rows(x)
    mu = xc.mean(axis=0)
    centered = xc - mu
    cov = centered.T @ centered / (m - 1.0)
    return gaussian_score_from_moments(y, mu, cov)


def evaluate(rule: ScoringRule, y, sample=None, density=None,
             strategy: str = "exact") -> float:
    """Dispatch to the rule's implementation; sample rules ignore density."""
    if rule.kind is RuleKind.NLL:
        return nll(y, density)
    if sample is None:
        raise ValueError(f"rule {rule.label} needs a forecast sample")
    if rule.kind is RuleKind.CRPS_Q:
        return crps_q(y, sample, rule.quantile_levels)
    if rule.kind is RuleKind.CRPS_E:
        return crps_e(y, sample, strategy)
    if rule.kind is RuleKind.ES_FULL:
        return es_full(y, sample, rule.p, strategy)
    if rule.kind is RuleKind.ES_PARTIAL:
        return es_partial(y, sample, rule.p)
    if rule.kind is RuleKind.VG:
        return variogram(y, sample, rule.p, strategy)
    if rule.kind is RuleKind.DS:
        return dawid_sebastiani(y, sample)
    raise ValueError(f"unhandled rule kind {rule.kind}")
