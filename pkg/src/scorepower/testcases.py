"""Factories for the 19 benchmark ground-truth/forecast pairs.

Each case is a family of (ground truth, forecast) pairs indexed by a dimension
d and a discrepancy size epsilon.  The ground truth carries the discrepancy in
the marginal families; in the covariance and mixture families the "missing"
variant puts the structure in the ground truth and the "extra" variant puts it
in the forecast.  At epsilon equal to the family's identity value the two
distributions coincide in law.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Optional

from .distributions import (
    CovStructure,
    Exponential,
    GaussianMixtureTwo,
    GaussianStructured,
    IndependentMarginals,
    Normal,
    SkewNormal,
    standardized_skew_params,
)

__all__ = ["TestCaseId", "CasePair", "CaseInfo", "make_case", "list_cases", "case_info"]


class TestCaseId(enum.Enum):
    NORMAL_SINGLE_MEAN_UP = "normal-single-mean-up"
    NORMAL_ALL_MEAN_UP = "normal-all-mean-up"
    NORMAL_SINGLE_STD_DOWN = "normal-single-std-down"
    NORMAL_SINGLE_STD_UP = "normal-single-std-up"
    NORMAL_ALL_STD_DOWN = "normal-all-std-down"
    NORMAL_ALL_STD_UP = "normal-all-std-up"
    EXP_SINGLE_MEAN_DOWN = "exp-single-mean-down"
    EXP_SINGLE_MEAN_UP = "exp-single-mean-up"
    EXP_ALL_MEAN_DOWN = "exp-all-mean-down"
    EXP_ALL_MEAN_UP = "exp-all-mean-up"
    SKEW_ALL_DOWN = "skew-all-down"
    FULL_COV_MISSING = "full-cov-missing"
    FULL_COV_EXTRA = "full-cov-extra"
    CHECKER_COV_MISSING = "checker-cov-missing"
    CHECKER_COV_EXTRA = "checker-cov-extra"
    BLOCK_COV_MISSING = "block-cov-missing"
    BLOCK_COV_EXTRA = "block-cov-extra"
    MIXTURE_MISSING = "mixture-missing"
    MIXTURE_EXTRA = "mixture-extra"


# keep pytest from trying to collect the enum as a test class
TestCaseId.__test__ = False


@dataclass(frozen=True)
class CasePair:
    ground_truth: object
    forecast: object
    d: int
    epsilon: float
    identity_epsilon: float


@dataclass(frozen=True)
class CaseInfo:
    """Static metadata driving tuning searches and reporting.

    direction is the side of identity_epsilon the discrepancy grows on;
    epsilon_bound is the hard limit in that direction (None when unbounded);
    analytic marks families with closed-form NLL gap moments.
    """

    case: TestCaseId
    identity_epsilon: float
    direction: str
    family: str
    scope: str
    variant: Optional[str]
    analytic: bool
    epsilon_bound: Optional[float]


_INFOS = (
    CaseInfo(TestCaseId.NORMAL_SINGLE_MEAN_UP, 0.0, "up", "normal-mean", "single", None, True, None),
    CaseInfo(TestCaseId.NORMAL_ALL_MEAN_UP, 0.0, "up", "normal-mean", "all", None, True, None),
    CaseInfo(TestCaseId.NORMAL_SINGLE_STD_DOWN, 1.0, "down", "normal-std", "single", None, True, 0.0),
    CaseInfo(TestCaseId.NORMAL_SINGLE_STD_UP, 1.0, "up", "normal-std", "single", None, True, None),
    CaseInfo(TestCaseId.NORMAL_ALL_STD_DOWN, 1.0, "down", "normal-std", "all", None, True, 0.0),
    CaseInfo(TestCaseId.NORMAL_ALL_STD_UP, 1.0, "up", "normal-std", "all", None, True, None),
    CaseInfo(TestCaseId.EXP_SINGLE_MEAN_DOWN, 1.0, "down", "exp-mean", "single", None, False, 0.0),
    CaseInfo(TestCaseId.EXP_SINGLE_MEAN_UP, 1.0, "up", "exp-mean", "single", None, False, None),
    CaseInfo(TestCaseId.EXP_ALL_MEAN_DOWN, 1.0, "down", "exp-mean", "all", None, False, 0.0),
    CaseInfo(TestCaseId.EXP_ALL_MEAN_UP, 1.0, "up", "exp-mean", "all", None, False, None),
    CaseInfo(TestCaseId.SKEW_ALL_DOWN, 0.0, "up", "skew", "all", None, False, None),
    CaseInfo(TestCaseId.FULL_COV_MISSING, 0.0, "up", "covariance-full", "all", "missing", True, 1.0),
    CaseInfo(TestCaseId.FULL_COV_EXTRA, 0.0, "up", "covariance-full", "all", "extra", True, 1.0),
    CaseInfo(TestCaseId.CHECKER_COV_MISSING, 0.0, "up", "covariance-checker", "all", "missing", True, 1.0),
    CaseInfo(TestCaseId.CHECKER_COV_EXTRA, 0.0, "up", "covariance-checker", "all", "extra", True, 1.0),
    CaseInfo(TestCaseId.BLOCK_COV_MISSING, 0.0, "up", "covariance-block", "all", "missing", True, 1.0),
    CaseInfo(TestCaseId.BLOCK_COV_EXTRA, 0.0, "up", "covariance-block", "all", "extra", True, 1.0),
    CaseInfo(TestCaseId.MIXTURE_MISSING, 0.0, "up", "mixture", "all", "missing", False, None),
    CaseInfo(TestCaseId.MIXTURE_EXTRA, 0.0, "up", "mixture", "all", "extra", False, None),
)

_BY_ID = {info.case: info for info in _INFOS}


def list_cases() -> tuple:
    """All 19 cases with their metadata, in stable declaration order."""
    return _INFOS


def case_info(case_id: TestCaseId) -> CaseInfo:
    if not isinstance(case_id, TestCaseId):
        raise TypeError(f"expected a TestCaseId, got {case_id!r}")
    return _BY_ID[case_id]


def _std_normals(d: int) -> IndependentMarginals:
    return IndependentMarginals((Normal(),) * d)


def _single_then_standard(first, d: int, standard) -> IndependentMarginals:
    return IndependentMarginals((first,) + (standard,) * (d - 1))


def _matched_gaussian(d: int, eps: float) -> GaussianStructured:
    # N(0, I + eps^2 J) written as a scaled equicorrelation matrix
    s2 = 1.0 + eps * eps
    return GaussianStructured(
        d, CovStructure.FULL_CONSTANT, epsilon=eps * eps / s2, scale=math.sqrt(s2)
    )


def make_case(case_id: TestCaseId, d: int, epsilon: float) -> CasePair:
    """Build the (ground truth, forecast) pair for one case at (d, epsilon)."""
    info = case_info(case_id)
    d = int(d)
    eps = float(epsilon)
    if d < 2:
        raise ValueError(f"{case_id.value} requires d >= 2, got d={d}")
    if not math.isfinite(eps):
        raise ValueError(f"epsilon must be finite, got {eps}")

    family = info.family
    if family == "normal-mean":
        shifted = Normal(mean=eps)
        gt = (
            _single_then_standard(shifted, d, Normal())
            if info.scope == "single"
            else IndependentMarginals((shifted,) * d)
        )
        return CasePair(gt, _std_normals(d), d, eps, info.identity_epsilon)

    if family == "normal-std":
        if not eps > 0.0:
            raise ValueError(
                f"{case_id.value} requires epsilon > 0 (it is a standard deviation), got {eps}"
            )
        scaled = Normal(stddev=eps)
        gt = (
            _single_then_standard(scaled, d, Normal())
            if info.scope == "single"
            else IndependentMarginals((scaled,) * d)
        )
        return CasePair(gt, _std_normals(d), d, eps, info.identity_epsilon)

    if family == "exp-mean":
        if not eps > 0.0:
            raise ValueError(
                f"{case_id.value} requires epsilon > 0 (it is a mean, rate 1/epsilon), got {eps}"
            )
        modified = Exponential(rate=1.0 / eps)
        unit = Exponential(rate=1.0)
        gt = (
            _single_then_standard(modified, d, unit)
            if info.scope == "single"
            else IndependentMarginals((modified,) * d)
        )
        return CasePair(gt, IndependentMarginals((unit,) * d), d, eps, info.identity_epsilon)

    if family == "skew":
        xi, omega = standardized_skew_params(eps)
        gt = IndependentMarginals((SkewNormal(xi, omega, eps),) * d)
        return CasePair(gt, _std_normals(d), d, eps, info.identity_epsilon)

    if family.startswith("covariance-"):
        structure = {
            "covariance-full": CovStructure.FULL_CONSTANT,
            "covariance-checker": CovStructure.CHECKER,
            "covariance-block": CovStructure.BLOCK_PAIRS,
        }[family]
        if structure in (CovStructure.CHECKER, CovStructure.BLOCK_PAIRS) and d % 2:
            raise ValueError(f"{case_id.value} requires even d, got d={d}")
        structured = GaussianStructured(d, structure, epsilon=eps)
        plain = GaussianStructured(d, CovStructure.IDENTITY)
        if info.variant == "missing":
            return CasePair(structured, plain, d, eps, info.identity_epsilon)
        return CasePair(plain, structured, d, eps, info.identity_epsilon)

    if family == "mixture":
        mixture = GaussianMixtureTwo(d, eps)
        matched = _matched_gaussian(d, eps)
        if info.variant == "missing":
            return CasePair(mixture, matched, d, eps, info.identity_epsilon)
        return CasePair(matched, mixture, d, eps, info.identity_epsilon)

    raise ValueError(f"unhandled family {family!r}")
