"""Frequentist estimation of branch probabilities.

Each branch probability is estimated as an observed frequency and compared
against a normal-approximation confidence interval centred on the
probability the type specifies.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

from .pst import AnnotationKind, ProbAnnotation

# Acklam's rational approximation of the inverse normal CDF.
_A = (-3.969683028665376e01, 2.209460984245205e02, -2.759285104469687e02,
      1.383577518672690e02, -3.066479806614716e01, 2.506628277459239e00)
_B = (-5.447609879822406e01, 1.615858368580409e02, -1.556989798598866e02,
      6.680131188771972e01, -1.328068155288572e01)
_C = (-7.784894002430293e-03, -3.223964580411365e-01, -2.400758277161838e00,
      -2.549732539343734e00, 4.374664141464968e00, 2.938163982698783e00)
_D = (7.784695709041462e-03, 3.224671290700398e-01, 2.445134137142996e00,
      3.754408661907416e00)
_P_LOW = 0.02425


def normal_quantile(q: float) -> float:
    """Inverse of the standard normal CDF for 0 < q < 1."""
    if not 0.0 < q < 1.0:
        raise ValueError(f"quantile argument must lie in (0, 1), got {q}")
    if q < _P_LOW:
        r = math.sqrt(-2.0 * math.log(q))
        x = (((((_C[0] * r + _C[1]) * r + _C[2]) * r + _C[3]) * r + _C[4]) * r + _C[5]) / \
            ((((_D[0] * r + _D[1]) * r + _D[2]) * r + _D[3]) * r + 1.0)
    elif q <= 1.0 - _P_LOW:
        r = q - 0.5
        s = r * r
        x = (((((_A[0] * s + _A[1]) * s + _A[2]) * s + _A[3]) * s + _A[4]) * s + _A[5]) * r / \
            (((((_B[0] * s + _B[1]) * s + _B[2]) * s + _B[3]) * s + _B[4]) * s + 1.0)
    else:
        r = math.sqrt(-2.0 * math.log(1.0 - q))
        x = -(((((_C[0] * r + _C[1]) * r + _C[2]) * r + _C[3]) * r + _C[4]) * r + _C[5]) / \
            ((((_D[0] * r + _D[1]) * r + _D[2]) * r + _D[3]) * r + 1.0)
    # one Halley step takes the 1e-9 relative error down to machine precision
    e = 0.5 * math.erfc(-x / math.sqrt(2.0)) - q
    u = e * math.sqrt(2.0 * math.pi) * math.exp(x * x / 2.0)
    return x - u / (1.0 + x * u / 2.0)


def z_of(level: float) -> float:
    """Two-sided standard-normal critical value for confidence ``level``."""
    if not 0.0 <= level < 1.0:
        raise ValueError(f"confidence level must lie in [0, 1), got {level}")
    if level == 0.0:
        return 0.0
    return normal_quantile((1.0 + level) / 2.0)


@dataclass(frozen=True)
class ConfidenceLevel:
    level: float
    zed: float = field(init=False)

    def __post_init__(self):
        object.__setattr__(self, "zed", z_of(self.level))


def estimate(c_total: int, c_branch: int) -> float:
    if c_total < 1:
        raise ValueError("estimate needs at least one observation")
    if not 0 <= c_branch <= c_total:
        raise ValueError(f"branch count {c_branch} outside [0, {c_total}]")
    return c_branch / c_total


def max_error(level: ConfidenceLevel, p: float, c_total: int) -> float:
    if c_total < 1:
        raise ValueError("max_error needs at least one observation")
    return level.zed * math.sqrt(p * (1.0 - p) / c_total)


@dataclass(frozen=True)
class IntervalReport:
    estimated: float
    specified: float
    error: float
    low: float
    high: float
    inside: bool


def check_interval(level: ConfidenceLevel, c_total: int, c_branch: int, p: float) -> IntervalReport:
    est = estimate(c_total, c_branch)
    err = max_error(level, p, c_total)
    low, high = p - err, p + err
    return IntervalReport(est, p, err, low, high, low <= est <= high)


class Judgement(enum.Enum):
    OK = "ok"
    DEVIATED_LOW = "deviated-low"
    DEVIATED_HIGH = "deviated-high"
    SUPPRESSED = "suppressed"


def judge(annotation: ProbAnnotation, report: IntervalReport) -> Judgement:
    if annotation.kind is AnnotationKind.UNCHECKED:
        return Judgement.SUPPRESSED
    if annotation.checks_low and report.estimated < report.low:
        return Judgement.DEVIATED_LOW
    if annotation.checks_high and report.estimated > report.high:
        return Judgement.DEVIATED_HIGH
    return Judgement.OK


@dataclass
class ChoiceCounters:
    """Visit count of one choice point and the per-label counts beneath it."""

    total: int = 0
    per_branch: dict[str, int] = field(default_factory=dict)

    def record(self, label: str) -> None:
        self.total += 1
        self.per_branch[label] = self.per_branch.get(label, 0) + 1

    def __getitem__(self, label: str) -> int:
        return self.per_branch.get(label, 0)
