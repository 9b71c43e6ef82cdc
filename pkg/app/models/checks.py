# app/models/checks.py - Pass/fail bookkeeping for numeric inequalities

from dataclasses import asdict, dataclass
from enum import Enum
from typing import Iterable, List


class CheckStatus(str, Enum):
    PASS = "PASS"
    FAIL = "FAIL"
    INCONCLUSIVE = "INCONCLUSIVE"


@dataclass
class BoundCheck:
    """One measured quantity compared against an analytic bound"""

    name: str
    value: float
    bound: float
    status: CheckStatus
    note: str = ""
    kind: str = "upper"  # "upper": value <= bound, "lower": value >= bound

    @property
    def margin(self) -> float:
        if self.kind == "lower":
            return self.value - self.bound
        return self.bound - self.value

    def as_dict(self) -> dict:
        data = asdict(self)
        data["status"] = self.status.value
        return data


def classify(value: float, bound: float, noise: float) -> CheckStatus:
    """PASS when value <= bound; violations inside the noise band are INCONCLUSIVE."""
    if value <= bound:
        return CheckStatus.PASS
    if value - bound <= noise:
        return CheckStatus.INCONCLUSIVE
    return CheckStatus.FAIL


def upper_bound_check(name: str, value: float, bound: float, noise: float = 0.0, note: str = "") -> BoundCheck:
    return BoundCheck(name=name, value=float(value), bound=float(bound), status=classify(value, bound, noise), note=note)


def lower_bound_check(name: str, value: float, bound: float, noise: float = 0.0, note: str = "") -> BoundCheck:
    """value >= bound"""
    status = classify(-value, -bound, noise)
    return BoundCheck(name=name, value=float(value), bound=float(bound), status=status, note=note, kind="lower")


def worst_status(checks: Iterable[BoundCheck]) -> CheckStatus:
    statuses: List[CheckStatus] = [c.status for c in checks]
    if CheckStatus.FAIL in statuses:
        return CheckStatus.FAIL
    if CheckStatus.INCONCLUSIVE in statuses:
        return CheckStatus.INCONCLUSIVE
    return CheckStatus.PASS
