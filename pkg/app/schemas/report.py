# app/schemas/report.py
from typing import Any, Dict, List, Literal, Optional

from pydantic import BaseModel, ConfigDict, Field

Status = Literal["PASS", "FAIL", "INCONCLUSIVE"]


class CheckRecord(BaseModel):
    """One asserted inequality"""

    name: str
    value: float
    bound: float
    status: Status
    kind: Literal["upper", "lower"] = "upper"
    note: str = ""


class CheckSummary(BaseModel):
    count: int
    worst_margin: float
    value: float = Field(..., description="Measured side at the worst margin")
    bound: float
    kind: Literal["upper", "lower"]
    status: Status


class VerifierRecord(BaseModel):
    name: str
    trials: int
    rejections: int
    status: Status
    worst_margin: Optional[float] = None
    inconclusive: int = 0
    failures: List[CheckRecord] = Field(default_factory=list)
    summary: Dict[str, CheckSummary] = Field(default_factory=dict)
    values: Dict[str, float] = Field(default_factory=dict)
    notes: List[str] = Field(default_factory=list)


class GentleRecord(BaseModel):
    label: str
    normal_injectivity_margin: float
    curvature_sup_in_tube: float
    injectivity_proxy: float
    passed: bool
    truncated_directions: int = 0
    caveat: str = ""


class AveragingRecord(BaseModel):
    reference_index: int
    reference_label: str
    epsilon_measured: float
    d1_to_average: Dict[str, float]
    d0_to_average: Dict[str, float]
    max_iterations: int
    residual_sup: float
    tolerance: float
    reference_deviation: Optional[float] = Field(None, description="Node deviation of the average over a second reference")
    checks: List[CheckRecord] = Field(default_factory=list)
    notes: List[str] = Field(default_factory=list)


class FlowRecord(BaseModel):
    max_displacement: float
    tube_limit: float
    isotropy_defect: float
    d0_to_members: Dict[str, float]
    steps_used: int
    step_halvings: int
    containment_checked: bool
    containment_overridden: bool = False
    nondegeneracy_min: Optional[float] = None
    alpha_sup: Optional[float] = Field(None, description="sup of |alpha| over the nodes of N")
    beta_sup: Dict[str, float] = Field(default_factory=dict)
    checks: List[CheckRecord] = Field(default_factory=list)
    notes: List[str] = Field(default_factory=list)


class ErrorRecord(BaseModel):
    kind: str = Field(..., description="Exception class name")
    message: str
    constant: Optional[str] = Field(None, description="Violated constant for tube containment aborts")


class RunReport(BaseModel):
    """Everything a scenario run produced, apart from the point clouds"""

    model_config = ConfigDict(populate_by_name=True)

    schema_version: Literal[1] = Field(1, alias="schema")
    scenario: str
    status: Status
    exit_code: int
    epsilon_measured: Optional[float] = None
    constants: Optional[Dict[str, Any]] = None
    gentle: List[GentleRecord] = Field(default_factory=list)
    averaging: Optional[AveragingRecord] = None
    flow: Optional[FlowRecord] = None
    isotropy_defects: Dict[str, float] = Field(default_factory=dict)
    verifiers: List[VerifierRecord] = Field(default_factory=list)
    error: Optional[ErrorRecord] = None
    timings: Dict[str, float] = Field(default_factory=dict, description="Wall-clock seconds per stage")
