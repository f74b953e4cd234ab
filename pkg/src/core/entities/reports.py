"""
Response models for solver, checker and simulator reports.

These are what the CLI writes as JSON and the API returns; numeric tables
travel separately as CSV.
"""
from enum import Enum
from typing import Any, Dict, List, Optional

from pydantic import BaseModel, Field


class WarningCode(str, Enum):
    TRUNCATION_WARNING = "TRUNCATION_WARNING"
    HORIZON_WARNING = "HORIZON_WARNING"
    COVERAGE_WARNING = "COVERAGE_WARNING"
    MULTIPLE_CANDIDATES = "MULTIPLE_CANDIDATES"


class SolverWarning(BaseModel):
    code: WarningCode
    message: str
    details: Dict[str, Any] = Field(default_factory=dict)


class SolverDiagnostics(BaseModel):
    iterations: int = 0
    residual: float = 0.0
    converged: bool = True
    warnings: List[SolverWarning] = Field(default_factory=list)


class Certificate(str, Enum):
    CERTIFIED_STOP = "CERTIFIED_STOP"
    CERTIFIED_NEVER_STOP = "CERTIFIED_NEVER_STOP"
    NEVER_STOP_LOCAL = "NEVER_STOP_LOCAL"
    UNDECIDED = "UNDECIDED"


class MembershipResult(BaseModel):
    state: int
    member: bool
    method: str
    rejected_at: Optional[float] = None


class ClosureViolation(BaseModel):
    i: int
    j: int
    rate: float


class ClosureResult(BaseModel):
    closed: bool
    violations: List[ClosureViolation] = Field(default_factory=list)


class OlaReport(BaseModel):
    t: float
    s0: List[int]
    s_inf: List[int]
    closed: bool
    certificate: Dict[int, Certificate]
    method: str
    violations: List[ClosureViolation] = Field(default_factory=list)


class ExpOlaSet(BaseModel):
    members: List[int]
    closed: bool
    violations: List[ClosureViolation] = Field(default_factory=list)


class RiskAversionResult(BaseModel):
    more_risk_averse: bool
    method: str
    witness: Optional[float] = None


class NodeViolation(BaseModel):
    t: float
    state: int
    h_u: float
    h_w: float


class ContainmentReport(BaseModel):
    contained: bool
    stop_nodes_w: int
    checked_nodes: int
    guarded_nodes: int
    violation_count: int
    violations: List[NodeViolation] = Field(default_factory=list)


class ExpContainmentReport(BaseModel):
    gamma_u: float
    gamma_w: float
    stop_set_u: List[int]
    stop_set_w: List[int]
    contained: bool


class StochasticOrderReport(BaseModel):
    n_paths: int
    seed: int
    s_grid: List[float]
    survival_u: List[float]
    survival_w: List[float]
    pathwise_violations: int
    violating_streams: List[int] = Field(default_factory=list)


class MonotonicityReport(BaseModel):
    monotone: bool
    top_offer_stops: bool
    value_sandwich: bool
    violation_count: int
    violations: List[Dict[str, Any]] = Field(default_factory=list)


class CalibrationReport(BaseModel):
    reference: float
    repeats: int
    n_paths: int
    covered: int
    coverage: float
