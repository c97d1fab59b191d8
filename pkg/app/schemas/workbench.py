from typing import List, Optional

from pydantic import BaseModel, Field

from .scenario import Scenario


class CaseCheckRequest(BaseModel):
    """Sensor sets to check against a case; labels look like `inj:4` or `flow:1:5`."""
    case: str
    reference: Optional[int] = None
    adversary: Optional[List[str]] = None
    observed: Optional[List[str]] = None
    critical: Optional[List[str]] = None


class TreeAssignment(BaseModel):
    from_bus: int
    to_bus: int
    sensor: str


class CaseCheckResponse(BaseModel):
    case: str
    observable: bool
    rank: Optional[int] = None
    witness: List[TreeAssignment] = Field(default_factory=list)
    attack_feasible: Optional[bool] = None
    critical_set: Optional[bool] = None
    partial_conditions: Optional[bool] = None
    graph_conditions: Optional[bool] = None
    cut: List[List[int]] = Field(default_factory=list)
    feasible: bool
    notes: List[str] = Field(default_factory=list)


class MetricsRow(BaseModel):
    magnitude: float
    mean_error: float
    normalized_error: float
    stderr: float
    detection_rate: float
    framed_removed_rate: float
    adversary_removed_rate: float
    pass_rate: float


class ScenarioJob(BaseModel):
    """Status of a background scenario run."""
    job_id: str
    status: str
    progress: int
    message: str
    scenario: Scenario
    metrics: Optional[List[MetricsRow]] = None
    csv_path: Optional[str] = None
    error: Optional[str] = None
