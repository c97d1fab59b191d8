from .scenario import AttackKind, MeasurementModelKind, Scenario
from .workbench import CaseCheckRequest, CaseCheckResponse, MetricsRow, ScenarioJob, TreeAssignment

__all__ = [
    'AttackKind',
    'CaseCheckRequest',
    'CaseCheckResponse',
    'MeasurementModelKind',
    'MetricsRow',
    'Scenario',
    'ScenarioJob',
    'TreeAssignment',
]
