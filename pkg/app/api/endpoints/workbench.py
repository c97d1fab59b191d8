from fastapi import APIRouter, HTTPException, BackgroundTasks
from typing import Dict
from pathlib import Path
import uuid
import logging

from app.core.config import settings
from app.core.exceptions import InfeasibleAttackError, WorkbenchError
from app.schemas.scenario import Scenario
from app.schemas.workbench import (
    CaseCheckRequest,
    CaseCheckResponse,
    MetricsRow,
    ScenarioJob,
    TreeAssignment,
)
from app.services.grid import load_case
from app.services.harness import metrics_rows, run_scenario
from app.services.observability import assess_sets

logger = logging.getLogger(__name__)

router = APIRouter()

# Store scenario jobs
scenario_jobs: Dict[str, ScenarioJob] = {}


def _http_error(e: Exception, action: str) -> HTTPException:
    if isinstance(e, InfeasibleAttackError):
        return HTTPException(status_code=422, detail=f"Infeasible attack: {str(e)}")
    if isinstance(e, WorkbenchError):
        return HTTPException(status_code=400, detail=f"Error {action}: {str(e)}")
    return HTTPException(status_code=500, detail=f"Error {action}: {str(e)}")


@router.get("/health")
async def health():
    return {"status": "ok", "jobs": len(scenario_jobs)}


@router.post("/cases/check", response_model=CaseCheckResponse)
async def check_case(request: CaseCheckRequest):
    """Observability and attack-feasibility verdicts for the given sensor sets."""
    try:
        logger.info(f"Checking sensor sets on case {request.case}")
        case = load_case(request.case)
        if request.reference is not None:
            case = case.with_reference(request.reference)
        report = assess_sets(case, request.adversary, request.observed, request.critical)
        return CaseCheckResponse(
            case=report.case or request.case,
            observable=report.full.observable,
            rank=report.full.rank,
            witness=[TreeAssignment(from_bus=i, to_bus=j, sensor=label) for (i, j), label in report.full.assignment],
            attack_feasible=report.attack_feasible,
            critical_set=report.critical_set,
            partial_conditions=report.partial_conditions,
            graph_conditions=report.graph_conditions,
            cut=[list(edge) for edge in report.cut.crossing] if report.cut else [],
            feasible=report.feasible,
            notes=report.notes,
        )
    except Exception as e:
        logger.error(f"Error checking case {request.case}: {str(e)}")
        raise _http_error(e, "checking case")


def run_scenario_task(job_id: str):
    """Background task for a scenario run."""
    job = scenario_jobs[job_id]
    try:
        logger.info(f"Starting scenario task for job {job_id}")
        job.status = "running"
        job.message = "Running Monte Carlo..."

        def progress(done: int, total: int):
            job.progress = int(100 * done / total)

        table = run_scenario(job.scenario, progress=progress)
        job.metrics = [MetricsRow(**row) for row in metrics_rows(table)]
        csv_path = Path(settings.OUTPUT_DIR) / f"{job_id}.csv"
        table.to_csv(csv_path)
        job.csv_path = str(csv_path)
        job.status = "completed"
        job.progress = 100
        job.message = "Scenario completed"
    except Exception as e:
        logger.error(f"Error in scenario task {job_id}: {str(e)}")
        job.status = "failed"
        job.error = str(e)
        job.message = "Scenario failed"


@router.post("/scenarios", response_model=ScenarioJob)
async def start_scenario(scenario: Scenario, background_tasks: BackgroundTasks):
    job_id = str(uuid.uuid4())
    logger.info(f"Creating scenario job {job_id} ({scenario.name})")
    scenario_jobs[job_id] = ScenarioJob(
        job_id=job_id,
        status="queued",
        progress=0,
        message="Scenario queued",
        scenario=scenario,
    )
    background_tasks.add_task(run_scenario_task, job_id)
    return scenario_jobs[job_id]


@router.get("/jobs/{job_id}", response_model=ScenarioJob)
async def get_job(job_id: str):
    """Status of a scenario job, with its metrics once completed."""
    if job_id not in scenario_jobs:
        logger.warning(f"Job {job_id} not found")
        raise HTTPException(status_code=404, detail="Job not found")
    return scenario_jobs[job_id]
