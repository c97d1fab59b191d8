"""Seeded Monte Carlo experiment runner.

Each run samples an operating state and sensor noise, forms the measurement
vector, builds the attack (from a fresh training window or from the
Jacobian), scales it to each target relative magnitude and feeds the attacked
vector to the fusion center. Runs are independent and reduced in run order.
"""
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Dict, List, Mapping, Optional, Sequence, Union
import logging

import numpy as np
import pandas as pd
from pydantic import ValidationError

from app.core.config import settings
from app.core.exceptions import GridMismatchError, ScenarioError
from app.schemas.scenario import AttackKind, MeasurementModelKind, Scenario
from app.services.estimation import AcModel, BadDataTrace, FusionCenter, LinearModel
from app.services.grid import (
    AcState,
    GridCase,
    ac_jacobian,
    dc_jacobian,
    load_case,
    sample_measurements,
    snr_noise_std,
    state_covariance,
)
from app.services.observability import affected_states
from app.services.subspace_attack import (
    AttackPlan,
    SubspaceBasis,
    apply_attack,
    calibrate_eta,
    estimate_subspace,
    exact_basis,
    framing_attack_full,
    framing_attack_partial,
    unobservable_attack_full,
    unobservable_attack_partial,
)

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]

METRIC_COLUMNS = [
    "magnitude",
    "mean_error",
    "normalized_error",
    "stderr",
    "detection_rate",
    "framed_removed_rate",
    "adversary_removed_rate",
    "pass_rate",
]
LIST_KEYS = {"adversary", "framed", "observed", "magnitudes"}
TRUE_WORDS = {"1", "true", "yes", "on"}


# Scenario files

def parse_scenario(text: str, base_dir: Optional[PathLike] = None) -> Scenario:
    """Line-oriented `key=value` scenario text; `#` starts a comment."""
    values: Dict[str, object] = {}
    for number, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        key, value = key.strip(), value.strip()
        if not sep or not key:
            raise ScenarioError(f"line {number}: expected key=value, got {raw.strip()!r}")
        if key not in Scenario.model_fields:
            raise ScenarioError(f"line {number}: unknown scenario key {key!r}")
        if key in values:
            raise ScenarioError(f"line {number}: duplicate scenario key {key!r}")
        if key in LIST_KEYS:
            values[key] = [item.strip() for item in value.split(",") if item.strip()]
        elif key == "train_once":
            values[key] = value.lower() in TRUE_WORDS
        else:
            values[key] = value
    if "case" in values and base_dir is not None:
        values["case"] = _resolve_case_path(str(values["case"]), Path(base_dir))
    try:
        return Scenario(**values)
    except ValidationError as e:
        raise ScenarioError(f"Invalid scenario: {e}")


def _resolve_case_path(case: str, base_dir: Path) -> str:
    if case.startswith("pypower:") or Path(case).is_absolute():
        return case
    for candidate in (base_dir / case, Path(settings.CASES_DIR) / case, Path(settings.CASES_DIR) / Path(case).name):
        if candidate.exists():
            return str(candidate)
    return case


def load_scenario(path: PathLike) -> Scenario:
    path = Path(path)
    if not path.is_absolute() and not path.exists() and (Path(settings.SCENARIOS_DIR) / path).exists():
        path = Path(settings.SCENARIOS_DIR) / path
    try:
        text = path.read_text()
    except OSError as e:
        logger.error(f"Cannot read scenario {path}: {str(e)}")
        raise ScenarioError(f"Cannot read scenario {path}: {str(e)}")
    return parse_scenario(text, base_dir=path.parent)


def format_scenario(scenario: Scenario) -> str:
    out = []
    for key, value in scenario.model_dump(mode="json", exclude_none=True).items():
        if isinstance(value, list):
            if not value:
                continue
            value = ",".join(str(v) for v in value)
        elif isinstance(value, bool):
            value = "true" if value else "false"
        out.append(f"{key}={value}")
    return "\n".join(out) + "\n"


# Metrics

@dataclass
class MetricsTable:
    """Per-magnitude aggregates; the magnitude-0 row is the no-attack baseline."""
    frame: pd.DataFrame
    label: str = ""

    @property
    def baseline_error(self) -> float:
        return float(self.frame.iloc[0]["mean_error"])

    @property
    def magnitudes(self) -> List[float]:
        return [float(m) for m in self.frame["magnitude"]]

    def to_csv(self, path: Optional[PathLike] = None) -> str:
        text = self.frame.to_csv(index=False, float_format="%.10g")
        if path is not None:
            path = Path(path)
            path.parent.mkdir(parents=True, exist_ok=True)
            path.write_text(text)
        return text

    def records(self) -> List[dict]:
        return self.frame.to_dict(orient="records")


def _fraction_removed(trace: BadDataTrace, rows: Sequence[int]) -> float:
    if not rows:
        return 0.0
    removed = set(trace.removed)
    return sum(1 for r in rows if r in removed) / len(rows)


def aggregate(records: pd.DataFrame) -> pd.DataFrame:
    """Reduce per-run records to one row per magnitude, baseline first."""
    grouped = records.groupby("magnitude", sort=True)
    frame = pd.DataFrame({
        "magnitude": grouped["error"].mean().index.astype(float),
        "mean_error": grouped["error"].mean().to_numpy(),
        "stderr": (grouped["error"].std(ddof=1).fillna(0.0) / np.sqrt(grouped["error"].count())).to_numpy(),
        "detection_rate": grouped["detected"].mean().to_numpy(),
        "framed_removed_rate": grouped["framed_removed"].mean().to_numpy(),
        "adversary_removed_rate": grouped["adversary_removed"].mean().to_numpy(),
        "pass_rate": grouped["passed"].mean().to_numpy(),
    })
    baseline = frame.loc[frame["magnitude"] == 0.0, "mean_error"]
    if baseline.empty:
        raise ScenarioError("Run records carry no baseline (magnitude 0) rows")
    scale = float(baseline.iloc[0])
    frame["normalized_error"] = frame["mean_error"] / scale
    frame["stderr"] = frame["stderr"] / scale
    return frame[METRIC_COLUMNS].reset_index(drop=True)


# Runner

class ScenarioRunner:
    def __init__(self, scenario: Scenario, case: Optional[GridCase] = None,
                 progress: Optional[Callable[[int, int], None]] = None,
                 plan: Optional[AttackPlan] = None):
        self.logger = logging.getLogger(__name__)
        self.scenario = scenario
        self.progress = progress
        case = load_case(scenario.case) if case is None else case
        if scenario.reference is not None:
            case = case.with_reference(scenario.reference)
        self.case = case

        self.adversary = case.sensor_indices(scenario.adversary)
        self.framed = case.sensor_indices(scenario.framed)
        self.observed = case.sensor_indices(scenario.observed)
        self.noise_std = snr_noise_std(case, scenario.snr_db)
        self.state_cov = state_covariance(case)
        self.linear = scenario.model is MeasurementModelKind.DC
        self.H = dc_jacobian(case) if self.linear else ac_jacobian(case, AcState.operating(case))
        self._fixed_plan: Optional[AttackPlan] = None
        self.replay: Optional[AttackPlan] = None
        if plan is not None:
            self.use_plan(plan)

    def use_plan(self, plan: AttackPlan):
        """Replay a saved plan in every run instead of building one."""
        if self.scenario.attack is AttackKind.NONE:
            raise ScenarioError("A replayed plan needs a scenario with an attack")
        if any(row >= self.case.n_sensors for row in plan.rows):
            raise ScenarioError(f"Plan sensors are not rows of case {self.case.name}")
        self.replay = plan

    # attack construction

    def _training_rows(self) -> List[int]:
        kind = self.scenario.attack
        if not kind.partial:
            return list(range(self.case.n_sensors))
        if kind.framing:
            framed = set(self.framed)
            return [r for r in self.observed if r not in framed]
        return list(self.observed)

    def _dimension(self, rows: Sequence[int]) -> int:
        if self.scenario.subspace_dim is not None:
            return self.scenario.subspace_dim
        if not self.scenario.attack.partial:
            return self.case.dc_dimension
        return len(affected_states(self.H.entries[list(rows)]))

    def _basis(self, rng: Optional[np.random.Generator]) -> SubspaceBasis:
        rows = self._training_rows()
        if self.scenario.attack.known:
            return exact_basis(self.H.select_rows(rows), rows=rows)
        samples = self._sample(self.scenario.train_k, rng, rows)
        labels = tuple(self.case.sensors[r].label for r in rows)
        return estimate_subspace(samples, self._dimension(rows), labels=labels, rows=rows)

    def build_plan(self, rng: Optional[np.random.Generator] = None) -> AttackPlan:
        kind = self.scenario.attack
        basis = self._basis(rng)
        if kind.base == AttackKind.UNOBSERVABLE_FULL.value:
            plan = unobservable_attack_full(basis, self.adversary)
        elif kind.base == AttackKind.UNOBSERVABLE_PARTIAL.value:
            plan = unobservable_attack_partial(basis, self.adversary)
        elif kind.base == AttackKind.FRAMING_FULL.value:
            plan = framing_attack_full(basis, self.adversary, self.framed, eps1=self.scenario.eps1)
        else:
            framed = tuple(self.case.sensors[r].label for r in self.framed)
            plan = framing_attack_partial(basis, self.adversary, framed=framed)
        return plan

    def _plan_for_run(self, rng: np.random.Generator) -> Optional[AttackPlan]:
        if self.scenario.attack is AttackKind.NONE:
            return None
        if self.replay is not None:
            return self.replay
        if self.scenario.attack.known or self.scenario.train_once:
            if self._fixed_plan is None:
                self._fixed_plan = self.build_plan(rng)
            return self._fixed_plan
        return self.build_plan(rng)

    # measurement and estimation

    def _sample(self, count: int, rng, rows: Optional[Sequence[int]] = None):
        if not self.linear:
            return sample_measurements(self.case, count, self.noise_std, self.state_cov, rng, rows).values
        angles = self._angles(count, rng)
        H = self.H.entries if rows is None else self.H.entries[list(rows)]
        clean = angles @ H.T
        return clean + self.noise_std * rng.standard_normal(clean.shape)

    def _angles(self, count: int, rng) -> np.ndarray:
        std = np.sqrt(np.diag(self.state_cov)[self.case.n_buses:])
        return self.case.operating_angles() + rng.standard_normal((count, self.case.dc_dimension)) * std

    def _observation(self, rng):
        """One (true angles, magnitudes, z) draw."""
        if self.linear:
            angles = self._angles(1, rng)[0]
            z = self.H.entries @ angles + self.noise_std * rng.standard_normal(self.case.n_sensors)
            return angles, None, z
        samples = sample_measurements(self.case, 1, self.noise_std, self.state_cov, rng)
        return samples.states.angles[0], samples.states.magnitudes[0], samples.values[0]

    def _fusion_center(self, magnitudes: Optional[np.ndarray]) -> FusionCenter:
        model = LinearModel(self.H) if self.linear else AcModel(self.case, magnitudes=magnitudes)
        return FusionCenter(model, self.noise_std, self.scenario.alpha)

    def _record(self, magnitude: float, trace: BadDataTrace, angles: np.ndarray) -> dict:
        return {
            "magnitude": magnitude,
            "error": float(np.linalg.norm(trace.final_estimate - angles)),
            "detected": trace.detected_initially,
            "passed": trace.passed,
            "framed_removed": _fraction_removed(trace, self.framed),
            "adversary_removed": _fraction_removed(trace, self.adversary),
        }

    def run_once(self, seed: np.random.SeedSequence) -> List[dict]:
        train_seed, run_seed = seed.spawn(2)
        plan = self._plan_for_run(np.random.default_rng(train_seed))
        rng = np.random.default_rng(run_seed)
        angles, magnitudes, z = self._observation(rng)
        center = self._fusion_center(magnitudes)

        records = [self._record(0.0, center.process(z), angles)]
        if plan is None:
            return records
        for magnitude in self.scenario.magnitudes:
            eta = calibrate_eta(z, plan, magnitude)
            records.append(self._record(magnitude, center.process(apply_attack(z, plan, eta)), angles))
        return records

    def run(self) -> MetricsTable:
        s = self.scenario
        self.logger.info(
            f"Running scenario {s.name}: case {self.case.name or s.case}, {s.runs} runs, "
            f"{len(s.magnitudes) if s.attack is not AttackKind.NONE else 0} magnitudes"
        )
        children = np.random.SeedSequence(s.seed).spawn(s.runs + 1)
        run_seeds = children[:-1]
        if self.replay is not None:
            self.logger.info(f"Replaying {self.replay.kind} plan on {len(self.replay.labels)} sensors")
        elif s.attack is not AttackKind.NONE and (s.attack.known or s.train_once):
            # the last child is reserved for the shared training window
            self._fixed_plan = self.build_plan(np.random.default_rng(children[-1]))
            self.logger.info(f"Fixed attack plan on {len(self._fixed_plan.labels)} sensors")

        records: List[dict] = []
        workers = max(1, settings.MAX_WORKERS)
        if workers == 1:
            results = map(self.run_once, run_seeds)
        else:
            executor = ThreadPoolExecutor(max_workers=workers)
            results = executor.map(self.run_once, run_seeds)
        try:
            for k, run_records in enumerate(results, start=1):
                records.extend(run_records)
                if self.progress is not None:
                    self.progress(k, s.runs)
                if k % max(1, s.runs // 10) == 0:
                    self.logger.info(f"Scenario {s.name}: {k}/{s.runs} runs")
        finally:
            if workers > 1:
                executor.shutdown()

        return MetricsTable(aggregate(pd.DataFrame.from_records(records)), label=s.name)


def run_scenario(scenario: Scenario, case: Optional[GridCase] = None,
                 progress: Optional[Callable[[int, int], None]] = None,
                 plan: Optional[AttackPlan] = None) -> MetricsTable:
    return ScenarioRunner(scenario, case, progress, plan).run()


def join_tables(tables: Sequence[MetricsTable]) -> MetricsTable:
    """Align tables on magnitude; adds each method's relative difference to the first."""
    if not tables:
        raise ScenarioError("Nothing to compare")
    if len(tables) == 1:
        return tables[0]
    grid = tables[0].magnitudes
    for table in tables[1:]:
        if table.magnitudes != grid:
            raise GridMismatchError(
                f"Magnitude grid of {table.label or 'table'} {table.magnitudes} differs from {grid}"
            )

    labels = [t.label or f"method{k}" for k, t in enumerate(tables, start=1)]
    if len(set(labels)) != len(labels):
        labels = [f"{label}_{k}" for k, label in enumerate(labels, start=1)]
    joined = pd.DataFrame({"magnitude": grid})
    reference = tables[0].frame["normalized_error"].to_numpy()
    for label, table in zip(labels, tables):
        joined[f"normalized_error_{label}"] = table.frame["normalized_error"].to_numpy()
        joined[f"stderr_{label}"] = table.frame["stderr"].to_numpy()
        joined[f"detection_rate_{label}"] = table.frame["detection_rate"].to_numpy()
    for label, table in zip(labels[1:], tables[1:]):
        joined[f"relative_difference_{label}"] = (table.frame["normalized_error"].to_numpy() - reference) / reference
    return MetricsTable(joined, label="+".join(labels))


def compare_methods(scenarios: Sequence[Scenario]) -> MetricsTable:
    """Run several scenarios on one case and join their tables per magnitude."""
    if not scenarios:
        raise ScenarioError("Nothing to compare")
    cases = {s.case for s in scenarios}
    if len(cases) > 1:
        raise ScenarioError(f"Compared scenarios use different cases: {sorted(cases)}")
    seeds = {s.seed for s in scenarios}
    if len(seeds) > 1:
        logger.warning(f"Compared scenarios use different seeds: {sorted(seeds)}")
    case = load_case(scenarios[0].case)
    return join_tables([run_scenario(s, case) for s in scenarios])


def metrics_rows(table: MetricsTable) -> List[Mapping[str, float]]:
    return [{k: float(v) for k, v in row.items()} for row in table.records()]
