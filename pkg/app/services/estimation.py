"""Fusion center: WLS estimation, J-test detection and normalized-residue
bad-data identification/removal."""
from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple, Union
import logging

import numpy as np
from scipy import linalg
from scipy.stats import chi2

from app.core.config import settings
from app.core.exceptions import ConvergenceError, RankDeficientError, UnobservableError
from app.services.grid import AcState, GridCase, MeasurementMatrix, ac_jacobian, ac_measure
from app.services.linalg import has_full_column_rank, residual_projector

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class EstimationResult:
    estimate: np.ndarray
    residue: np.ndarray
    objective: float  # ‖r‖² / σ²
    jacobian: np.ndarray  # measurement Jacobian at the estimate
    iterations: int = 1
    gradient_norm: float = 0.0  # ‖∇‖ of the weighted objective


@dataclass(frozen=True)
class NormalizedResidue:
    values: np.ndarray
    omega: np.ndarray  # diagonal of Ω
    leverage: np.ndarray  # diagonal of W

    @property
    def zero_rows(self) -> np.ndarray:
        return np.flatnonzero(self.omega == 0.0)


def _as_array(matrix: Union[MeasurementMatrix, np.ndarray]) -> np.ndarray:
    if isinstance(matrix, MeasurementMatrix):
        return matrix.entries
    return np.asarray(matrix, dtype=float)


def linear_wls(H: Union[MeasurementMatrix, np.ndarray], z: np.ndarray,
               noise_std: float = 1.0) -> EstimationResult:
    """x̂ = (HᵀH)⁻¹Hᵀz and r = z - Hx̂."""
    H = _as_array(H)
    z = np.asarray(z, dtype=float)
    if not has_full_column_rank(H):
        raise RankDeficientError(f"Measurement matrix {H.shape} is rank deficient")
    estimate, *_ = linalg.lstsq(H, z)
    residue = z - H @ estimate
    return EstimationResult(
        estimate=estimate,
        residue=residue,
        objective=float(residue @ residue) / noise_std ** 2,
        jacobian=H,
        gradient_norm=float(np.linalg.norm(2.0 * H.T @ residue)) / noise_std ** 2,
    )


def _gauss_newton_step(J: np.ndarray, r: np.ndarray) -> np.ndarray:
    try:
        return linalg.solve(J.T @ J, J.T @ r, assume_a="pos")
    except (linalg.LinAlgError, ValueError):
        step, *_ = linalg.lstsq(J, r)
        return step


def _decrement(J: np.ndarray, r: np.ndarray, noise_std: float) -> float:
    """Drop in the weighted objective that one more Gauss-Newton step would give."""
    projected = J @ _gauss_newton_step(J, r)
    return float(projected @ projected) / noise_std ** 2


def nonlinear_wls(case: GridCase, z: np.ndarray, sensors: Optional[Sequence] = None,
                  noise_std: float = 1.0, magnitudes: Optional[np.ndarray] = None,
                  initial: Optional[np.ndarray] = None, max_iter: Optional[int] = None,
                  step_tol: Optional[float] = None,
                  grad_tol: Optional[float] = None) -> EstimationResult:
    """Gauss-Newton solution of min (1/σ²)‖z - h(θ)‖² over the angle states.

    Voltage magnitudes are inputs (operating magnitudes unless given); the
    reactive/magnitude channel that would estimate them is not modelled.
    """
    max_iter = settings.GN_MAX_ITER if max_iter is None else max_iter
    step_tol = settings.GN_STEP_TOL if step_tol is None else step_tol
    grad_tol = settings.GN_GRAD_TOL if grad_tol is None else grad_tol
    rows = list(range(case.n_sensors)) if sensors is None else case.sensor_indices(sensors)
    z = np.asarray(z, dtype=float)
    if z.shape != (len(rows),):
        raise ValueError(f"Measurement vector has {z.shape[0]} rows, model has {len(rows)}")
    magnitudes = case.operating_magnitudes() if magnitudes is None else np.asarray(magnitudes, dtype=float)
    theta = case.operating_angles() if initial is None else np.array(initial, dtype=float)

    for iteration in range(1, max_iter + 1):
        state = AcState(magnitudes, theta)
        J = ac_jacobian(case, state, rows).entries
        if iteration == 1 and not has_full_column_rank(J):
            raise UnobservableError(f"Sensor subset of {len(rows)} rows does not observe all angles")
        residue = z - ac_measure(case, state, rows)
        step = _gauss_newton_step(J, residue)
        if not np.all(np.isfinite(step)):
            raise ConvergenceError("Gauss-Newton produced a non-finite step")
        theta = theta + step
        if np.max(np.abs(step)) < step_tol:
            state = AcState(magnitudes, theta)
            J = ac_jacobian(case, state, rows).entries
            residue = z - ac_measure(case, state, rows)
            gradient_norm = float(np.linalg.norm(2.0 * J.T @ residue)) / noise_std ** 2
            decrement = _decrement(J, residue, noise_std)
            if decrement > grad_tol:
                logger.error(f"Gauss-Newton stalled: step {np.max(np.abs(step)):.3g}, decrement {decrement:.3g}")
                raise ConvergenceError(
                    f"Gauss-Newton stopped on step size away from a stationary point (decrement {decrement:.3g})"
                )
            return EstimationResult(
                estimate=theta,
                residue=residue,
                objective=float(residue @ residue) / noise_std ** 2,
                jacobian=J,
                iterations=iteration,
                gradient_norm=gradient_norm,
            )
    raise ConvergenceError(f"Gauss-Newton did not converge in {max_iter} iterations")


def chi2_threshold(dof: int, alpha: float) -> float:
    """Upper-tail χ²(dof) quantile at false-alarm probability alpha."""
    if dof < 1:
        raise ValueError("dof must be at least 1")
    if not 0.0 < alpha < 1.0:
        raise ValueError("alpha must be in (0, 1)")
    return float(chi2.isf(alpha, dof))


def j_test(result: EstimationResult, noise_std: float, tau: float) -> bool:
    """Bad data iff ‖r‖²/σ² > τ."""
    if tau <= 0:
        raise ValueError("tau must be positive")
    statistic = float(result.residue @ result.residue) / noise_std ** 2
    return statistic > tau


def normalized_residues(H: Union[MeasurementMatrix, np.ndarray], residue: np.ndarray,
                        noise_std: float, leverage_tol: Optional[float] = None) -> NormalizedResidue:
    """r̃ = Ω r with Ω_ii = 1/√(σ² W_ii), or 0 where W_ii vanishes."""
    H = _as_array(H)
    leverage_tol = settings.LEVERAGE_TOL if leverage_tol is None else leverage_tol
    if not has_full_column_rank(H):
        raise RankDeficientError(f"Measurement matrix {H.shape} is rank deficient")
    W = residual_projector(H)
    leverage = np.clip(np.diag(W).copy(), 0.0, None)
    scale = np.trace(W) / W.shape[0] if W.shape[0] else 0.0
    omega = np.zeros_like(leverage)
    live = leverage >= leverage_tol * max(scale, np.finfo(float).tiny)
    omega[live] = 1.0 / np.sqrt(noise_std ** 2 * leverage[live])
    return NormalizedResidue(values=omega * np.asarray(residue, dtype=float), omega=omega, leverage=leverage)


class MeasurementModel(ABC):
    """Measurement function h restricted to a row subset, as the pipeline sees it."""

    labels: Tuple[str, ...]

    @property
    @abstractmethod
    def n_states(self) -> int:
        ...

    @abstractmethod
    def estimate(self, z: np.ndarray, rows: Sequence[int], noise_std: float) -> EstimationResult:
        ...

    def is_observable(self, rows: Sequence[int]) -> bool:
        return True


class LinearModel(MeasurementModel):
    def __init__(self, H: Union[MeasurementMatrix, np.ndarray]):
        self.H = _as_array(H)
        self.labels = H.row_labels if isinstance(H, MeasurementMatrix) else tuple(
            str(k) for k in range(self.H.shape[0])
        )

    @property
    def n_states(self) -> int:
        return self.H.shape[1]

    def estimate(self, z, rows, noise_std):
        return linear_wls(self.H[list(rows)], z[list(rows)], noise_std)

    def is_observable(self, rows):
        return has_full_column_rank(self.H[list(rows)])


class AcModel(MeasurementModel):
    def __init__(self, case: GridCase, sensors: Optional[Sequence] = None,
                 magnitudes: Optional[np.ndarray] = None, initial: Optional[np.ndarray] = None):
        self.case = case
        self.rows = list(range(case.n_sensors)) if sensors is None else case.sensor_indices(sensors)
        self.magnitudes = magnitudes
        self.initial = initial
        self.labels = tuple(case.sensors[r].label for r in self.rows)

    @property
    def n_states(self) -> int:
        return self.case.dc_dimension

    def estimate(self, z, rows, noise_std):
        rows = list(rows)
        return nonlinear_wls(
            self.case, z[rows], [self.rows[k] for k in rows], noise_std,
            magnitudes=self.magnitudes, initial=self.initial,
        )

    def is_observable(self, rows):
        state = AcState(
            self.case.operating_magnitudes() if self.magnitudes is None else self.magnitudes,
            self.case.operating_angles() if self.initial is None else self.initial,
        )
        return has_full_column_rank(ac_jacobian(self.case, state, [self.rows[k] for k in rows]).entries)


@dataclass(frozen=True)
class PipelineIteration:
    sensors: Tuple[int, ...]  # model rows in play
    result: EstimationResult
    statistic: float
    threshold: float
    detected: bool
    removed: Optional[int] = None


@dataclass
class BadDataTrace:
    labels: Tuple[str, ...]
    iterations: List[PipelineIteration] = field(default_factory=list)
    halted_unobservable: bool = False
    exhausted: bool = False

    @property
    def final(self) -> PipelineIteration:
        return self.iterations[-1]

    @property
    def final_estimate(self) -> np.ndarray:
        return self.final.result.estimate

    @property
    def removed(self) -> List[int]:
        return [it.removed for it in self.iterations if it.removed is not None]

    @property
    def removed_labels(self) -> List[str]:
        return [self.labels[k] for k in self.removed]

    @property
    def detected_initially(self) -> bool:
        return self.iterations[0].detected

    @property
    def passed(self) -> bool:
        """The last J-test accepted the remaining data."""
        return not (self.final.detected or self.exhausted or self.halted_unobservable)


class FusionCenter:
    """Estimate → detect → identify one → remove, until the J-test passes."""

    def __init__(self, model: MeasurementModel, noise_std: float, alpha: Optional[float] = None):
        self.logger = logging.getLogger(__name__)
        self.model = model
        self.noise_std = noise_std
        self.alpha = settings.FALSE_ALARM if alpha is None else alpha

    def process(self, z: np.ndarray, sensors: Optional[Sequence[int]] = None) -> BadDataTrace:
        z = np.asarray(z, dtype=float)
        rows = list(range(len(self.model.labels))) if sensors is None else list(sensors)
        if len(z) != len(self.model.labels):
            raise ValueError(f"Measurement vector has {len(z)} rows, model has {len(self.model.labels)}")
        if not self.model.is_observable(rows):
            raise UnobservableError("Initial sensor set does not observe the state")

        trace = BadDataTrace(labels=self.model.labels)
        while True:
            result = self.model.estimate(z, rows, self.noise_std)
            dof = len(rows) - self.model.n_states
            if dof < 1:
                trace.exhausted = True
                trace.iterations.append(
                    PipelineIteration(tuple(rows), result, result.objective, float("inf"), False)
                )
                self.logger.warning("Bad-data processing ran out of redundancy")
                break

            threshold = chi2_threshold(dof, self.alpha)
            detected = result.objective > threshold
            if not detected:
                trace.iterations.append(PipelineIteration(tuple(rows), result, result.objective, threshold, False))
                break

            normalized = normalized_residues(result.jacobian, result.residue, self.noise_std)
            magnitude = np.abs(normalized.values)
            if not np.any(magnitude > 0.0):
                trace.halted_unobservable = True
                trace.iterations.append(PipelineIteration(tuple(rows), result, result.objective, threshold, True))
                self.logger.warning("Bad data detected but every remaining sensor is critical")
                break

            # argmax returns the lowest index on ties
            local = int(np.argmax(magnitude))
            removed = rows[local]
            trace.iterations.append(
                PipelineIteration(tuple(rows), result, result.objective, threshold, True, removed)
            )
            self.logger.debug(f"Removing sensor {self.model.labels[removed]} (|r̃|={magnitude[local]:.3f})")
            rows = rows[:local] + rows[local + 1:]
        return trace


def bad_data_pipeline(model: Union[GridCase, MeasurementMatrix, np.ndarray, MeasurementModel],
                      z: np.ndarray, noise_std: float, alpha: Optional[float] = None,
                      magnitudes: Optional[np.ndarray] = None) -> BadDataTrace:
    """Run the detection/identification loop on a case (AC model) or a matrix (linear model)."""
    if isinstance(model, GridCase):
        model = AcModel(model, magnitudes=magnitudes)
    elif not isinstance(model, MeasurementModel):
        model = LinearModel(model)
    return FusionCenter(model, noise_std, alpha).process(z)


def format_trace(trace: BadDataTrace) -> str:
    """One record per iteration: J statistic, threshold, removed sensor."""
    out = []
    for k, it in enumerate(trace.iterations, start=1):
        removed = trace.labels[it.removed] if it.removed is not None else "-"
        out.append(
            f"iteration={k} sensors={len(it.sensors)} J={it.statistic:.6g} "
            f"tau={it.threshold:.6g} detected={'yes' if it.detected else 'no'} removed={removed}"
        )
    if trace.halted_unobservable:
        out.append("halted=unobservable")
    if trace.exhausted:
        out.append("halted=exhausted")
    return "\n".join(out) + "\n"
