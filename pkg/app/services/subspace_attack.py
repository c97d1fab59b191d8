"""Adversary side: measurement-subspace learning and attack construction.

The adversary never sees H. It works with a basis U of the column space of H,
either estimated from past measurements or (for the known-H comparison)
computed from H directly, and builds attack vectors inside R(U).
"""
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, List, Optional, Sequence, Tuple, Union
import io
import logging

import numpy as np
import pandas as pd
from scipy import linalg

from app.core.config import settings
from app.core.exceptions import (
    AmbiguousNullSpaceError,
    DegenerateSamplesError,
    EmptyFeasibleSpaceError,
    InfeasibleAttackError,
    InvalidCaseError,
)
from app.services.grid import GridCase, MeasurementMatrix, MeasurementSamples
from app.services.linalg import (
    numeric_rank,
    orthonormal_basis,
    principal_angle,
    residual_projector,
    right_singular_spectrum,
)

logger = logging.getLogger(__name__)

__all__ = [
    "AttackPlan",
    "FramingProblem",
    "SubspaceBasis",
    "apply_attack",
    "build_framing_problem",
    "calibrate_eta",
    "canonical_sign",
    "estimate_dimension",
    "estimate_subspace",
    "exact_basis",
    "format_plan",
    "framing_attack_full",
    "framing_attack_partial",
    "parse_plan",
    "principal_angle",
    "solve_framing_qcqp",
    "spectrum_csv",
    "unobservable_attack_full",
    "unobservable_attack_partial",
]


@dataclass(frozen=True)
class SubspaceBasis:
    """Orthonormal basis U of the measurement subspace, rows labeled by sensor."""
    matrix: np.ndarray
    labels: Tuple[str, ...]
    rows: Tuple[int, ...]  # measurement-vector positions of the basis rows
    singular_values: np.ndarray = field(default_factory=lambda: np.zeros(0))
    exact: bool = False

    @property
    def dimension(self) -> int:
        return self.matrix.shape[1]

    def local(self, items: Iterable) -> List[int]:
        """Basis-row positions of sensors given by label or measurement row."""
        lookup_label = {label: k for k, label in enumerate(self.labels)}
        lookup_row = {row: k for k, row in enumerate(self.rows)}
        out = []
        for item in items:
            k = lookup_row.get(int(item)) if isinstance(item, (int, np.integer)) else lookup_label.get(str(item))
            if k is None:
                raise InvalidCaseError(f"Sensor {item} is not a row of the basis")
            out.append(k)
        if len(set(out)) != len(out):
            raise InvalidCaseError("Sensor set lists a row twice")
        return out


@dataclass(frozen=True)
class AttackPlan:
    direction: np.ndarray  # unit vector over the attacked sensors
    labels: Tuple[str, ...]  # attacked sensors
    rows: Tuple[int, ...]  # their measurement-vector positions
    kind: str = "unobservable-full"
    framed: Tuple[str, ...] = ()
    eta: float = 1.0
    objective: Optional[float] = None
    off_support_energy: float = 0.0
    null_values: Tuple[float, ...] = ()  # smallest singular values behind the construction

    def embedded(self, size: int) -> np.ndarray:
        a = np.zeros(size)
        a[list(self.rows)] = self.direction
        return a

    def scaled(self, eta: float) -> "AttackPlan":
        return replace(self, eta=float(eta))


@dataclass(frozen=True)
class FramingProblem:
    projector: np.ndarray  # W̃
    omega: np.ndarray  # diagonal of Ω̃
    framed: Tuple[int, ...]  # basis-row positions of S_F
    adversary: Tuple[int, ...]  # basis-row positions of S_A
    feasible_basis: np.ndarray  # B, columns zero outside S_A
    eps1: float
    eps2: float
    basis: SubspaceBasis
    remaining_values: np.ndarray = field(default_factory=lambda: np.zeros(0))

    @property
    def dimension(self) -> int:
        return self.feasible_basis.shape[1]


def canonical_sign(v: np.ndarray) -> np.ndarray:
    """Flip v so its first non-negligible entry is positive."""
    v = np.asarray(v, dtype=float)
    scale = np.max(np.abs(v)) if v.size else 0.0
    if scale == 0.0:
        return v
    first = np.flatnonzero(np.abs(v) > 1e-6 * scale)[0]
    return -v if v[first] < 0 else v


def _samples(samples: Union[MeasurementSamples, np.ndarray, Sequence[np.ndarray]]) -> np.ndarray:
    if isinstance(samples, MeasurementSamples):
        return samples.values
    return np.atleast_2d(np.asarray(samples, dtype=float))


def estimate_subspace(samples: Union[MeasurementSamples, np.ndarray, Sequence[np.ndarray]], dim: int,
                      labels: Optional[Sequence[str]] = None,
                      rows: Optional[Sequence[int]] = None) -> SubspaceBasis:
    """Leading left singular vectors of the centered sample covariance."""
    if labels is None and isinstance(samples, MeasurementSamples):
        labels = samples.labels
    Z = _samples(samples)
    count, m = Z.shape
    if dim < 1 or dim > m:
        raise ValueError(f"Subspace dimension {dim} outside 1..{m}")
    if count < dim + 1:
        raise DegenerateSamplesError(f"{count} samples cannot span a {dim}-dimensional subspace")

    centered = Z - Z.mean(axis=0)
    covariance = centered.T @ centered / (count - 1)
    U, values, _ = linalg.svd(covariance)
    if numeric_rank(covariance) < dim:
        raise DegenerateSamplesError(
            f"Sample covariance has rank {numeric_rank(covariance)}, below dimension {dim}"
        )
    labels = tuple(labels) if labels is not None else tuple(str(k) for k in range(m))
    rows = tuple(rows) if rows is not None else tuple(range(m))
    logger.info(f"Estimated {dim}-dimensional subspace from {count} samples of {m} sensors")
    return SubspaceBasis(U[:, :dim], labels, rows, values)


def exact_basis(H: Union[MeasurementMatrix, np.ndarray], rows: Optional[Sequence[int]] = None) -> SubspaceBasis:
    """Orthonormal basis of R(H), for attacks with knowledge of H."""
    entries = H.entries if isinstance(H, MeasurementMatrix) else np.asarray(H, dtype=float)
    labels = H.row_labels if isinstance(H, MeasurementMatrix) else tuple(str(k) for k in range(entries.shape[0]))
    U = orthonormal_basis(entries)
    rows = tuple(rows) if rows is not None else tuple(range(entries.shape[0]))
    return SubspaceBasis(U, tuple(labels), rows, linalg.svd(entries, compute_uv=False), exact=True)


def estimate_dimension(singular_values: np.ndarray) -> int:
    """Position of the largest ratio between consecutive singular values."""
    values = np.sort(np.asarray(singular_values, dtype=float))[::-1]
    values = values[values > 0.0]
    if values.size < 2:
        return int(values.size)
    ratios = values[:-1] / values[1:]
    return int(np.argmax(ratios)) + 1


def _null_direction(matrix: np.ndarray, tol: float):
    values, vectors = right_singular_spectrum(matrix)
    top = values[-1] if values.size else 0.0
    ratio = values[0] / top if top > 0.0 else 0.0
    if ratio > tol:
        raise InfeasibleAttackError(
            f"Remaining rows keep full rank (smallest/largest singular value {ratio:.3g} > {tol:.3g})"
        )
    return values, vectors


def _feasibility_tol(basis: SubspaceBasis, tol: Optional[float]) -> float:
    if tol is not None:
        return tol
    return settings.RANK_TOL if basis.exact else settings.UNOBSERVABLE_TOL


def unobservable_attack_full(U: SubspaceBasis, adversary: Iterable, tol: Optional[float] = None) -> AttackPlan:
    """a = U v with v spanning the (near) null space of U minus the adversary rows."""
    attacked = U.local(adversary)
    if not attacked:
        raise InfeasibleAttackError("Adversary set is empty")
    remaining = np.delete(U.matrix, attacked, axis=0)
    values, vectors = _null_direction(remaining, _feasibility_tol(U, tol))

    a = U.matrix @ vectors[:, 0]
    inside = a[attacked]
    total = float(a @ a)
    off_support = (total - float(inside @ inside)) / total if total > 0 else 0.0
    direction = canonical_sign(inside / np.linalg.norm(inside))
    if off_support > 1e-6:
        logger.info(f"Attack energy outside the adversary set dropped: {off_support:.3g}")
    return AttackPlan(
        direction=direction,
        labels=tuple(U.labels[k] for k in attacked),
        rows=tuple(U.rows[k] for k in attacked),
        kind="unobservable-full",
        off_support_energy=off_support,
        null_values=tuple(float(v) for v in values[:2]),
    )


def _partial_null_attack(U: SubspaceBasis, attacked_items: Iterable, kind: str,
                         framed: Sequence[str] = (), tol: Optional[float] = None,
                         gap_factor: Optional[float] = None) -> AttackPlan:
    gap_factor = settings.NULL_GAP_FACTOR if gap_factor is None else gap_factor
    attacked = U.local(attacked_items)
    if not attacked:
        raise InfeasibleAttackError("Attacked set is empty")
    remaining = np.delete(U.matrix, attacked, axis=0)
    values, vectors = _null_direction(remaining, _feasibility_tol(U, tol))
    top = values[-1] if values.size else 0.0
    if values.size < 2 or values[1] <= gap_factor * values[0] or values[1] <= settings.RANK_TOL * top:
        raise AmbiguousNullSpaceError(
            f"Null space is not one-dimensional (smallest singular values {values[:2]})"
        )

    entries = (U.matrix @ vectors[:, 0])[attacked]
    direction = canonical_sign(entries / np.linalg.norm(entries))
    return AttackPlan(
        direction=direction,
        labels=tuple(U.labels[k] for k in attacked),
        rows=tuple(U.rows[k] for k in attacked),
        kind=kind,
        framed=tuple(framed),
        null_values=(float(values[0]), float(values[1])),
    )


def unobservable_attack_partial(U_o: SubspaceBasis, critical: Iterable, tol: Optional[float] = None,
                                gap_factor: Optional[float] = None) -> AttackPlan:
    """Attack on the critical set C from a basis learned on the observed sensors only."""
    return _partial_null_attack(U_o, critical, "unobservable-partial", tol=tol, gap_factor=gap_factor)


def framing_attack_partial(U_A: SubspaceBasis, attacked: Iterable, framed: Sequence[str] = (),
                           tol: Optional[float] = None, gap_factor: Optional[float] = None) -> AttackPlan:
    """Framing attack on C₁ from a basis learned on S_o minus C₂.

    `framed` only labels the plan; the framed sensors are not rows of U_A.
    """
    return _partial_null_attack(U_A, attacked, "framing-partial", framed=framed, tol=tol, gap_factor=gap_factor)


def build_framing_problem(U: SubspaceBasis, adversary: Iterable, framed: Iterable,
                          eps1: Optional[float] = None, eps2: Optional[float] = None) -> FramingProblem:
    """Residual projector, normalizer and feasible basis for the framing QCQP.

    eps1 is relative to the largest singular value of U with the adversary and
    framed rows removed.
    """
    if eps1 is None:
        eps1 = settings.EPS1_RELATIVE if U.exact else settings.EPS1_RELATIVE_DATA
    eps2 = settings.EPS2 if eps2 is None else eps2
    attacked = U.local(adversary)
    framed_rows = U.local(framed)
    if set(attacked) & set(framed_rows):
        raise InvalidCaseError("Adversary and framed sets must be disjoint")
    if not attacked or not framed_rows:
        raise InfeasibleAttackError("Framing needs non-empty adversary and framed sets")

    W = residual_projector(U.matrix)
    leverage = np.diag(W)
    omega = np.zeros_like(leverage)
    live = leverage > eps2
    omega[live] = 1.0 / np.sqrt(leverage[live])

    remaining = np.delete(U.matrix, attacked + framed_rows, axis=0)
    values, vectors = right_singular_spectrum(remaining)
    top = values[-1] if values.size else 0.0
    keep = values < eps1 * top if top > 0.0 else np.ones(values.size, dtype=bool)
    if not np.any(keep):
        raise EmptyFeasibleSpaceError(
            f"No singular value of the remaining rows below {eps1:g} x {top:.3g}"
        )

    U_A = np.zeros_like(U.matrix)
    U_A[attacked] = U.matrix[attacked]
    B = U_A @ vectors[:, keep]
    logger.info(f"Framing feasible space has dimension {B.shape[1]}")
    return FramingProblem(
        projector=W,
        omega=omega,
        framed=tuple(framed_rows),
        adversary=tuple(attacked),
        feasible_basis=B,
        eps1=eps1,
        eps2=eps2,
        basis=U,
        remaining_values=values,
    )


def _top_generalized(M: np.ndarray, B: np.ndarray):
    return linalg.eigh(M.T @ M, B.T @ B)


def solve_framing_qcqp(problem: FramingProblem) -> AttackPlan:
    """max ‖I_SF Ω̃ W̃ a‖² over unit a in the feasible space, as a generalized eigenproblem."""
    B = problem.feasible_basis
    framed = list(problem.framed)

    def objective_matrix(basis):
        return (problem.omega[:, None] * (problem.projector @ basis))[framed]

    try:
        values, vectors = _top_generalized(objective_matrix(B), B)
    except (linalg.LinAlgError, ValueError):
        logger.warning("Feasible basis is collinear; re-orthonormalizing")
        B = orthonormal_basis(B)
        if B.shape[1] == 0:
            raise EmptyFeasibleSpaceError("Feasible basis collapsed to zero")
        try:
            values, vectors = _top_generalized(objective_matrix(B), B)
        except (linalg.LinAlgError, ValueError) as e:
            raise EmptyFeasibleSpaceError(f"Framing eigenproblem failed: {str(e)}")

    a = B @ vectors[:, -1]
    a = a / np.linalg.norm(a)
    objective = float(np.sum(objective_matrix(a[:, None]) ** 2))
    U = problem.basis
    attacked = list(problem.adversary)
    direction = canonical_sign(a[attacked] / np.linalg.norm(a[attacked]))
    return AttackPlan(
        direction=direction,
        labels=tuple(U.labels[k] for k in attacked),
        rows=tuple(U.rows[k] for k in attacked),
        kind="framing-full",
        framed=tuple(U.labels[k] for k in framed),
        objective=objective,
        null_values=tuple(float(v) for v in problem.remaining_values[:2]),
    )


def framing_attack_full(U: SubspaceBasis, adversary: Iterable, framed: Iterable,
                        eps1: Optional[float] = None, eps2: Optional[float] = None) -> AttackPlan:
    return solve_framing_qcqp(build_framing_problem(U, adversary, framed, eps1, eps2))


def apply_attack(z: np.ndarray, plan: AttackPlan, eta: Optional[float] = None) -> np.ndarray:
    """z + η·a, leaving every other sensor untouched."""
    eta = plan.eta if eta is None else eta
    z = np.asarray(z, dtype=float)
    rows = list(plan.rows)
    if rows and (min(rows) < 0 or max(rows) >= z.shape[-1]):
        raise InvalidCaseError(f"Attack rows exceed measurement length {z.shape[-1]}")
    attacked = z.copy()
    attacked[..., rows] += eta * plan.direction
    return attacked


def calibrate_eta(z: np.ndarray, plan: AttackPlan, target: float) -> float:
    """η with ‖η a‖₁ / ‖z‖₁ = target."""
    return float(target * np.sum(np.abs(z)) / np.sum(np.abs(plan.direction)))


def format_plan(plan: AttackPlan) -> str:
    out = [f"kind={plan.kind}", f"eta={float(plan.eta)!r}"]
    if plan.objective is not None:
        out.append(f"objective={float(plan.objective)!r}")
    if plan.framed:
        out.append(f"framed={','.join(plan.framed)}")
    out.extend(f"sensor={label} {float(value)!r}" for label, value in zip(plan.labels, plan.direction))
    return "\n".join(out) + "\n"


def parse_plan(text: str, case: GridCase) -> AttackPlan:
    """Inverse of format_plan; sensor labels are resolved against the case."""
    fields, labels, values = {}, [], []
    for number, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        key, _, value = line.partition("=")
        if key == "sensor":
            label, _, entry = value.partition(" ")
            try:
                values.append(float(entry))
            except ValueError:
                raise InvalidCaseError(f"line {number}: bad direction entry {entry!r}")
            labels.append(label)
        elif key in ("kind", "eta", "objective", "framed"):
            fields[key] = value
        else:
            raise InvalidCaseError(f"line {number}: unknown plan field {key!r}")
    if not labels:
        raise InvalidCaseError("Plan lists no sensors")
    return AttackPlan(
        direction=np.array(values),
        labels=tuple(labels),
        rows=tuple(case.sensor_indices(labels)),
        kind=fields.get("kind", "unobservable-full"),
        framed=tuple(f for f in fields.get("framed", "").split(",") if f),
        eta=float(fields.get("eta", 1.0)),
        objective=float(fields["objective"]) if "objective" in fields else None,
    )


def spectrum_csv(basis: SubspaceBasis, path: Optional[Union[str, Path]] = None) -> str:
    """Singular-value spectrum of the training covariance as CSV."""
    values = np.asarray(basis.singular_values, dtype=float)
    frame = pd.DataFrame({
        "index": np.arange(1, values.size + 1),
        "singular_value": values,
        "relative": values / values[0] if values.size and values[0] > 0 else values,
        "retained": np.arange(values.size) < basis.dimension,
    })
    buffer = io.StringIO()
    frame.to_csv(buffer, index=False, float_format="%.12g")
    text = buffer.getvalue()
    if path is not None:
        Path(path).write_text(text)
    return text
