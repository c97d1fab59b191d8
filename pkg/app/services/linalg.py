"""Rank, null-space and subspace helpers shared by the estimator, the
observability checks and the attack constructions."""
from typing import Optional

import numpy as np
from scipy import linalg

from app.core.config import settings


def singular_values(matrix: np.ndarray) -> np.ndarray:
    matrix = np.asarray(matrix, dtype=float)
    if matrix.size == 0:
        return np.zeros(0)
    return linalg.svd(matrix, compute_uv=False)


def numeric_rank(matrix: np.ndarray, rtol: Optional[float] = None) -> int:
    """Singular values below rtol * σ_max count as zero."""
    rtol = settings.RANK_TOL if rtol is None else rtol
    values = singular_values(matrix)
    if values.size == 0 or values[0] == 0.0:
        return 0
    return int(np.sum(values > rtol * values[0]))


def has_full_column_rank(matrix: np.ndarray, rtol: Optional[float] = None) -> bool:
    matrix = np.asarray(matrix, dtype=float)
    return numeric_rank(matrix, rtol) == matrix.shape[1]


def null_basis(matrix: np.ndarray, rtol: Optional[float] = None) -> np.ndarray:
    """Orthonormal basis of N(matrix), one column per null direction."""
    matrix = np.asarray(matrix, dtype=float)
    if matrix.shape[0] == 0:
        return np.eye(matrix.shape[1])
    rtol = settings.RANK_TOL if rtol is None else rtol
    return linalg.null_space(matrix, rcond=rtol)


def right_singular_spectrum(matrix: np.ndarray):
    """Full right singular basis with the spectrum padded by zeros for wide matrices.

    Returns (values, vectors) with values ascending and vectors[:, k] paired
    with values[k].
    """
    matrix = np.asarray(matrix, dtype=float)
    n = matrix.shape[1]
    if matrix.shape[0] == 0:
        return np.zeros(n), np.eye(n)
    _, values, vt = linalg.svd(matrix, full_matrices=True)
    padded = np.zeros(n)
    padded[: values.size] = values
    order = np.argsort(padded, kind="stable")
    return padded[order], vt.T[:, order]


def orthonormal_basis(matrix: np.ndarray, rtol: Optional[float] = None) -> np.ndarray:
    rtol = settings.RANK_TOL if rtol is None else rtol
    return linalg.orth(np.asarray(matrix, dtype=float), rcond=rtol)


def residual_projector(matrix: np.ndarray) -> np.ndarray:
    """W = I - H (HᵀH)⁻¹ Hᵀ, computed from an orthonormal basis of R(H)."""
    matrix = np.asarray(matrix, dtype=float)
    q, _ = np.linalg.qr(matrix)
    return np.eye(matrix.shape[0]) - q @ q.T


def principal_angle(a: np.ndarray, b: np.ndarray) -> float:
    """Largest principal angle (rad) between R(a) and R(b)."""
    a = np.atleast_2d(np.asarray(a, dtype=float).T).T
    b = np.atleast_2d(np.asarray(b, dtype=float).T).T
    return float(np.max(linalg.subspace_angles(a, b)))


def direction_angle(u: np.ndarray, v: np.ndarray) -> float:
    """Angle between two lines through the origin (sign ignored)."""
    u = np.asarray(u, dtype=float).ravel()
    v = np.asarray(v, dtype=float).ravel()
    cosine = abs(u @ v) / (np.linalg.norm(u) * np.linalg.norm(v))
    return float(np.arccos(np.clip(cosine, 0.0, 1.0)))
