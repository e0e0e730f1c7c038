"""Introspection over gradient heads: norm/bias balance, weight deltas
across task boundaries, and angle/interference matrices.

Angles are computed as the arccosine of the cosine similarity, clamped to
[-1, 1] first so numerically-parallel vectors never produce NaN.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import FeatureSet
from .errors import ShapeError
from .gradient_heads import GradientHead, HeadGrads


@dataclass(frozen=True)
class Snapshot:
    """Frozen copy of a head's parameters at a task boundary."""

    task_index: int
    A: np.ndarray
    b: np.ndarray
    gamma: np.ndarray

    @staticmethod
    def take(head: GradientHead, task_index: int) -> "Snapshot":
        return Snapshot(task_index, head.A.copy(), head.b.copy(), head.gamma.copy())


@dataclass(frozen=True)
class InterferenceReport:
    # row/col indexed by class; all angles in degrees
    vector_angle_matrix: np.ndarray
    class_to_vector_mean_angle: np.ndarray
    risk_matrix: np.ndarray
    skipped_zero_norm: int
    # Risk convention: risk[c][j] = own-class angle / wrong-class angle, so
    # high values mean class c's data is no better aligned with its own
    # vector than with class j's.
    risk_convention: str = "target_angle_over_wrong_angle"


def norm_bias_report(head: GradientHead) -> tuple[np.ndarray, np.ndarray]:
    """Euclidean norm of each output vector and the bias vector."""
    return np.linalg.norm(head.A, axis=1), head.b.copy()


def weight_delta(before: Snapshot, after: Snapshot) -> HeadGrads:
    """Elementwise parameter difference after - before."""
    if before.A.shape != after.A.shape:
        raise ShapeError("snapshots have different shapes")
    return HeadGrads(after.A - before.A, after.b - before.b, after.gamma - before.gamma)


def angle_degrees(u: np.ndarray, v: np.ndarray) -> float:
    nu = np.linalg.norm(u)
    nv = np.linalg.norm(v)
    if nu == 0 or nv == 0:
        return np.nan
    c = np.clip(np.dot(u, v) / (nu * nv), -1.0, 1.0)
    return float(np.degrees(np.arccos(c)))


def interference_report(head: GradientHead, dataset: FeatureSet) -> InterferenceReport:
    """Angle statistics between output vectors and between data and vectors.

    Zero-norm rows or zero-norm feature vectors are excluded from the means
    and counted in skipped_zero_norm.
    """
    if head.dim != dataset.dim:
        raise ShapeError(f"head dimension {head.dim} != data dimension {dataset.dim}")
    N = head.num_classes
    A = head.A
    row_norms = np.linalg.norm(A, axis=1)
    skipped = int(np.sum(row_norms == 0))

    vector_angle = np.zeros((N, N))
    for i in range(N):
        for j in range(N):
            if i != j:
                vector_angle[i, j] = angle_degrees(A[i], A[j])

    Z = dataset.features
    z_norms = np.linalg.norm(Z, axis=1)
    keep = z_norms > 0
    skipped += int(np.sum(~keep))

    class_to_vector = np.full((N, N), np.nan)
    unit_A = np.where(row_norms[:, None] > 0, A / np.maximum(row_norms, 1e-300)[:, None], 0.0)
    for c in range(N):
        rows = keep & (dataset.class_labels == c)
        if not rows.any():
            continue
        unit_Z = Z[rows] / z_norms[rows][:, None]
        cosines = np.clip(unit_Z @ unit_A.T, -1.0, 1.0)
        angles = np.degrees(np.arccos(cosines))
        mean_angles = angles.mean(axis=0)
        mean_angles[row_norms == 0] = np.nan
        class_to_vector[c] = mean_angles

    risk = np.zeros((N, N))
    with np.errstate(divide="ignore", invalid="ignore"):
        for c in range(N):
            for j in range(N):
                if j != c:
                    risk[c, j] = class_to_vector[c, c] / class_to_vector[c, j]
    return InterferenceReport(vector_angle, class_to_vector, risk, skipped)
