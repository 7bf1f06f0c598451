"""
POD Module
L2-orthonormal POD bases from snapshots on mutually different adapted meshes.

The snapshots are prolongated without loss onto the common refinement of all
snapshot meshes; the basis comes from the weighted Gram matrix (method of
snapshots).
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import List, NamedTuple, Sequence, Tuple

import numpy as np
from scipy.linalg import eigh

from config.settings import POD_RANK_TOL
from src.fem.fields import FEField
from src.fem.operators import mesh_operators
from src.mesh.adaptive_mesh import AdaptiveMesh, common_refinement_of
from src.mesh.transfer import prolongate, transfer
from src.utils.errors import PODError
from src.utils.helpers import trapezoid_weights

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class Snapshot:
    field: FEField
    weight: float

    @property
    def mesh_id(self) -> str:
        return self.field.mesh_id


class SnapshotSet:
    """Weighted snapshot ensemble with a source label."""

    def __init__(self, snapshots: Sequence[Snapshot], source: str = "desired"):
        if len(snapshots) < 2:
            raise PODError(f"at least 2 snapshots are required, got {len(snapshots)}")
        for s in snapshots:
            if not s.weight > 0.0:
                raise PODError(f"snapshot weights must be positive, got {s.weight}")
        self.snapshots: List[Snapshot] = list(snapshots)
        self.source = source

    def __len__(self) -> int:
        return len(self.snapshots)

    @property
    def fields(self) -> List[FEField]:
        return [s.field for s in self.snapshots]

    @property
    def weights(self) -> np.ndarray:
        return np.array([s.weight for s in self.snapshots])

    @property
    def meshes(self) -> List[AdaptiveMesh]:
        return [s.field.mesh for s in self.snapshots]

    @classmethod
    def from_trajectory(cls, fields: Sequence[FEField], dt: float,
                        source: str = "desired") -> "SnapshotSet":
        w = trapezoid_weights(len(fields) - 1, dt)
        return cls([Snapshot(f, float(wk)) for f, wk in zip(fields, w)], source)

    def extended(self, other: "SnapshotSet") -> "SnapshotSet":
        return SnapshotSet(self.snapshots + other.snapshots, f"{self.source}+{other.source}")


def build_common_space(snaps: SnapshotSet) -> Tuple[AdaptiveMesh, List[FEField]]:
    """Reference mesh refining every snapshot mesh, and the prolongated snapshots."""
    reference = common_refinement_of(snaps.meshes)
    fields = [prolongate(f, reference) for f in snaps.fields]
    logger.info(
        f"common space: {len({s.mesh_id for s in snaps.snapshots})} snapshot meshes "
        f"-> {reference.num_vertices} vertices"
    )
    return reference, fields


@dataclass(frozen=True, eq=False)
class PODBasis:
    """M-orthonormal modes (vertices x ell) on the reference mesh and all Gram eigenvalues."""
    mesh: AdaptiveMesh
    modes: np.ndarray
    eigenvalues: np.ndarray

    @property
    def ell(self) -> int:
        return self.modes.shape[1]

    @property
    def reference_mesh_id(self) -> str:
        return self.mesh.mesh_id

    @property
    def tail_sum(self) -> float:
        return float(np.sum(self.eigenvalues[self.ell:]))

    def mode(self, i: int) -> FEField:
        return FEField(self.modes[:, i], self.mesh, f"mode_{i + 1}")

    def project(self, f: FEField) -> np.ndarray:
        """Coefficients V^T M f of f (transferred to the reference mesh)."""
        g = transfer(f, self.mesh)
        return self.modes.T @ (mesh_operators(self.mesh).mass @ g.coeffs)

    def lift(self, a: np.ndarray, name: str = "phi_rom") -> FEField:
        return FEField(self.modes @ np.asarray(a, dtype=float), self.mesh, name)

    def truncated(self, ell: int) -> "PODBasis":
        if not 0 <= ell <= self.ell:
            raise PODError(f"cannot truncate a basis of {self.ell} modes to {ell}")
        return PODBasis(self.mesh, self.modes[:, :ell], self.eigenvalues)


def compute_basis(fields: Sequence[FEField], weights: np.ndarray, ell: int,
                  rank_tol: float = POD_RANK_TOL) -> PODBasis:
    """Method of snapshots on fields sharing one mesh.

    Modes belonging to eigenvalues below rank_tol * lambda_1 are dropped with a
    warning; asking for more modes than snapshots raises PODError.
    """
    if not fields:
        raise PODError("no snapshots given")
    mesh = fields[0].mesh
    for f in fields:
        f.require_mesh(mesh)
    weights = np.asarray(weights, dtype=float)
    n = len(fields)
    if weights.shape != (n,):
        raise PODError(f"{n} snapshots but {weights.shape} weights")
    if ell < 0 or ell > n:
        raise PODError(f"ell={ell} must lie in 0..{n} (number of snapshots)")

    Y = np.column_stack([f.coeffs for f in fields])
    M = mesh_operators(mesh).mass
    sw = np.sqrt(weights)
    gram = (Y.T @ (M @ Y)) * np.outer(sw, sw)
    gram = 0.5 * (gram + gram.T)
    lam, vecs = eigh(gram)
    order = np.argsort(lam)[::-1]
    lam, vecs = lam[order], vecs[:, order]
    lam1 = max(float(lam[0]), 0.0)
    if np.any(lam < -1e-12 * max(lam1, 1.0)):
        logger.warning(f"Gram matrix has negative eigenvalue {lam.min():.3e}; clamped to 0")
    lam = np.clip(lam, 0.0, None)

    rank = int(np.sum(lam > rank_tol * lam1)) if lam1 > 0.0 else 0
    if ell > rank:
        logger.warning(f"requested {ell} POD modes but numerical rank is {rank}; truncating")
        ell = rank

    modes = (Y @ (sw[:, None] * vecs[:, :ell])) / np.sqrt(lam[:ell])
    for i in range(ell):
        j = int(np.argmax(np.abs(modes[:, i])))
        if modes[j, i] < 0.0:
            modes[:, i] = -modes[:, i]
    logger.info(
        f"POD: {ell} modes from {n} snapshots on {mesh.num_vertices} vertices, "
        f"tail {float(lam[ell:].sum()):.3e}"
    )
    return PODBasis(mesh, modes, lam)


def compute_basis_from_snapshots(snaps: SnapshotSet, ell: int,
                                 rank_tol: float = POD_RANK_TOL) -> PODBasis:
    _, fields = build_common_space(snaps)
    return compute_basis(fields, snaps.weights, ell, rank_tol)


class ProjectionError(NamedTuple):
    direct: float
    tail: float


def projection_error(fields: Sequence[FEField], weights: np.ndarray,
                     basis: PODBasis) -> ProjectionError:
    """sum_j w_j ||y_j - V V^T M y_j||_M^2 computed directly, with the eigenvalue tail."""
    M = mesh_operators(basis.mesh).mass
    Y = np.column_stack([transfer(f, basis.mesh).coeffs for f in fields])
    V = basis.modes
    R = Y - V @ (V.T @ (M @ Y))
    direct = float(np.sum(np.asarray(weights) * np.einsum("ij,ij->j", R, M @ R)))
    return ProjectionError(direct, basis.tail_sum)
