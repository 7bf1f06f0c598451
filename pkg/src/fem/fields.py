"""
Nodal P1 fields and velocity fields bound to one mesh.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from src.mesh.adaptive_mesh import AdaptiveMesh
from src.utils.errors import FieldMismatchError


@dataclass(frozen=True, eq=False)
class FEField:
    """Coefficient vector of a continuous piecewise-linear function on ``mesh``."""
    coeffs: np.ndarray
    mesh: AdaptiveMesh
    name: str = "phi"

    def __post_init__(self):
        c = np.array(self.coeffs, dtype=float)
        if c.ndim != 1 or c.shape[0] != self.mesh.num_vertices:
            raise FieldMismatchError(
                f"field '{self.name}' has shape {c.shape}, mesh {self.mesh.mesh_id} "
                f"has {self.mesh.num_vertices} vertices"
            )
        if not np.all(np.isfinite(c)):
            raise ValueError(f"field '{self.name}' contains non-finite coefficients")
        c.setflags(write=False)
        object.__setattr__(self, "coeffs", c)

    @property
    def mesh_id(self) -> str:
        return self.mesh.mesh_id

    def require_mesh(self, mesh: AdaptiveMesh) -> None:
        if self.mesh_id != mesh.mesh_id:
            raise FieldMismatchError(
                f"field '{self.name}' lives on mesh {self.mesh_id}, expected {mesh.mesh_id}"
            )

    def renamed(self, name: str) -> "FEField":
        return FEField(self.coeffs, self.mesh, name)

    @classmethod
    def interpolate(cls, func: Callable[[np.ndarray, np.ndarray], np.ndarray],
                    mesh: AdaptiveMesh, name: str = "phi") -> "FEField":
        x, y = mesh.vertices[:, 0], mesh.vertices[:, 1]
        values = np.broadcast_to(np.asarray(func(x, y), dtype=float), x.shape)
        return cls(values, mesh, name)

    @classmethod
    def constant(cls, value: float, mesh: AdaptiveMesh, name: str = "phi") -> "FEField":
        return cls(np.full(mesh.num_vertices, float(value)), mesh, name)


def gradients(mesh: AdaptiveMesh) -> np.ndarray:
    """Gradients of the three barycentric basis functions per triangle, shape (T, 3, 2)."""
    p = mesh.vertices[mesh.triangles]
    j00 = p[:, 1, 0] - p[:, 0, 0]
    j01 = p[:, 2, 0] - p[:, 0, 0]
    j10 = p[:, 1, 1] - p[:, 0, 1]
    j11 = p[:, 2, 1] - p[:, 0, 1]
    det = j00 * j11 - j01 * j10
    g1 = np.stack([j11, -j01], axis=1) / det[:, None]
    g2 = np.stack([-j10, j00], axis=1) / det[:, None]
    g0 = -g1 - g2
    return np.stack([g0, g1, g2], axis=1)


def field_gradient(f: FEField) -> np.ndarray:
    """Constant gradient of a P1 field on every triangle, shape (T, 2)."""
    g = gradients(f.mesh)
    vals = f.coeffs[f.mesh.triangles]
    return np.einsum("tj,tjd->td", vals, g)


@dataclass(frozen=True, eq=False)
class VelocityField:
    """Nodal velocity components plus the element-wise transport velocity.

    ``cell_velocity`` is what the convection operator transports with. When the
    field comes from a stream function it is the element-wise curl of the P1
    stream function, which is divergence free inside each triangle and has
    continuous zero normal flux across edges and the boundary.
    """
    v1: FEField
    v2: FEField
    cell_velocity: np.ndarray

    def __post_init__(self):
        self.v2.require_mesh(self.v1.mesh)
        cv = np.array(self.cell_velocity, dtype=float)
        if cv.shape != (self.v1.mesh.num_triangles, 2):
            raise FieldMismatchError(
                f"cell velocity has shape {cv.shape}, expected "
                f"({self.v1.mesh.num_triangles}, 2)"
            )
        cv.setflags(write=False)
        object.__setattr__(self, "cell_velocity", cv)

    @property
    def mesh(self) -> AdaptiveMesh:
        return self.v1.mesh

    @property
    def nodal_speed(self) -> np.ndarray:
        return np.hypot(self.v1.coeffs, self.v2.coeffs)

    def max_speed(self) -> float:
        return float(self.nodal_speed.max()) if self.mesh.num_vertices else 0.0

    @classmethod
    def zero(cls, mesh: AdaptiveMesh) -> "VelocityField":
        return cls(FEField.constant(0.0, mesh, "v1"), FEField.constant(0.0, mesh, "v2"),
                   np.zeros((mesh.num_triangles, 2)))

    @classmethod
    def from_stream_function(cls, velocity: Callable, stream: Callable,
                             mesh: AdaptiveMesh) -> "VelocityField":
        x, y = mesh.vertices[:, 0], mesh.vertices[:, 1]
        vx, vy = velocity(x, y)
        psi = FEField.interpolate(stream, mesh, "stream")
        grad = field_gradient(psi)
        cell = np.stack([grad[:, 1], -grad[:, 0]], axis=1)
        return cls(FEField(vx, mesh, "v1"), FEField(vy, mesh, "v2"), cell)

    @classmethod
    def from_nodal(cls, v1: FEField, v2: FEField) -> "VelocityField":
        """Transport velocity taken as the element average of the nodal values."""
        tri = v1.mesh.triangles
        cell = np.stack([v1.coeffs[tri].mean(axis=1), v2.coeffs[tri].mean(axis=1)], axis=1)
        return cls(v1, v2, cell)


def combine_velocities(fields: Sequence[VelocityField], coeffs: Sequence[float]) -> VelocityField:
    """Linear combination sum_i coeffs[i] * fields[i] on their common mesh."""
    if len(fields) != len(coeffs):
        raise ValueError(f"{len(fields)} velocity fields but {len(coeffs)} coefficients")
    if not fields:
        raise ValueError("at least one velocity field is required")
    mesh = fields[0].mesh
    v1 = np.zeros(mesh.num_vertices)
    v2 = np.zeros(mesh.num_vertices)
    cell = np.zeros((mesh.num_triangles, 2))
    for f, c in zip(fields, coeffs):
        f.v1.require_mesh(mesh)
        v1 += c * f.v1.coeffs
        v2 += c * f.v2.coeffs
        cell += c * f.cell_velocity
    return VelocityField(FEField(v1, mesh, "v1"), FEField(v2, mesh, "v2"), cell)
