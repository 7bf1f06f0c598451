"""
Per-mesh operator cache. Assembled operators are immutable and shared.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from functools import cached_property, lru_cache
from typing import Dict

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from src.fem.assembly import (
    assemble_convection,
    assemble_mass,
    assemble_stiffness,
    lumped_mass,
)
from src.fem.fields import FEField, VelocityField
from src.mesh.adaptive_mesh import AdaptiveMesh

logger = logging.getLogger(__name__)


@dataclass(eq=False)
class MeshOperators:
    mesh: AdaptiveMesh
    mass: sp.csr_matrix
    stiffness: sp.csr_matrix
    lumped: np.ndarray
    _convection: Dict[str, sp.csr_matrix] = field(default_factory=dict, repr=False)
    _velocity: Dict[str, VelocityField] = field(default_factory=dict, repr=False)

    @cached_property
    def mass_lu(self):
        return splu(self.mass.tocsc())

    def mass_solve(self, rhs: np.ndarray) -> np.ndarray:
        return self.mass_lu.solve(np.asarray(rhs, dtype=float))

    def velocity(self, shape) -> VelocityField:
        """Interpolated velocity of a control shape on this mesh."""
        if shape.name not in self._velocity:
            self._velocity[shape.name] = shape.velocity_on(self.mesh)
        return self._velocity[shape.name]

    def convection(self, shape) -> sp.csr_matrix:
        if shape.name not in self._convection:
            self._convection[shape.name] = assemble_convection(self.mesh, self.velocity(shape))
        return self._convection[shape.name]

    def l2_norm(self, f: FEField) -> float:
        f.require_mesh(self.mesh)
        return float(np.sqrt(max(f.coeffs @ (self.mass @ f.coeffs), 0.0)))

    def total_mass(self, f: FEField) -> float:
        f.require_mesh(self.mesh)
        return float(self.lumped @ f.coeffs)


@lru_cache(maxsize=256)
def mesh_operators(mesh: AdaptiveMesh) -> MeshOperators:
    logger.debug(f"assembling operators on mesh {mesh.mesh_id} ({mesh.num_vertices} vertices)")
    return MeshOperators(mesh, assemble_mass(mesh), assemble_stiffness(mesh), lumped_mass(mesh))
