"""
Quartic double-well free energy with nodal (mass-lumped) quadrature.
"""

from __future__ import annotations

from typing import Union

import numpy as np
import scipy.sparse as sp

from src.fem.fields import FEField
from src.fem.operators import mesh_operators


def free_energy(s: np.ndarray) -> np.ndarray:
    return 0.25 * (1.0 - s ** 2) ** 2


def free_energy_derivative(s: np.ndarray) -> np.ndarray:
    return s ** 3 - s


def free_energy_second_derivative(s: np.ndarray) -> np.ndarray:
    return 3.0 * s ** 2 - 1.0


def nonlinearity(phi: FEField, order: int,
                 lumped: np.ndarray = None) -> Union[float, FEField, sp.csr_matrix]:
    """Lumped quadrature of F (order 0), the load of F' (order 1) or the matrix of F'' (order 2).

    Args:
        phi: Phase field.
        order: 0, 1 or 2.
        lumped: Lumped mass vector of phi's mesh; assembled when omitted.
    """
    if lumped is None:
        lumped = mesh_operators(phi.mesh).lumped
    c = phi.coeffs
    if order == 0:
        return float(lumped @ free_energy(c))
    if order == 1:
        return FEField(lumped * free_energy_derivative(c), phi.mesh, "dF")
    if order == 2:
        return sp.diags(lumped * free_energy_second_derivative(c)).tocsr()
    raise ValueError(f"order must be 0, 1 or 2, got {order}")


def ginzburg_landau_energy(phi: FEField, sigma: float, epsilon: float) -> float:
    """(sigma*eps/2) phi^T K phi + (sigma/eps) * lumped integral of F(phi)."""
    ops = mesh_operators(phi.mesh)
    c = phi.coeffs
    gradient_part = 0.5 * sigma * epsilon * float(c @ (ops.stiffness @ c))
    return gradient_part + sigma / epsilon * float(ops.lumped @ free_energy(c))
