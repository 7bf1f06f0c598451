"""
Reduced gradient of the discrete cost, as the trapezoid-weighted Riesz representative.
"""

from __future__ import annotations

import numpy as np

from src.control.control_vector import ControlVector
from src.control.shapes import ControlShapes
from src.fem.operators import mesh_operators
from src.utils.errors import FieldMismatchError
from src.utils.helpers import trapezoid_weights


def reduced_gradient(u: ControlVector, traj, adj, shapes: ControlShapes,
                     gamma: float) -> np.ndarray:
    """g_{i,k} = gamma*u_{i,k} + (dt/w_k) * p_k^T C(chi_i) phi_k for k >= 1, g_{i,0} = gamma*u_{i,0}."""
    if traj.mesh_ids != adj.mesh_ids:
        raise FieldMismatchError("state and adjoint trajectories live on different meshes")
    n = traj.n_steps
    if u.n_levels != n + 1:
        raise FieldMismatchError(f"control has {u.n_levels} levels, trajectory {n + 1}")
    dt = traj.params.dt
    w = trapezoid_weights(n, dt)
    g = gamma * np.array(u.values, dtype=float)
    for k in range(1, n + 1):
        ops = mesh_operators(traj.phi[k].mesh)
        phi = traj.phi[k].coeffs
        p = adj.p[k].coeffs
        for i, shape in enumerate(shapes):
            g[i, k] += dt / w[k] * float(p @ (ops.convection(shape) @ phi))
    return g
