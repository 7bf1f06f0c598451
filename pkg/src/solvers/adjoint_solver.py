"""
Discrete adjoint of the forward scheme.

Each backward step solves the transposed Newton Jacobian of the forward step
at its converged state. Remeshing enters through the transposes of the same
interpolation matrices the forward solve applied.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import List

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from src.control.control_vector import ControlVector
from src.control.shapes import ControlShapes
from src.fem.fields import FEField
from src.fem.operators import mesh_operators
from src.solvers.state_solver import CHParams, Trajectory, combined_convection
from src.solvers.tracking import TrackingFunctional, misfit
from src.utils.errors import FieldMismatchError, SingularSystemError

logger = logging.getLogger(__name__)


@dataclass
class AdjointTrajectory:
    p: List[FEField]
    q: List[FEField]
    terminal: FEField

    @property
    def mesh_ids(self) -> List[str]:
        return [f.mesh_id for f in self.p]

    def initial_state_gradient(self) -> FEField:
        """Derivative of the reduced cost with respect to phi_0's coefficients."""
        return FEField(-self.p[0].coeffs, self.p[0].mesh, "dJ_dphi0")


def _transposed_step_matrix(ops, conv, phi, params: CHParams) -> sp.csc_matrix:
    M, K, m = ops.mass, ops.stiffness, ops.lumped
    d = sp.diags(3.0 * params.sigma_over_eps * m * phi ** 2)
    jac_t = sp.bmat(
        [[(M + params.dt * conv).T, (params.sigma_eps * K + d).T],
         [(params.dt * params.b * K).T, -M.T]],
        format="csc",
    )
    return jac_t


def solve_adjoint(traj: Trajectory, u: ControlVector, tracking: TrackingFunctional,
                  shapes: ControlShapes, params: CHParams) -> AdjointTrajectory:
    """March (p_k, q_k) backward from k = N_t.

    For k >= 1:  A_k^T [p_k; q_k] = [-dJ/dphi_k + P_{k+1}^T (M p_{k+1} + (sigma/eps) M_L q_{k+1}); 0]
    with the last term absent at k = N_t. p_0 carries the initial-state
    sensitivity and q_0 = 0.
    """
    n = traj.n_steps
    if u.n_levels != n + 1:
        raise FieldMismatchError(f"control has {u.n_levels} levels, trajectory {n + 1}")
    grads = tracking.state_gradients(traj.phi)
    p: List[FEField] = [None] * (n + 1)
    q: List[FEField] = [None] * (n + 1)
    coupling = None  # P_{k+1}^T (M p_{k+1} + (sigma/eps) M_L q_{k+1}) on mesh k

    for k in range(n, 0, -1):
        mesh = traj.phi[k].mesh
        ops = mesh_operators(mesh)
        rhs1 = -grads[k]
        if coupling is not None:
            if coupling.shape[0] != mesh.num_vertices:
                raise FieldMismatchError(f"adjoint coupling does not match mesh at step {k}")
            rhs1 = rhs1 + coupling
        conv = combined_convection(ops, shapes, u.values[:, k])
        jac_t = _transposed_step_matrix(ops, conv, traj.phi[k].coeffs, params)
        rhs = np.concatenate([rhs1, np.zeros(mesh.num_vertices)])
        try:
            sol = splu(jac_t).solve(rhs)
        except RuntimeError as exc:
            raise SingularSystemError(f"singular adjoint system at step {k}: {exc}") from exc
        nv = mesh.num_vertices
        p[k] = FEField(sol[:nv], mesh, "p")
        q[k] = FEField(sol[nv:], mesh, "q")
        back = ops.mass @ p[k].coeffs + params.sigma_over_eps * ops.lumped * q[k].coeffs
        transfer = traj.transfers[k]
        coupling = transfer.T @ back if transfer is not None else back

    mesh0 = traj.phi[0].mesh
    p0 = -grads[0] + (coupling if coupling is not None else 0.0)
    p[0] = FEField(p0, mesh0, "p")
    q[0] = FEField.constant(0.0, mesh0, "q")
    terminal = FEField(
        -tracking.beta2 * _terminal_load(traj.phi[-1], tracking), traj.phi[-1].mesh, "terminal"
    )
    logger.debug(f"adjoint solve: {n} backward steps")
    return AdjointTrajectory(p, q, terminal)


def _terminal_load(phi: FEField, tracking: TrackingFunctional) -> np.ndarray:
    return misfit(phi, tracking.terminal)[1]
