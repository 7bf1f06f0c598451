"""
Reduced-order state and adjoint models on a POD basis.

The chemical potential is eliminated at the full level,
mu = M^{-1}(sigma*eps*K phi + (sigma/eps) M_L (phi^3 - phi_old)), before the
Galerkin projection, so one reduced step reads

    (a+ - a) + dt*[C_r(u) a+ + b*(sigma*eps*Q a+ + (sigma/eps)*(n(a+) + L(a+ - a)))] = 0

with Q = Z^T K V, L = Z^T M_L V, Z = M^{-1} K V and n(a) = Z^T M_L F'(V a).
The nonlinearity n is either lifted to full dimension (plain POD) or
interpolated at DEIM vertices. When the snapshots span a full-order
trajectory on the reference mesh, the reduced model reproduces it.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence

import numpy as np

from config.settings import ROM_NEWTON_ATOL
from src.control.control_vector import ControlVector
from src.control.shapes import ControlShapes
from src.fem.fields import FEField
from src.fem.nonlinearity import free_energy_derivative, free_energy_second_derivative
from src.fem.operators import mesh_operators
from src.mesh.transfer import transfer
from src.optimization.cost import CostBreakdown, CostWeights
from src.optimization.models import ModelInterface
from src.reduction.deim import DEIMData, DEIMNonlinearity
from src.reduction.pod import PODBasis
from src.solvers.state_solver import CHParams
from src.utils.errors import FieldMismatchError, NewtonConvergenceError
from src.utils.helpers import trapezoid_weights

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class ProjectedNonlinearity:
    """n(a) = left^T F'(V a) evaluated at full dimension."""
    left: np.ndarray
    modes: np.ndarray

    def value(self, a: np.ndarray) -> np.ndarray:
        return self.left.T @ free_energy_derivative(self.modes @ a)

    def jacobian(self, a: np.ndarray) -> np.ndarray:
        d = free_energy_second_derivative(self.modes @ a)
        return self.left.T @ (d[:, None] * self.modes)


@dataclass(eq=False)
class ROMOperators:
    basis: PODBasis
    params: CHParams
    shape_names: Sequence[str]
    stiffness: np.ndarray
    convection: List[np.ndarray]
    coupling: np.ndarray
    lumped_coupling: np.ndarray
    nonlinear: object
    a0: np.ndarray
    desired: np.ndarray
    desired_sq: np.ndarray
    terminal: np.ndarray
    terminal_sq: float
    deim: Optional[DEIMData] = None

    @property
    def ell(self) -> int:
        return self.stiffness.shape[0]

    @property
    def mass(self) -> np.ndarray:
        return np.eye(self.ell)

    @property
    def uses_deim(self) -> bool:
        return self.deim is not None


def build_rom(basis: PODBasis, deim: Optional[DEIMData], shapes: ControlShapes,
              params: CHParams, phi0: FEField, desired: Sequence[FEField],
              terminal: FEField) -> ROMOperators:
    """Offline phase: every full-dimension contraction is done here once."""
    mesh = basis.mesh
    ops = mesh_operators(mesh)
    V = basis.modes
    if V.shape[0] != mesh.num_vertices:
        raise FieldMismatchError(f"basis has {V.shape[0]} rows, mesh {mesh.num_vertices} vertices")
    if len(desired) != params.n_steps + 1:
        raise ValueError(f"{len(desired)} desired fields, expected {params.n_steps + 1}")

    KV = ops.stiffness @ V
    Z = ops.mass_solve(KV) if V.shape[1] else np.zeros_like(V)
    Z = Z.reshape(V.shape)
    stiffness = V.T @ KV
    coupling = KV.T @ Z
    left = ops.lumped[:, None] * Z
    lumped_coupling = left.T @ V
    convection = [V.T @ (ops.convection(s) @ V) for s in shapes]

    if deim is None:
        nonlinear = ProjectedNonlinearity(left, V)
    else:
        if deim.basis.shape[0] != mesh.num_vertices:
            raise FieldMismatchError("DEIM basis does not live on the reference mesh")
        nonlinear = DEIMNonlinearity(deim.projector(left), V[deim.indices, :])

    M = ops.mass
    d_fields = [transfer(f, mesh).coeffs for f in desired]
    D = np.array([V.T @ (M @ y) for y in d_fields]).reshape(len(d_fields), V.shape[1])
    D_sq = np.array([float(y @ (M @ y)) for y in d_fields])
    yT = transfer(terminal, mesh).coeffs
    a0 = V.T @ (M @ transfer(phi0, mesh).coeffs)
    logger.info(
        f"ROM offline: ell={V.shape[1]}, {'POD-DEIM' if deim is not None else 'POD'}, "
        f"{mesh.num_vertices} reference vertices"
    )
    return ROMOperators(
        basis=basis, params=params, shape_names=tuple(shapes.names),
        stiffness=0.5 * (stiffness + stiffness.T), convection=convection,
        coupling=0.5 * (coupling + coupling.T), lumped_coupling=lumped_coupling,
        nonlinear=nonlinear, a0=a0, desired=D, desired_sq=D_sq,
        terminal=V.T @ (M @ yT), terminal_sq=float(yT @ (M @ yT)), deim=deim,
    )


@dataclass
class ROMTrajectory:
    coeffs: np.ndarray
    newton_iterations: List[int] = field(default_factory=list)

    @property
    def n_steps(self) -> int:
        return self.coeffs.shape[0] - 1

    def lift(self, basis: PODBasis) -> List[FEField]:
        return [basis.lift(a) for a in self.coeffs]


def _linear_part(ops: ROMOperators, conv: np.ndarray) -> np.ndarray:
    p = ops.params
    return p.dt * (conv + p.b * (p.sigma_eps * ops.coupling + p.sigma_over_eps * ops.lumped_coupling))


def _reduced_convection(ops: ROMOperators, coeffs: np.ndarray) -> np.ndarray:
    out = np.zeros((ops.ell, ops.ell))
    for c, cr in zip(coeffs, ops.convection):
        out += c * cr
    return out


def rom_solve(u: ControlVector, ops: ROMOperators, params: CHParams = None,
              atol: float = ROM_NEWTON_ATOL) -> ROMTrajectory:
    """Dense Newton on the ell-dimensional convex-splitting step."""
    p = params or ops.params
    n = p.n_steps
    if u.n_levels != n + 1:
        raise ValueError(f"control has {u.n_levels} time levels, expected {n + 1}")
    if u.m != len(ops.convection):
        raise ValueError(f"control has {u.m} components, ROM has {len(ops.convection)} shapes")
    ell = ops.ell
    eye = np.eye(ell)
    scale = p.dt * p.b * p.sigma_over_eps
    coeffs = np.zeros((n + 1, ell))
    coeffs[0] = ops.a0
    iterations = []
    for k in range(n):
        a_old = coeffs[k]
        lin = eye + _linear_part(ops, _reduced_convection(ops, u.values[:, k + 1]))
        const = a_old + scale * (ops.lumped_coupling @ a_old)

        def residual(x):
            return lin @ x + scale * ops.nonlinear.value(x) - const

        x = a_old.copy()
        r = residual(x)
        r0 = float(np.linalg.norm(r))
        history = [r0]
        for it in range(p.newton_max_iter + 1):
            if history[-1] <= atol or history[-1] <= p.newton_rtol * r0:
                break
            if it == p.newton_max_iter:
                raise NewtonConvergenceError(
                    f"reduced Newton did not converge at step {k} (residual {history[-1]:.3e})",
                    history,
                )
            jac = lin + scale * ops.nonlinear.jacobian(x)
            dx = np.linalg.solve(jac, -r)
            x = x + dx
            r = residual(x)
            history.append(float(np.linalg.norm(r)))
            if np.linalg.norm(dx) <= 1e-15 * (1.0 + np.linalg.norm(x)):
                break
        coeffs[k + 1] = x
        iterations.append(len(history) - 1)
    return ROMTrajectory(coeffs, iterations)


def rom_cost(u: ControlVector, ops: ROMOperators, traj: ROMTrajectory,
             weights: CostWeights) -> CostBreakdown:
    p = ops.params
    w = trapezoid_weights(p.n_steps, p.dt)
    A, D = traj.coeffs, ops.desired
    sq = np.einsum("ki,ki->k", A, A) - 2.0 * np.einsum("ki,ki->k", A, D) + ops.desired_sq
    tracking = 0.5 * weights.beta1 * float(w @ np.maximum(sq, 0.0))
    aN = A[-1]
    term_sq = float(aN @ aN - 2.0 * aN @ ops.terminal + ops.terminal_sq)
    terminal = 0.5 * weights.beta2 * max(term_sq, 0.0)
    control = 0.5 * weights.gamma * float(w @ np.sum(u.values ** 2, axis=0))
    return CostBreakdown(tracking, terminal, control)


def rom_gradient(u: ControlVector, ops: ROMOperators, weights: CostWeights,
                 traj: ROMTrajectory = None) -> np.ndarray:
    """Exact gradient of the reduced cost through the transposed reduced step Jacobians."""
    traj = traj or rom_solve(u, ops)
    p = ops.params
    n = p.n_steps
    w = trapezoid_weights(n, p.dt)
    A = traj.coeffs
    ell = ops.ell
    eye = np.eye(ell)
    scale = p.dt * p.b * p.sigma_over_eps
    back = (eye + scale * ops.lumped_coupling).T
    g = weights.gamma * np.array(u.values, dtype=float)
    lam_next = None
    for k in range(n, 0, -1):
        a = A[k]
        dj = weights.beta1 * w[k] * (a - ops.desired[k])
        if k == n:
            dj = dj + weights.beta2 * (a - ops.terminal)
        rhs = -dj if lam_next is None else -dj + back @ lam_next
        conv = _reduced_convection(ops, u.values[:, k])
        jac = eye + _linear_part(ops, conv) + scale * ops.nonlinear.jacobian(a)
        lam = np.linalg.solve(jac.T, rhs)
        for i, cr in enumerate(ops.convection):
            g[i, k] += p.dt / w[k] * float(lam @ (cr @ a))
        lam_next = lam
    return g


class ReducedOrderModel(ModelInterface):
    """POD or POD-DEIM surrogate of the reduced cost."""

    def __init__(self, ops: ROMOperators, weights: CostWeights):
        self.ops = ops
        self.weights = weights
        self.params = ops.params
        self.dt = ops.params.dt
        self._cache = None
        self.timings: Dict[str, List[float]] = {"state_solve": [], "adjoint_solve": []}

    def solve(self, u: ControlVector) -> ROMTrajectory:
        key = u.cache_key()
        if self._cache is not None and self._cache[0] == key:
            return self._cache[1]
        start = time.perf_counter()
        traj = rom_solve(u, self.ops)
        self.timings["state_solve"].append(time.perf_counter() - start)
        self._cache = (key, traj)
        return traj

    def evaluate_cost(self, u: ControlVector) -> CostBreakdown:
        return rom_cost(u, self.ops, self.solve(u), self.weights)

    def evaluate_gradient(self, u: ControlVector) -> np.ndarray:
        traj = self.solve(u)
        start = time.perf_counter()
        g = rom_gradient(u, self.ops, self.weights, traj)
        self.timings["adjoint_solve"].append(time.perf_counter() - start)
        return g

    def lifted(self, u: ControlVector) -> List[FEField]:
        return self.solve(u).lift(self.ops.basis)
