"""
Forward solver for the convective Cahn-Hilliard system.

Convex-concave splitting in time (phi^3 implicit, -phi explicit) and Newton's
method on the coupled (phi, mu) block system. The transport velocity B u is
taken at the new time level. With adaptation switched on the mesh is rebuilt
every ``cadence`` steps from the current phase field; the state is carried
over by nodal interpolation and mu is recomputed on the new mesh.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Tuple

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from config.settings import (
    CFL_POLICY,
    DT,
    END_TIME,
    EPSILON,
    MOBILITY,
    NEWTON_ATOL,
    NEWTON_MAX_ITER,
    NEWTON_RTOL,
    SIGMA,
)
from src.control.control_vector import ControlVector
from src.control.shapes import ControlShapes
from src.fem.assembly import assemble_convection
from src.fem.fields import FEField, VelocityField
from src.fem.nonlinearity import ginzburg_landau_energy
from src.fem.operators import MeshOperators, mesh_operators
from src.mesh.adaptive_mesh import AdaptiveMesh, MeshSettings, refine_coarsen
from src.mesh.indicator import interface_indicator
from src.mesh.transfer import transfer_matrix
from src.utils.errors import (
    CFLViolationError,
    NewtonConvergenceError,
    SingularSystemError,
)

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class CHParams:
    b: float = MOBILITY
    sigma: float = SIGMA
    epsilon: float = EPSILON
    dt: float = DT
    T: float = END_TIME
    newton_atol: float = NEWTON_ATOL
    newton_rtol: float = NEWTON_RTOL
    newton_max_iter: int = NEWTON_MAX_ITER

    def __post_init__(self):
        for name in ("b", "sigma", "epsilon", "dt", "T", "newton_atol"):
            if getattr(self, name) <= 0.0:
                raise ValueError(f"{name} must be positive, got {getattr(self, name)}")
        ratio = self.T / self.dt
        if abs(ratio - round(ratio)) > 1e-9 * max(1.0, ratio):
            raise ValueError(f"T/dt must be an integer, got {ratio}")
        if self.newton_max_iter < 1:
            raise ValueError(f"newton_max_iter must be >= 1, got {self.newton_max_iter}")

    @property
    def n_steps(self) -> int:
        return int(round(self.T / self.dt))

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.n_steps + 1) * self.dt

    @property
    def sigma_eps(self) -> float:
        return self.sigma * self.epsilon

    @property
    def sigma_over_eps(self) -> float:
        return self.sigma / self.epsilon


@dataclass
class StepInfo:
    iterations: int
    residuals: List[float]


@dataclass
class Trajectory:
    """Phase field and chemical potential at every time level with their meshes.

    ``transfers[k]`` is the interpolation matrix applied to phi_{k-1} before the
    step k-1 -> k (None when the mesh did not change).
    """
    params: CHParams
    phi: List[FEField]
    mu: List[FEField]
    transfers: List[Optional[sp.csr_matrix]]
    mass: np.ndarray
    energy: np.ndarray
    newton: List[StepInfo] = field(default_factory=list)

    @property
    def n_steps(self) -> int:
        return len(self.phi) - 1

    @property
    def meshes(self) -> List[AdaptiveMesh]:
        return [f.mesh for f in self.phi]

    @property
    def mesh_ids(self) -> List[str]:
        return [f.mesh_id for f in self.phi]

    @property
    def final(self) -> FEField:
        return self.phi[-1]

    @property
    def remesh_steps(self) -> List[int]:
        return [k for k, t in enumerate(self.transfers) if t is not None]

    def mass_drift(self) -> float:
        return float(np.max(np.abs(self.mass - self.mass[0])))


def initial_chemical_potential(phi: FEField, params: CHParams,
                               ops: MeshOperators = None) -> FEField:
    """mu = M^{-1}(sigma*eps*K phi + (sigma/eps) M_L (phi^3 - phi))."""
    ops = ops or mesh_operators(phi.mesh)
    c = phi.coeffs
    rhs = params.sigma_eps * (ops.stiffness @ c) + params.sigma_over_eps * ops.lumped * (c ** 3 - c)
    return FEField(ops.mass_solve(rhs), phi.mesh, "mu")


def newton_solve(ops: MeshOperators, conv: sp.spmatrix, phi_old: np.ndarray,
                 mu_guess: np.ndarray, params: CHParams) -> Tuple[np.ndarray, np.ndarray, StepInfo]:
    """Solve one time step for (phi, mu) on the mesh of ``ops``.

    Residual (first row scaled by dt):
        M(phi - phi_old) + dt*(C phi + b K mu)
        sigma*eps*K phi + (sigma/eps) M_L (phi^3 - phi_old) - M mu
    """
    M, K, m = ops.mass, ops.stiffness, ops.lumped
    dt, b = params.dt, params.b
    se, s_e = params.sigma_eps, params.sigma_over_eps
    n = len(phi_old)
    a11 = (M + dt * conv).tocsr()
    a12 = (dt * b) * K
    a21_lin = se * K
    explicit = s_e * m * phi_old

    def residual(phi, mu):
        r1 = M @ (phi - phi_old) + dt * (conv @ phi) + (dt * b) * (K @ mu)
        r2 = se * (K @ phi) + s_e * m * phi ** 3 - explicit - M @ mu
        return np.concatenate([r1, r2])

    phi = phi_old.copy()
    mu = mu_guess.copy()
    res = residual(phi, mu)
    r0 = float(np.linalg.norm(res))
    history = [r0]
    for it in range(params.newton_max_iter + 1):
        norm = history[-1]
        if norm < params.newton_atol or norm < params.newton_rtol * r0:
            logger.debug(f"newton converged in {it} iterations, residuals {history}")
            return phi, mu, StepInfo(it, history)
        if it == params.newton_max_iter:
            break
        jac = sp.bmat(
            [[a11, a12], [a21_lin + sp.diags(3.0 * s_e * m * phi ** 2), -M]], format="csc"
        )
        try:
            delta = splu(jac).solve(-res)
        except RuntimeError as exc:
            raise SingularSystemError(f"singular Newton system: {exc}") from exc
        if not np.all(np.isfinite(delta)):
            raise SingularSystemError("Newton update is not finite")
        phi = phi + delta[:n]
        mu = mu + delta[n:]
        res = residual(phi, mu)
        history.append(float(np.linalg.norm(res)))
    raise NewtonConvergenceError(
        f"Newton did not converge in {params.newton_max_iter} iterations "
        f"(residual {history[-1]:.3e}); reduce dt or check the CFL number",
        history,
    )


def ch_step(phi_old: FEField, v: VelocityField, params: CHParams,
            mu_guess: FEField = None) -> Tuple[FEField, FEField]:
    """One time step phi_old -> (phi, mu) with transport velocity v."""
    mesh = phi_old.mesh
    v.v1.require_mesh(mesh)
    ops = mesh_operators(mesh)
    conv = assemble_convection(mesh, v)
    guess = mu_guess.coeffs if mu_guess is not None else initial_chemical_potential(
        phi_old, params, ops).coeffs
    phi, mu, _ = newton_solve(ops, conv, phi_old.coeffs, guess, params)
    return FEField(phi, mesh, "phi"), FEField(mu, mesh, "mu")


def combined_convection(ops: MeshOperators, shapes: ControlShapes,
                        coeffs: np.ndarray) -> sp.csr_matrix:
    """sum_i coeffs[i] * C(chi_i) from the per-shape operators cached on the mesh."""
    out = sp.csr_matrix((ops.mesh.num_vertices, ops.mesh.num_vertices))
    for shape, c in zip(shapes, coeffs):
        if c != 0.0:
            out = out + c * ops.convection(shape)
    return out


@dataclass
class CFLReport:
    number: float
    passed: bool
    worst_step: int
    h_min: float


def cfl_check(u: ControlVector, shapes: ControlShapes, mesh: AdaptiveMesh,
              params: CHParams, h_min: float = None) -> CFLReport:
    """max_k ||B u(t_k)||_inf * dt / h_min; fails when above 1."""
    h = mesh.h_min if h_min is None else float(h_min)
    ops = mesh_operators(mesh)
    v1 = np.stack([ops.velocity(s).v1.coeffs for s in shapes])
    v2 = np.stack([ops.velocity(s).v2.coeffs for s in shapes])
    speeds = np.hypot(u.values.T @ v1, u.values.T @ v2).max(axis=1)
    worst = int(np.argmax(speeds))
    number = float(speeds[worst] * params.dt / h)
    return CFLReport(number, number <= 1.0, worst, h)


def _enforce_cfl(report: CFLReport, policy: str, where: str) -> None:
    if report.passed:
        return
    msg = (f"CFL number {report.number:.3f} > 1 at step {report.worst_step} "
           f"on {where} (h_min={report.h_min:.3e})")
    if policy == "abort":
        raise CFLViolationError(msg)
    logger.warning(msg)


def solve_trajectory(phi0: FEField, u: ControlVector, shapes: ControlShapes,
                     params: CHParams, adapt: bool = False,
                     mesh_settings: MeshSettings = None, cfl_policy: str = CFL_POLICY,
                     on_step: Callable[[int, FEField], None] = None) -> Trajectory:
    """March the controlled system from phi0 over N_t steps."""
    n_steps = params.n_steps
    if u.n_levels != n_steps + 1:
        raise ValueError(f"control has {u.n_levels} time levels, expected {n_steps + 1}")
    if u.m != shapes.m:
        raise ValueError(f"control has {u.m} components, {shapes.m} shapes given")
    settings = mesh_settings or MeshSettings()

    mesh = phi0.mesh
    ops = mesh_operators(mesh)
    phi = phi0.coeffs.copy()
    mu = initial_chemical_potential(phi0, params, ops).coeffs
    _enforce_cfl(cfl_check(u, shapes, mesh, params), cfl_policy, f"mesh {mesh.mesh_id}")

    phis = [phi0]
    mus = [FEField(mu, mesh, "mu")]
    transfers: List[Optional[sp.csr_matrix]] = [None]
    newton: List[StepInfo] = []
    for k in range(n_steps):
        transfer = None
        if adapt and k > 0 and k % settings.cadence == 0:
            ind = interface_indicator(FEField(phi, mesh), settings.interface_threshold,
                                      settings.flag_weight)
            new_mesh = refine_coarsen(mesh, ind, settings.frac_refine, settings.frac_coarsen,
                                      settings.h_min_guard, settings.max_level,
                                      settings.root_level)
            if new_mesh != mesh:
                transfer = transfer_matrix(mesh, new_mesh)
                phi = transfer @ phi
                mesh, ops = new_mesh, mesh_operators(new_mesh)
                mu = initial_chemical_potential(FEField(phi, mesh), params, ops).coeffs
                _enforce_cfl(cfl_check(u, shapes, mesh, params), cfl_policy,
                             f"mesh {mesh.mesh_id}")
                logger.debug(f"step {k}: remeshed to {mesh.num_vertices} vertices")
        conv = combined_convection(ops, shapes, u.values[:, k + 1])
        phi, mu, info = newton_solve(ops, conv, phi, mu, params)
        newton.append(info)
        phis.append(FEField(phi, mesh, "phi"))
        mus.append(FEField(mu, mesh, "mu"))
        transfers.append(transfer)
        if on_step is not None:
            on_step(k + 1, phis[-1])

    mass = np.array([mesh_operators(f.mesh).total_mass(f) for f in phis])
    energy = np.array([ginzburg_landau_energy(f, params.sigma, params.epsilon) for f in phis])
    logger.info(
        f"forward solve: {n_steps} steps, {len(set(f.mesh_id for f in phis))} meshes, "
        f"mass drift {np.max(np.abs(mass - mass[0])):.2e}, "
        f"mean Newton iterations {np.mean([i.iterations for i in newton]) if newton else 0:.1f}"
    )
    return Trajectory(params, phis, mus, transfers, mass, energy, newton)
