"""
Invariant suite behind the ``check`` subcommand.

Every check runs at small scale (level-3 meshes, a few time steps) and reports
the measured quantity next to its tolerance.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from typing import Callable, List, Optional

import numpy as np

from config.settings import DT
from src.control.control_vector import ControlVector, control_inner
from src.control.shapes import ControlShapes
from src.fem.fields import FEField
from src.mesh.adaptive_mesh import (
    MeshSettings,
    common_refinement,
    initial_mesh,
    refine_coarsen,
)
from src.optimization.cost import CostWeights
from src.optimization.models import FullOrderModel, ModelInterface
from src.pipeline.run_config import RunConfig
from src.pipeline.targets import cross_profile
from src.reduction.deim import build_deim, nonlinearity_snapshots
from src.reduction.pod import (
    SnapshotSet,
    build_common_space,
    compute_basis,
    compute_basis_from_snapshots,
    projection_error,
)
from src.reduction.rom import ReducedOrderModel, build_rom, rom_solve
from src.solvers.state_solver import CHParams, solve_trajectory
from src.solvers.tracking import TrackingFunctional, trajectory_error

logger = logging.getLogger(__name__)

CHECK_LEVEL = 3


@dataclass(frozen=True)
class CheckResult:
    name: str
    passed: bool
    value: float
    tolerance: float
    detail: str = ""

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        extra = f" ({self.detail})" if self.detail else ""
        return f"[{status}] {self.name}: {self.value:.3e} (tol {self.tolerance:.1e}){extra}"


def small_params(n_steps: int = 10) -> CHParams:
    return CHParams(dt=DT, T=n_steps * DT, newton_atol=1e-12, newton_rtol=1e-14)


def _cross(mesh) -> FEField:
    return FEField.interpolate(cross_profile(0.3, 0.1, small_params().epsilon), mesh)


def _tracking_problem(params: CHParams, shapes: ControlShapes, u_desired: float = 30.0):
    phi0 = _cross(initial_mesh(CHECK_LEVEL))
    u_d = ControlVector.constant(u_desired, shapes.m, params.n_steps)
    desired = solve_trajectory(phi0, u_d, shapes, params)
    tracking = TrackingFunctional(desired.phi, desired.final, 20.0, 20.0, params.dt)
    return phi0, desired, tracking


def fd_step(u: ControlVector) -> float:
    """Central-difference step scaled to the control size, 1e-4 * (1 + max|u|)."""
    return 1e-4 * (1.0 + float(np.max(np.abs(u.values))))


def directional_fd_error(model: ModelInterface, u: ControlVector, d: np.ndarray,
                         h: Optional[float] = None) -> float:
    """Relative gap between <grad J(u), d> and the central difference quotient of J."""
    h = fd_step(u) if h is None else h
    g = model.evaluate_gradient(u)
    exact = control_inner(g, d, model.dt)
    plus = model.evaluate_cost(ControlVector(u.values + h * d)).total
    minus = model.evaluate_cost(ControlVector(u.values - h * d)).total
    fd = (plus - minus) / (2.0 * h)
    return abs(exact - fd) / max(abs(fd), 1e-300)


def check_mesh_conformity(rng: np.random.Generator) -> CheckResult:
    mesh = initial_mesh(CHECK_LEVEL)
    meshes = [mesh]
    for _ in range(4):
        mesh = refine_coarsen(mesh, rng.random(mesh.num_triangles), 0.3, 0.1, None, 6, 2)
        meshes.append(mesh)
    common = common_refinement(meshes[1], meshes[-1])
    bad = sum(not m.is_conforming() for m in meshes + [common])
    if not (common.refines(meshes[1]) and common.refines(meshes[-1])):
        bad += 1
    return CheckResult("mesh conformity", bad == 0, float(bad), 0.0,
                       f"{len(meshes) + 1} meshes")


def check_mass_conservation(rng: np.random.Generator) -> CheckResult:
    params = small_params(20)
    shapes = ControlShapes()
    phi0 = _cross(initial_mesh(CHECK_LEVEL))
    u = ControlVector(20.0 + 5.0 * rng.random((shapes.m, params.n_steps + 1)))
    drift = solve_trajectory(phi0, u, shapes, params).mass_drift()
    return CheckResult("mass conservation", drift <= 1e-10, drift, 1e-10)


def check_energy_decay(rng: np.random.Generator) -> CheckResult:
    params = small_params(20)
    shapes = ControlShapes()
    mesh = initial_mesh(CHECK_LEVEL)
    phi0 = FEField(0.05 * rng.standard_normal(mesh.num_vertices), mesh)
    traj = solve_trajectory(phi0, ControlVector.zeros(shapes.m, params.n_steps), shapes, params)
    increase = float(np.max(np.diff(traj.energy)))
    return CheckResult("energy decay (u=0)", increase <= 1e-10, max(increase, 0.0), 1e-10)


def check_fom_gradient(rng: np.random.Generator) -> CheckResult:
    params = small_params(5)
    shapes = ControlShapes()
    phi0, _, tracking = _tracking_problem(params, shapes)
    model = FullOrderModel(phi0, shapes, params, CostWeights(), tracking, adapt=False)
    u = ControlVector(5.0 + 10.0 * rng.random((shapes.m, params.n_steps + 1)))
    d = rng.standard_normal(u.values.shape)
    err = directional_fd_error(model, u, d)
    return CheckResult("full-order gradient vs finite differences", err <= 1e-5, err, 1e-5)


def _fixed_mesh_rom(params: CHParams, shapes: ControlShapes, use_deim: bool):
    phi0, desired, tracking = _tracking_problem(params, shapes)
    snaps = SnapshotSet.from_trajectory(desired.phi, params.dt)
    _, fields = build_common_space(snaps)
    basis = compute_basis(fields, snaps.weights, len(fields))
    deim = build_deim(nonlinearity_snapshots(fields), basis.ell) if use_deim else None
    ops = build_rom(basis, deim, shapes, params, phi0, desired.phi, tracking.terminal)
    return ops, desired


def check_rom_gradient(rng: np.random.Generator) -> CheckResult:
    params = small_params(5)
    shapes = ControlShapes()
    ops, _ = _fixed_mesh_rom(params, shapes, use_deim=False)
    model = ReducedOrderModel(ops, CostWeights())
    u = ControlVector(5.0 + 10.0 * rng.random((shapes.m, params.n_steps + 1)))
    d = rng.standard_normal(u.values.shape)
    err = directional_fd_error(model, u, d)
    return CheckResult("reduced gradient vs finite differences", err <= 1e-5, err, 1e-5)


def check_rom_reproduction(rng: np.random.Generator) -> CheckResult:
    params = small_params(8)
    shapes = ControlShapes()
    ops, desired = _fixed_mesh_rom(params, shapes, use_deim=False)
    u_star = ControlVector.constant(30.0, shapes.m, params.n_steps)
    lifted = rom_solve(u_star, ops).lift(ops.basis)
    err = trajectory_error(lifted, desired.phi, params.dt)
    return CheckResult("ROM reproduces its snapshot trajectory", err <= 1e-6, err, 1e-6,
                       f"ell={ops.ell}")


def check_pod_identity(rng: np.random.Generator) -> CheckResult:
    params = small_params(12)
    shapes = ControlShapes()
    settings = MeshSettings(root_level=CHECK_LEVEL, cadence=3, max_level=5, h_min_guard=None,
                            frac_coarsen=0.05)
    phi0 = _cross(initial_mesh(CHECK_LEVEL))
    u = ControlVector.constant(40.0, shapes.m, params.n_steps)
    traj = solve_trajectory(phi0, u, shapes, params, adapt=True, mesh_settings=settings)
    snaps = SnapshotSet.from_trajectory(traj.phi, params.dt)
    worst = 0.0
    full = compute_basis_from_snapshots(snaps, len(snaps))
    energy = float(np.sum(full.eigenvalues))
    _, fields = build_common_space(snaps)
    for ell in sorted({1, 5, full.ell}):
        basis = full.truncated(min(ell, full.ell))
        err = projection_error(fields, snaps.weights, basis)
        worst = max(worst, abs(err.direct - err.tail) / energy)
    return CheckResult("POD projection error equals eigenvalue tail", worst <= 1e-10, worst,
                       1e-10, f"{len(set(traj.mesh_ids))} snapshot meshes")


def check_deim_exactness(rng: np.random.Generator) -> CheckResult:
    params = small_params(8)
    shapes = ControlShapes()
    _, desired, _ = _tracking_problem(params, shapes)
    deim = build_deim(nonlinearity_snapshots(desired.phi), 4)
    U, P = deim.basis, deim.indices
    f = U @ rng.standard_normal(deim.ell)
    interp = U @ np.linalg.solve(U[P, :], f[P])
    err = float(np.max(np.abs(interp - f)) / np.max(np.abs(f)))
    return CheckResult("DEIM exact on its basis span", err <= 1e-12, err, 1e-12,
                       f"cond {deim.condition:.2e}")


def check_config_roundtrip(rng: np.random.Generator) -> CheckResult:
    cfg = RunConfig()
    back = RunConfig.from_dict(json.loads(cfg.dumps()))
    ok = back == cfg
    return CheckResult("config round-trip", ok, 0.0 if ok else 1.0, 0.0)


CHECKS: List[Callable[[np.random.Generator], CheckResult]] = [
    check_config_roundtrip,
    check_mesh_conformity,
    check_mass_conservation,
    check_energy_decay,
    check_fom_gradient,
    check_rom_gradient,
    check_rom_reproduction,
    check_pod_identity,
    check_deim_exactness,
]


def run_checks(seed: int = 0, names: Optional[List[str]] = None) -> List[CheckResult]:
    """Run every check (or those whose function name contains one of ``names``)."""
    rng = np.random.default_rng(seed)
    results = []
    for check in CHECKS:
        if names and not any(n in check.__name__ for n in names):
            continue
        try:
            result = check(rng)
        except Exception as exc:
            logger.exception(f"{check.__name__} raised")
            result = CheckResult(check.__name__, False, float("nan"), 0.0, repr(exc))
        logger.info(result.line())
        results.append(result)
    return results
