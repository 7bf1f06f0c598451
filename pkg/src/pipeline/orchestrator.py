"""
Run orchestration for the forward, optimize and pod-build subcommands.

Each runner writes its artifacts under ``<output dir>/<subcommand>/`` and
returns an evidence dict that is also saved as ``summary.json``.
"""

from __future__ import annotations

import logging
import os
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional

from src.control.control_vector import BoxBounds, ControlVector, project_box
from src.control.shapes import ControlShapes
from src.fem.fields import FEField
from src.optimization.models import FullOrderModel, ModelInterface
from src.optimization.projected_gradient import OptimizationResult, projected_gradient
from src.pipeline.run_config import RunConfig
from src.pipeline.targets import TargetBundle, initial_state, synthesize_targets
from src.reduction.deim import DEIMData, build_deim, nonlinearity_snapshots
from src.reduction.pod import PODBasis, SnapshotSet, build_common_space, compute_basis
from src.reduction.rom import ReducedOrderModel, build_rom
from src.reporting import tables
from src.reporting.vtk import write_vtk
from src.solvers.state_solver import solve_trajectory
from src.solvers.tracking import TrackingFunctional, trajectory_error
from src.utils.errors import ConfigError, DEIMError, PODError
from src.utils.helpers import ensure_dir, save_json, stopwatch

logger = logging.getLogger(__name__)

MODEL_KINDS = ("fom", "rom", "rom-deim")


@dataclass
class Problem:
    """Everything the optimal control problem needs besides the model choice."""
    cfg: RunConfig
    shapes: ControlShapes
    bounds: BoxBounds
    targets: TargetBundle
    tracking: TrackingFunctional

    @property
    def params(self):
        return self.cfg.model

    def initial_control(self) -> ControlVector:
        u = ControlVector.constant(self.cfg.control.initial_value, self.shapes.m,
                                   self.params.n_steps)
        return project_box(u, self.bounds)

    def full_order_model(self, adapt: Optional[bool] = None) -> FullOrderModel:
        return FullOrderModel(
            self.targets.phi0, self.shapes, self.params, self.cfg.cost, self.tracking,
            self.cfg.mesh.adapt if adapt is None else adapt, self.cfg.mesh,
            self.cfg.output.cfl_policy,
        )


def build_problem(cfg: RunConfig, targets: Optional[TargetBundle] = None) -> Problem:
    shapes = ControlShapes(cfg.control.shapes)
    targets = targets or synthesize_targets(cfg, shapes)
    tracking = TrackingFunctional(targets.desired.phi, targets.terminal,
                                  cfg.cost.beta1, cfg.cost.beta2, cfg.model.dt)
    return Problem(cfg, shapes, cfg.control.bounds(), targets, tracking)


@dataclass
class ReducedSetup:
    basis: PODBasis
    deim: Optional[DEIMData]
    offline: Dict[str, float] = field(default_factory=dict)


def collect_snapshots(problem: Problem) -> SnapshotSet:
    """Desired trajectory, optionally extended by the state trajectory at the initial control."""
    dt = problem.params.dt
    snaps = SnapshotSet.from_trajectory(problem.targets.desired.phi, dt, "desired")
    if problem.cfg.pod.snapshot_source == "desired+state":
        traj = problem.full_order_model().solve(problem.initial_control())
        snaps = snaps.extended(SnapshotSet.from_trajectory(traj.phi, dt, "state"))
    return snaps


def build_reduced_basis(problem: Problem, with_deim: bool = True) -> ReducedSetup:
    """Offline phase: common space, POD basis and DEIM data, each timed."""
    pod = problem.cfg.pod
    offline: Dict[str, float] = {}
    with stopwatch(offline, "snapshot_collection"):
        snaps = collect_snapshots(problem)
    with stopwatch(offline, "snapshot_interpolation"):
        _, fields = build_common_space(snaps)
    with stopwatch(offline, "pod_basis"):
        basis = compute_basis(fields, snaps.weights, pod.ell, pod.rank_tol)
    deim = None
    if with_deim:
        with stopwatch(offline, "deim"):
            deim = build_deim(nonlinearity_snapshots(fields), pod.deim_size)
    return ReducedSetup(basis, deim, offline)


def load_reduced_setup(problem: Problem, directory: str,
                       with_deim: bool = True) -> ReducedSetup:
    """Offline data written by pod-build, checked against this problem.

    The reference mesh must refine every mesh of the initial state, the desired
    trajectory and the terminal target. A saved basis of higher rank than
    ``pod.ell`` is truncated; a lower rank is used as is with a warning. DEIM
    data is truncated the same way since greedy indices are nested.
    """
    if not os.path.isdir(directory):
        raise ConfigError(f"basis directory not found: {directory}")
    pod = problem.cfg.pod
    offline: Dict[str, float] = {}
    with stopwatch(offline, "load_basis"):
        basis = tables.read_basis(directory)
        deim = tables.read_deim(directory) if with_deim else None

    t = problem.targets
    meshes = {f.mesh for f in t.desired.phi} | {t.phi0.mesh, t.terminal.mesh}
    uncovered = [m for m in meshes if not basis.mesh.refines(m)]
    if uncovered:
        raise PODError(f"{directory}: reference mesh ({basis.mesh.num_vertices} vertices) "
                       f"does not refine {len(uncovered)} of the problem's meshes")
    if pod.ell < basis.ell:
        basis = basis.truncated(pod.ell)
    elif pod.ell > basis.ell:
        logger.warning(f"{directory}: saved basis has {basis.ell} modes, pod.ell={pod.ell}")

    if deim is not None:
        if deim.basis.shape[0] != basis.mesh.num_vertices:
            raise DEIMError(f"{directory}: DEIM basis has {deim.basis.shape[0]} rows, "
                            f"reference mesh {basis.mesh.num_vertices} vertices")
        if pod.deim_size < deim.ell:
            deim = deim.truncated(pod.deim_size)
        elif pod.deim_size > deim.ell:
            logger.warning(f"{directory}: saved DEIM data has {deim.ell} points, "
                           f"ell_d={pod.deim_size}")
    logger.info(f"loaded basis from {directory}: ell={basis.ell}, "
                f"reference mesh {basis.mesh.num_vertices} vertices")
    return ReducedSetup(basis, deim, offline)


def reduced_model(problem: Problem, setup: ReducedSetup, use_deim: bool) -> ReducedOrderModel:
    t = problem.targets
    ops = build_rom(setup.basis, setup.deim if use_deim else None, problem.shapes,
                    problem.params, t.phi0, t.desired.phi, t.terminal)
    return ReducedOrderModel(ops, problem.cfg.cost)


def make_model(problem: Problem, kind: str, setup: Optional[ReducedSetup] = None,
               basis_dir: Optional[str] = None) -> ModelInterface:
    if kind not in MODEL_KINDS:
        raise ValueError(f"model must be one of {MODEL_KINDS}, got {kind!r}")
    if kind == "fom":
        return problem.full_order_model()
    use_deim = kind == "rom-deim"
    if setup is None:
        setup = (load_reduced_setup(problem, basis_dir, use_deim) if basis_dir
                 else build_reduced_basis(problem, with_deim=use_deim))
    return reduced_model(problem, setup, use_deim)


def _write_checkpoints(series: Dict[str, List[FEField]], stride: int, directory: str,
                       prefix: str = "phi") -> int:
    """One VTK file per stride-th step (and the last) holding every series at that step."""
    if stride <= 0:
        return 0
    written = 0
    n = len(next(iter(series.values())))
    for k in range(n):
        if k % stride == 0 or k == n - 1:
            fields = {name: values[k] for name, values in series.items()}
            write_vtk(os.path.join(directory, f"{prefix}_{k:04d}.vtk"),
                      fields[next(iter(fields))].mesh, fields)
            written += 1
    return written


def run_forward(cfg: RunConfig) -> Dict[str, Any]:
    """Forward solve at the configured control; mass/energy log and VTK checkpoints."""
    out_dir = os.path.join(cfg.output.directory, "forward")
    ensure_dir(out_dir)
    shapes = ControlShapes(cfg.control.shapes)
    phi0 = initial_state(cfg)
    n = cfg.model.n_steps
    if cfg.control.control_file:
        u = tables.read_control_csv(cfg.control.control_file)
    else:
        u = ControlVector.constant(cfg.control.initial_value, shapes.m, n)

    seconds: Dict[str, float] = {}
    with stopwatch(seconds, "forward"):
        traj = solve_trajectory(phi0, u, shapes, cfg.model, cfg.mesh.adapt, cfg.mesh,
                                cfg.output.cfl_policy)

    tables.write_mass_energy_csv(cfg.model.times, traj.mass, traj.energy,
                                 os.path.join(out_dir, "mass_energy.csv"))
    tables.write_control_csv(u, cfg.model.dt, os.path.join(out_dir, "control.csv"))
    tables.write_field_csv(traj.final, os.path.join(out_dir, "phi_final.csv"))
    n_vtk = _write_checkpoints({"phi": traj.phi, "mu": traj.mu}, cfg.output.vtk_stride,
                               os.path.join(out_dir, "vtk"))
    evidence = {
        "command": "forward",
        "config": cfg.to_dict(),
        "steps": traj.n_steps,
        "mass_drift": traj.mass_drift(),
        "energy_initial": float(traj.energy[0]),
        "energy_final": float(traj.energy[-1]),
        "meshes": len(set(traj.mesh_ids)),
        "remesh_steps": traj.remesh_steps,
        "vtk_files": n_vtk,
        "seconds": seconds["forward"],
    }
    save_json(evidence, os.path.join(out_dir, "summary.json"))
    return evidence


def full_order_cost(problem: Problem, u: ControlVector) -> float:
    return problem.full_order_model().evaluate_cost(u).total


def run_optimize(cfg: RunConfig, kind: str = "fom",
                 problem: Optional[Problem] = None) -> Dict[str, Any]:
    """Projected-gradient optimization with the chosen model; ROM runs are re-evaluated at full order."""
    out_dir = os.path.join(cfg.output.directory, f"optimize_{kind}")
    ensure_dir(out_dir)
    problem = problem or build_problem(cfg)
    basis_dir = cfg.pod.basis_dir if kind != "fom" else None
    model = make_model(problem, kind, basis_dir=basis_dir)

    seconds: Dict[str, float] = {}
    with stopwatch(seconds, "optimization"):
        result: OptimizationResult = projected_gradient(problem.initial_control(), model,
                                                        problem.bounds, cfg.optimizer)

    tables.write_history_csv(result.history, os.path.join(out_dir, "history.csv"))
    tables.write_cost_breakdown_csv(result.history, os.path.join(out_dir, "cost_breakdown.csv"))
    tables.write_control_csv(result.control, cfg.model.dt, os.path.join(out_dir, "control.csv"))

    fom = problem.full_order_model()
    fom_traj = fom.solve(result.control)
    fom_cost = fom.evaluate_cost(result.control)
    adjoint = fom.adjoint(result.control)
    _write_checkpoints({"phi": fom_traj.phi, "mu": fom_traj.mu, "p": adjoint.p, "q": adjoint.q},
                       cfg.output.vtk_stride, os.path.join(out_dir, "vtk"))

    evidence: Dict[str, Any] = {
        "command": "optimize",
        "model": kind,
        "config": cfg.to_dict(),
        "flag": result.flag,
        "iterations": len(result.history) - 1,
        "initial_cost": result.history[0].cost,
        "final_cost": result.final_cost,
        "full_order_cost": fom_cost.total,
        "full_order_breakdown": {"tracking": fom_cost.tracking, "terminal": fom_cost.terminal,
                                 "control": fom_cost.control},
        "seconds": seconds["optimization"],
    }
    if kind != "fom":
        lifted = model.lifted(result.control)
        evidence["rom_vs_fom_error"] = trajectory_error(lifted, fom_traj.phi, cfg.model.dt)
        evidence["ell"] = model.ops.ell
        evidence["basis_source"] = basis_dir or "built"
        _write_checkpoints({"phi_rom": lifted}, cfg.output.vtk_stride,
                           os.path.join(out_dir, "vtk_rom"), prefix="phi_rom")
    save_json(evidence, os.path.join(out_dir, "summary.json"))
    logger.info(f"optimize[{kind}]: {result.flag} after {evidence['iterations']} iterations, "
                f"J={result.final_cost:.4e}, full-order J={fom_cost.total:.4e}")
    return evidence


def run_pod_build(cfg: RunConfig, problem: Optional[Problem] = None) -> Dict[str, Any]:
    """Offline phase only: persist the reference mesh, POD modes and DEIM data."""
    out_dir = os.path.join(cfg.output.directory, "pod")
    problem = problem or build_problem(cfg)
    setup = build_reduced_basis(problem, with_deim=True)
    paths = tables.write_basis(setup.basis, out_dir)
    paths.update(tables.write_deim(setup.deim, out_dir))
    write_vtk(os.path.join(out_dir, "reference_mesh.vtk"), setup.basis.mesh,
              {f"mode_{i + 1}": setup.basis.mode(i) for i in range(min(setup.basis.ell, 5))})
    tables.write_key_value_csv(setup.offline, os.path.join(out_dir, "offline_costs.csv"))
    evidence = {
        "command": "pod-build",
        "config": cfg.to_dict(),
        "ell": setup.basis.ell,
        "ell_d": setup.deim.ell,
        "reference_vertices": setup.basis.mesh.num_vertices,
        "eigenvalues_head": [float(x) for x in setup.basis.eigenvalues[:setup.basis.ell]],
        "tail_sum": setup.basis.tail_sum,
        "deim_condition": setup.deim.condition,
        "offline_seconds": setup.offline,
        "artifacts": paths,
    }
    save_json(evidence, os.path.join(out_dir, "summary.json"))
    return evidence
