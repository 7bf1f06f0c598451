"""
Benchmark harness: optimization and per-solve timings for uniform FE, adaptive
FE, POD and POD-DEIM, plus offline costs, ROM errors and DEIM online scaling.

Extra comparisons:
- offline cost of snapshots computed on adaptive meshes vs one uniform mesh
- POD rank sweep: ROM-DEIM error and online time for several ell
"""

from __future__ import annotations

import logging
import os
from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional, Sequence

import numpy as np

from src.fem.fields import FEField
from src.mesh.adaptive_mesh import refine_coarsen
from src.mesh.transfer import prolongate
from src.optimization.models import ModelInterface
from src.optimization.projected_gradient import OptimizationResult, projected_gradient
from src.pipeline.orchestrator import (
    Problem,
    ReducedSetup,
    build_problem,
    build_reduced_basis,
    collect_snapshots,
    reduced_model,
)
from src.pipeline.run_config import RunConfig
from src.reduction.deim import DEIMNonlinearity, build_deim, deim_apply, nonlinearity_snapshots
from src.reduction.pod import build_common_space, compute_basis
from src.reporting import tables
from src.solvers.tracking import trajectory_error
from src.utils.helpers import ensure_dir, median_time, save_json, stopwatch

logger = logging.getLogger(__name__)


@dataclass
class TimingReport:
    """Seconds per phase (rows) and variant (columns), plus offline costs per discretization."""
    phases: Dict[str, Dict[str, float]] = field(default_factory=dict)
    offline: Dict[str, Dict[str, float]] = field(default_factory=dict)

    def record(self, variant: str, phase: str, seconds: float) -> None:
        if seconds < 0.0:
            raise ValueError(f"negative timing for {variant}/{phase}")
        self.phases.setdefault(variant, {})[phase] = float(seconds)

    def consistent(self) -> bool:
        """Per-solve times never exceed the whole optimization of the same variant."""
        for rows in self.phases.values():
            total = rows.get("optimization")
            if total is None:
                continue
            if any(rows.get(p, 0.0) > total for p in ("per_state_solve", "per_adjoint_solve")):
                return False
        return True


def _time_variant(report: TimingReport, name: str, model: ModelInterface, problem: Problem,
                  repeats: int) -> OptimizationResult:
    u0 = problem.initial_control()
    seconds: Dict[str, float] = {}
    with stopwatch(seconds, "optimization"):
        result = projected_gradient(u0, model, problem.bounds, problem.cfg.optimizer)
    report.record(name, "optimization", seconds["optimization"])

    u = result.control

    def state():
        model.clear_cache()
        model.evaluate_cost(u)

    def adjoint():
        model.evaluate_gradient(u)

    report.record(name, "per_state_solve", median_time(state, repeats))
    model.evaluate_cost(u)
    report.record(name, "per_adjoint_solve", median_time(adjoint, repeats))
    return result


def deim_scaling(setup: ReducedSetup, problem: Problem, repeats: int) -> Dict[str, float]:
    """deim_apply wall time on the reference space and on a 4x finer copy of it."""
    basis = setup.basis
    fine_mesh = refine_coarsen(basis.mesh, np.ones(basis.mesh.num_triangles), 0.999, 0.0,
                               None, 64)
    coarse_fields = [prolongate(f, basis.mesh) for f in problem.targets.desired.phi]
    fine_fields = [prolongate(f, fine_mesh) for f in coarse_fields]
    ell_d = setup.deim.ell
    out = {"coarse_vertices": float(basis.mesh.num_vertices),
           "fine_vertices": float(fine_mesh.num_vertices)}
    rng = np.random.default_rng(problem.cfg.output.seed)
    for label, fields, modes in (
        ("coarse", coarse_fields, basis.modes),
        ("fine", fine_fields, np.column_stack([prolongate(basis.mode(i), fine_mesh).coeffs
                                               for i in range(basis.ell)])),
    ):
        deim = build_deim(nonlinearity_snapshots(fields), ell_d)
        nonlinear = DEIMNonlinearity(deim.projector(modes), modes[deim.indices, :])
        a = rng.standard_normal(basis.ell)

        def run():
            for _ in range(200):
                deim_apply(a, nonlinear)

        out[f"{label}_seconds"] = median_time(run, repeats) / 200.0
    out["ratio"] = out["fine_seconds"] / max(out["coarse_seconds"], 1e-300)
    return out


def offline_costs(setup: ReducedSetup, snapshot_seconds: float) -> Dict[str, float]:
    """Snapshot generation plus the timed offline phases of setup."""
    costs = {"snapshots": snapshot_seconds}
    costs.update(setup.offline)
    costs["total"] = float(sum(costs.values()))
    costs["reference_vertices"] = float(setup.basis.mesh.num_vertices)
    return costs


def rank_sweep(problem: Problem, ells: Sequence[int], reference: List[FEField],
               repeats: int) -> List[Dict[str, float]]:
    """POD-DEIM optimization for each rank in ells, all from one snapshot set.

    ``reference`` is the full-order trajectory the lifted ROM states are compared
    with. Ranks above the number of snapshots or the numerical rank are clipped;
    ``ell_used`` records what was actually used.
    """
    pod = problem.cfg.pod
    snaps = collect_snapshots(problem)
    _, fields = build_common_space(snaps)
    full = compute_basis(fields, snaps.weights, min(max(ells), len(fields)), pod.rank_tol)
    nonlinear = nonlinearity_snapshots(fields)
    fom = problem.full_order_model()

    rows = []
    for ell in ells:
        basis = full.truncated(min(ell, full.ell))
        deim = build_deim(nonlinear, basis.ell if pod.ell_d is None else pod.ell_d)
        model = reduced_model(problem, ReducedSetup(basis, deim), use_deim=True)
        report = TimingReport()
        result = _time_variant(report, "pod_deim", model, problem, repeats)
        timings = report.phases["pod_deim"]
        rows.append({
            "ell": int(ell),
            "ell_used": basis.ell,
            "ell_d": deim.ell,
            "eigenvalue_tail": basis.tail_sum,
            "optimization_seconds": timings["optimization"],
            "per_state_solve": timings["per_state_solve"],
            "per_adjoint_solve": timings["per_adjoint_solve"],
            "rom_error": trajectory_error(model.lifted(result.control), reference,
                                          problem.params.dt),
            "full_order_cost": fom.evaluate_cost(result.control).total,
        })
        logger.info(f"rank sweep ell={basis.ell}: error {rows[-1]['rom_error']:.3e}, "
                    f"optimization {timings['optimization']:.3f}s")
    return rows


def default_ranks(ell: int) -> List[int]:
    return sorted({max(1, ell // 2), max(1, ell)})


def run_benchmark(cfg: RunConfig, uniform_level: Optional[int] = None,
                  ells: Optional[Sequence[int]] = None) -> Dict[str, object]:
    out_dir = os.path.join(cfg.output.directory, "benchmark")
    ensure_dir(out_dir)
    repeats = cfg.output.timing_repeats
    report = TimingReport()
    ells = list(ells) if ells else default_ranks(cfg.pod.ell)
    if any(e < 1 for e in ells):
        raise ValueError(f"POD ranks must be >= 1, got {ells}")

    level = uniform_level or min(cfg.mesh.max_level, cfg.mesh.root_level + 1)
    uniform_cfg = replace(cfg, mesh=replace(cfg.mesh, adapt=False, root_level=level,
                                            max_level=max(level, cfg.mesh.max_level)))
    snapshot_seconds: Dict[str, float] = {}
    print(f"  [uniform FE] level {level}")
    with stopwatch(snapshot_seconds, "uniform"):
        uniform = build_problem(uniform_cfg)
    uniform_result = _time_variant(report, "uniform_fe", uniform.full_order_model(), uniform,
                                   repeats)

    adaptive_cfg = replace(cfg, mesh=replace(cfg.mesh, adapt=True))
    print("  [adaptive FE]")
    with stopwatch(snapshot_seconds, "adaptive"):
        adaptive = build_problem(adaptive_cfg)
    fom_result = _time_variant(report, "adaptive_fe", adaptive.full_order_model(), adaptive,
                               repeats)

    print("  [offline] snapshots, POD basis, DEIM")
    setup = build_reduced_basis(adaptive, with_deim=True)
    report.offline["adaptive"] = offline_costs(setup, snapshot_seconds["adaptive"])
    report.offline["uniform"] = offline_costs(build_reduced_basis(uniform, with_deim=True),
                                              snapshot_seconds["uniform"])

    fom = adaptive.full_order_model()
    fom_opt = fom.solve(fom_result.control).phi
    errors: Dict[str, float] = {}
    rom_costs: Dict[str, float] = {}
    for name, use_deim in (("pod", False), ("pod_deim", True)):
        print(f"  [{name}]")
        model = reduced_model(adaptive, setup, use_deim)
        result = _time_variant(report, name, model, adaptive, repeats)
        errors[name] = trajectory_error(model.lifted(result.control), fom_opt, cfg.model.dt)
        rom_costs[name] = fom.evaluate_cost(result.control).total

    print(f"  [rank sweep] ell in {ells}")
    sweep = rank_sweep(adaptive, ells, fom_opt, repeats)

    scaling = deim_scaling(setup, adaptive, repeats)
    tables.write_timing_csv(report.phases, os.path.join(out_dir, "timing.csv"))
    tables.write_offline_csv(report.offline, os.path.join(out_dir, "offline_costs.csv"))
    tables.write_rank_sweep_csv(sweep, os.path.join(out_dir, "rank_sweep.csv"))

    per_state = {k: v["per_state_solve"] for k, v in report.phases.items()}
    totals = {k: v["total"] for k, v in report.offline.items()}
    evidence = {
        "command": "benchmark",
        "config": cfg.to_dict(),
        "timings": report.phases,
        "offline_seconds": report.offline,
        "offline_ratio_adaptive_vs_uniform": totals["adaptive"] / max(totals["uniform"], 1e-300),
        "timings_consistent": report.consistent(),
        "uniform_fe_final_cost": uniform_result.final_cost,
        "adaptive_fe_final_cost": fom_result.final_cost,
        "rom_full_order_cost": rom_costs,
        "rom_relative_error": errors,
        "rank_sweep": sweep,
        "speedup_state_pod_vs_fe": per_state["adaptive_fe"] / max(per_state["pod"], 1e-300),
        "speedup_state_deim_vs_fe": per_state["adaptive_fe"] / max(per_state["pod_deim"], 1e-300),
        "speedup_state_deim_vs_pod": per_state["pod"] / max(per_state["pod_deim"], 1e-300),
        "deim_scaling": scaling,
    }
    save_json(evidence, os.path.join(out_dir, "summary.json"))
    return evidence
