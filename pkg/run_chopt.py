#!/usr/bin/env python3
"""
chopt - Optimal Control of Convective Cahn-Hilliard Flows

Projected-gradient optimization of a transport velocity that steers a
phase field towards a desired trajectory, on adapted finite element meshes
or on POD / POD-DEIM reduced models built from their snapshots.

Usage:
    python run_chopt.py forward
    python run_chopt.py optimize --model fom
    python run_chopt.py optimize --model rom-deim --config run.json
    python run_chopt.py pod-build
    python run_chopt.py benchmark
    python run_chopt.py check
"""

import argparse
import logging
import sys
import traceback
from dataclasses import replace
from pathlib import Path

from dotenv import load_dotenv

PROJECT_ROOT = Path(__file__).parent
load_dotenv(PROJECT_ROOT / ".env")
sys.path.insert(0, str(PROJECT_ROOT))

from config.settings import LOG_LEVEL
from src.optimization.projected_gradient import CONVERGED, MAX_ITERATIONS
from src.pipeline.benchmark import run_benchmark
from src.pipeline.checks import run_checks
from src.pipeline.orchestrator import MODEL_KINDS, run_forward, run_optimize, run_pod_build
from src.pipeline.run_config import config_summary, load_config, save_config
from src.utils.errors import ConfigError, LineSearchError, MeshError, SolverError

EXIT_OK = 0
EXIT_OTHER = 1
EXIT_CONFIG = 2
EXIT_SOLVER = 3
EXIT_LINE_SEARCH = 4
EXIT_NOT_CONVERGED = 5
EXIT_CHECK_FAILED = 6


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="chopt",
        description="Optimal control of convective Cahn-Hilliard flows with POD/DEIM",
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog="""
Examples:
    python run_chopt.py forward                       # Forward solve at the initial control
    python run_chopt.py optimize --model fom          # Full-order optimization
    python run_chopt.py optimize --model rom-deim     # POD-DEIM optimization
    python run_chopt.py optimize --model rom --basis-dir outputs/pod
    python run_chopt.py benchmark --uniform-level 6   # Timing table

Environment (.env):
    CHOPT_THREADS     - Threads for element assembly (default 1)
    CHOPT_LOG_LEVEL   - Logging level (default INFO)
    CHOPT_OUTPUT_DIR  - Default output directory (default outputs)
        """
    )
    parser.add_argument("--config", type=str, default=None,
                        help="JSON run configuration (default: built-in defaults)")
    parser.add_argument("--output", type=str, default=None,
                        help="Output directory (overrides the configuration)")
    sub = parser.add_subparsers(dest="command", required=True)

    sub.add_parser("forward", help="Forward solve, mass/energy log and VTK checkpoints")
    opt = sub.add_parser("optimize", help="Projected-gradient optimization")
    opt.add_argument("--model", choices=MODEL_KINDS, default="fom",
                     help="Model driving the optimizer (default: fom)")
    opt.add_argument("--basis-dir", type=str, default=None,
                     help="Reuse the POD/DEIM data written by pod-build instead of rebuilding it")
    sub.add_parser("pod-build", help="Snapshots, POD basis and DEIM data only")
    bench = sub.add_parser("benchmark", help="Timings of FE, adaptive FE, POD and POD-DEIM")
    bench.add_argument("--uniform-level", type=int, default=None,
                       help="Mesh level of the uniform FE variant")
    bench.add_argument("--ells", type=int, nargs="+", default=None,
                       help="POD ranks of the rank sweep (default: ell and 2*ell)")
    check = sub.add_parser("check", help="Run the invariant suite at small scale")
    check.add_argument("--only", nargs="*", default=None,
                       help="Run only checks whose name contains one of these words")
    check.add_argument("--seed", type=int, default=0)
    return parser


def _print_banner(title: str, rows) -> None:
    print("\n" + "=" * 60)
    print(f"  {title}")
    print("=" * 60)
    for label, value in rows:
        print(f"  {label + ':':<17}{value}")
    print("=" * 60)


def _run_check(args) -> int:
    _print_banner("CHOPT INVARIANT CHECKS", [("Seed", args.seed)])
    results = run_checks(args.seed, args.only)
    for r in results:
        print(f"  {r.line()}")
    failed = [r for r in results if not r.passed]
    print("-" * 60)
    print(f"  {len(results) - len(failed)}/{len(results)} checks passed")
    return EXIT_CHECK_FAILED if failed else EXIT_OK


def _run(args) -> int:
    cfg = load_config(args.config)
    if args.output:
        cfg = cfg.with_overrides(output=replace(cfg.output, directory=args.output))
    if getattr(args, "basis_dir", None):
        cfg = cfg.with_overrides(pod=replace(cfg.pod, basis_dir=args.basis_dir))

    title = f"CHOPT {args.command.upper()}"
    if args.command == "optimize":
        title += f" [{args.model}]"
    _print_banner(title, config_summary(cfg) + [("Output", cfg.output.directory)])
    save_config(cfg, str(Path(cfg.output.directory) / f"{args.command}_config.json"))

    if args.command == "forward":
        print("\n[1/2] Solving the state equation...")
        evidence = run_forward(cfg)
        print(f"[2/2] Artifacts written to {cfg.output.directory}/forward")
        print(f"\n  Steps:        {evidence['steps']}")
        print(f"  Mass drift:   {evidence['mass_drift']:.3e}")
        print(f"  Energy:       {evidence['energy_initial']:.6e} -> {evidence['energy_final']:.6e}")
        print(f"  Meshes used:  {evidence['meshes']}")
        return EXIT_OK

    if args.command == "optimize":
        print(f"\n[1/2] Optimizing with the {args.model} model...")
        evidence = run_optimize(cfg, args.model)
        print(f"[2/2] Artifacts written to {cfg.output.directory}/optimize_{args.model}")
        print(f"\n  Flag:             {evidence['flag']}")
        print(f"  Iterations:       {evidence['iterations']}")
        print(f"  Cost:             {evidence['initial_cost']:.6e} -> {evidence['final_cost']:.6e}")
        print(f"  Full-order cost:  {evidence['full_order_cost']:.6e}")
        if "rom_vs_fom_error" in evidence:
            print(f"  ROM vs FOM error: {evidence['rom_vs_fom_error']:.3e}")
        if evidence["flag"] == MAX_ITERATIONS:
            print("\n[WARN] k_max reached before the stopping rule was met")
            return EXIT_NOT_CONVERGED
        if evidence["flag"] != CONVERGED:
            print("\n[ERROR] Armijo line search failed; the last iterate was saved")
            return EXIT_LINE_SEARCH
        return EXIT_OK

    if args.command == "pod-build":
        print("\n[1/2] Collecting snapshots and building the basis...")
        evidence = run_pod_build(cfg)
        print(f"[2/2] Artifacts written to {cfg.output.directory}/pod")
        print(f"\n  ell / ell_d:       {evidence['ell']} / {evidence['ell_d']}")
        print(f"  Reference mesh:    {evidence['reference_vertices']} vertices")
        print(f"  Eigenvalue tail:   {evidence['tail_sum']:.3e}")
        return EXIT_OK

    if args.command == "benchmark":
        print("\n[1/2] Running the benchmark variants...")
        evidence = run_benchmark(cfg, args.uniform_level, args.ells)
        print(f"[2/2] Artifacts written to {cfg.output.directory}/benchmark")
        for variant, phases in evidence["timings"].items():
            print(f"  {variant:<12} optimization {phases['optimization']:.3f}s, "
                  f"state solve {phases['per_state_solve']:.4f}s")
        print(f"  Offline adaptive/uniform: {evidence['offline_ratio_adaptive_vs_uniform']:.2f}")
        for row in evidence["rank_sweep"]:
            print(f"  ell={row['ell_used']:<4} ROM error {row['rom_error']:.3e}, "
                  f"optimization {row['optimization_seconds']:.3f}s")
        if not evidence["timings_consistent"]:
            print("\n[WARN] a per-solve time exceeds its optimization total")
        return EXIT_OK

    raise ValueError(f"unknown command {args.command}")


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=getattr(logging, LOG_LEVEL.upper(), logging.INFO),
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )
    try:
        if args.command == "check":
            return _run_check(args)
        code = _run(args)
        if code == EXIT_OK:
            print("\n[OK] Done\n")
        return code
    except KeyboardInterrupt:
        print("\n\n[WARN] Run interrupted by user")
        return EXIT_OK
    except ConfigError as e:
        print(f"\n[ERROR] Invalid configuration: {e}")
        return EXIT_CONFIG
    except (SolverError, MeshError) as e:
        print(f"\n[ERROR] Solver failure: {e}")
        return EXIT_SOLVER
    except LineSearchError as e:
        print(f"\n[ERROR] Line search failure: {e}")
        return EXIT_LINE_SEARCH
    except Exception as e:
        print(f"\n[ERROR] Run failed: {e}")
        traceback.print_exc()
        return EXIT_OTHER


if __name__ == "__main__":
    sys.exit(main())
