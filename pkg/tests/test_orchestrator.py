import json
import os
from dataclasses import replace
from pathlib import Path

import numpy as np
import pandas as pd
import pytest

import run_chopt
from config.settings import DT
from src.fem.fields import FEField
from src.mesh.adaptive_mesh import initial_mesh
from src.optimization.projected_gradient import CONVERGED, LINE_SEARCH_FAILED, MAX_ITERATIONS
from src.pipeline.benchmark import TimingReport, run_benchmark
from src.pipeline.checks import run_checks
from src.pipeline.orchestrator import (
    build_problem,
    collect_snapshots,
    load_reduced_setup,
    make_model,
    run_forward,
    run_optimize,
    run_pod_build,
)
from src.pipeline.run_config import RunConfig, save_config
from src.reduction.deim import build_deim
from src.reduction.pod import compute_basis
from src.reporting import tables
from src.reporting.vtk import read_vtk
from src.utils.errors import ConfigError, PODError

FLAGS = (CONVERGED, MAX_ITERATIONS, LINE_SEARCH_FAILED)


def tiny_config(directory: str) -> RunConfig:
    return RunConfig.from_dict({
        "model": {"T": 5 * DT},
        "mesh": {"root_level": 3, "max_level": 5, "cadence": 2, "h_min_guard": None,
                 "initial_passes": 1},
        "pod": {"ell": 4},
        "optimizer": {"k_max": 2},
        "output": {"directory": directory, "vtk_stride": 2, "timing_repeats": 1},
    })


@pytest.fixture(scope="module")
def cfg(tmp_path_factory):
    return tiny_config(str(tmp_path_factory.mktemp("runs")))


@pytest.fixture(scope="module")
def problem(cfg):
    return build_problem(cfg)


def test_run_forward_writes_log_and_checkpoints(cfg):
    evidence = run_forward(cfg)
    out = os.path.join(cfg.output.directory, "forward")
    log = pd.read_csv(os.path.join(out, "mass_energy.csv"))
    assert len(log) == cfg.model.n_steps + 1
    assert evidence["steps"] == 5
    # levels 0, 2, 4 and the final one
    assert evidence["vtk_files"] == 4
    assert sorted(os.listdir(os.path.join(out, "vtk")))[0] == "phi_0000.vtk"
    first = read_vtk(os.path.join(out, "vtk", "phi_0000.vtk"))
    assert set(first.point_data) == {"phi", "mu"}
    final = pd.read_csv(os.path.join(out, "phi_final.csv"))
    assert list(final.columns) == ["vertex", "x", "y", "value"]
    with open(os.path.join(out, "summary.json"), encoding="utf-8") as fh:
        assert json.load(fh)["command"] == "forward"


def test_problem_targets_are_consistent(problem, cfg):
    assert len(problem.targets.desired.phi) == cfg.model.n_steps + 1
    assert problem.bounds.contains(problem.initial_control())
    assert len(collect_snapshots(problem)) == cfg.model.n_steps + 1
    with pytest.raises(ValueError):
        make_model(problem, "pod")


def test_run_optimize_full_order(cfg, problem):
    evidence = run_optimize(cfg, "fom", problem)
    out = os.path.join(cfg.output.directory, "optimize_fom")
    history = pd.read_csv(os.path.join(out, "history.csv"))
    assert list(history.columns) == ["k", "J", "gradnorm", "s_k"]
    assert np.all(np.diff(history["J"]) <= 1e-12 * history["J"].iloc[0])
    assert evidence["flag"] in FLAGS
    assert evidence["final_cost"] <= evidence["initial_cost"]
    np.testing.assert_allclose(evidence["full_order_cost"], evidence["final_cost"], rtol=1e-12)
    u = tables.read_control_csv(os.path.join(out, "control.csv"))
    assert problem.bounds.contains(u)
    assert u.n_steps == cfg.model.n_steps
    last = sorted(os.listdir(os.path.join(out, "vtk")))[-1]
    assert set(read_vtk(os.path.join(out, "vtk", last)).point_data) == {"phi", "mu", "p", "q"}


def test_full_order_history_is_deterministic(cfg, problem, tmp_path):
    run_optimize(cfg, "fom", problem)
    first = Path(cfg.output.directory, "optimize_fom", "history.csv").read_text()
    other = cfg.with_overrides(output=tiny_config(str(tmp_path)).output)
    run_optimize(other, "fom", build_problem(other))
    second = (tmp_path / "optimize_fom" / "history.csv").read_text()
    assert first == second


@pytest.mark.parametrize("kind", ["rom", "rom-deim"])
def test_run_optimize_reduced(cfg, problem, kind):
    evidence = run_optimize(cfg, kind, problem)
    assert evidence["flag"] in FLAGS
    assert 1 <= evidence["ell"] <= 4
    assert np.isfinite(evidence["rom_vs_fom_error"])
    assert os.path.isdir(os.path.join(cfg.output.directory, f"optimize_{kind}", "vtk_rom"))


def test_run_pod_build(cfg, problem):
    evidence = run_pod_build(cfg, problem)
    out = os.path.join(cfg.output.directory, "pod")
    basis = tables.read_basis(out)
    deim = tables.read_deim(out)
    assert basis.ell == evidence["ell"]
    assert deim.ell == evidence["ell_d"]
    assert all(basis.mesh.refines(f.mesh) for f in problem.targets.desired.phi)
    assert set(evidence["offline_seconds"]) == {"snapshot_collection", "snapshot_interpolation",
                                                "pod_basis", "deim"}


@pytest.mark.parametrize("kind", ["rom", "rom-deim"])
def test_optimize_from_saved_basis_matches_in_run_basis(cfg, problem, tmp_path, kind):
    built = run_optimize(cfg, kind, problem)
    saved = cfg.with_overrides(output=replace(cfg.output, directory=str(tmp_path)))
    run_pod_build(saved, problem)
    loaded_cfg = saved.with_overrides(pod=replace(saved.pod, basis_dir=str(tmp_path / "pod")))
    loaded = run_optimize(loaded_cfg, kind, problem)
    assert loaded["basis_source"] == str(tmp_path / "pod")
    assert built["basis_source"] == "built"
    assert loaded["ell"] == built["ell"]
    assert loaded["flag"] == built["flag"]
    np.testing.assert_allclose(loaded["final_cost"], built["final_cost"], rtol=1e-10)


def test_saved_basis_is_truncated_to_the_configured_rank(cfg, problem, tmp_path):
    run_pod_build(cfg.with_overrides(output=replace(cfg.output, directory=str(tmp_path))),
                  problem)
    small = build_problem(cfg.with_overrides(pod=replace(cfg.pod, ell=2, ell_d=1)),
                          problem.targets)
    setup = load_reduced_setup(small, str(tmp_path / "pod"))
    assert setup.basis.ell == 2
    assert setup.deim.ell == 1
    assert "load_basis" in setup.offline


def test_saved_basis_on_a_coarser_mesh_is_rejected(problem, tmp_path, rng):
    coarse = initial_mesh(1)
    fields = [FEField(rng.standard_normal(coarse.num_vertices), coarse) for _ in range(3)]
    tables.write_basis(compute_basis(fields, np.full(3, 1.0 / 3.0), 2), str(tmp_path))
    tables.write_deim(build_deim(rng.standard_normal((coarse.num_vertices, 3)), 2),
                      str(tmp_path))
    with pytest.raises(PODError, match="does not refine"):
        load_reduced_setup(problem, str(tmp_path))
    with pytest.raises(ConfigError):
        load_reduced_setup(problem, str(tmp_path / "absent"))


def test_run_benchmark(cfg):
    evidence = run_benchmark(cfg, uniform_level=4)
    assert set(evidence["timings"]) == set(tables.TIMING_COLUMNS)
    out = os.path.join(cfg.output.directory, "benchmark")
    df = pd.read_csv(os.path.join(out, "timing.csv"), index_col="phase")
    assert df.notna().all().all()
    scaling = evidence["deim_scaling"]
    assert scaling["fine_vertices"] > scaling["coarse_vertices"]

    offline = pd.read_csv(os.path.join(out, "offline_costs.csv"), index_col="phase")
    assert list(offline.columns) == ["adaptive", "uniform"]
    assert offline.loc["reference_vertices", "uniform"] == 145
    assert (offline.loc["total"] >= offline.loc["snapshots"]).all()
    assert evidence["offline_ratio_adaptive_vs_uniform"] > 0.0

    sweep = pd.read_csv(os.path.join(out, "rank_sweep.csv"))
    assert sweep["ell"].tolist() == [2, 4]
    assert (sweep["ell_used"] <= sweep["ell"]).all()
    assert np.isfinite(sweep["rom_error"]).all()
    assert len(evidence["rank_sweep"]) == 2


def test_timing_report():
    report = TimingReport()
    report.record("pod", "optimization", 1.0)
    report.record("pod", "per_state_solve", 0.1)
    assert report.consistent()
    report.record("pod", "per_adjoint_solve", 2.0)
    assert not report.consistent()
    with pytest.raises(ValueError):
        report.record("pod", "optimization", -1.0)


def test_check_subset_passes():
    results = run_checks(0, ["config", "conformity"])
    assert [r.name for r in results] == ["config round-trip", "mesh conformity"]
    assert all(r.passed for r in results)
    assert results[0].line().startswith("[PASS] config round-trip")


def test_cli_forward_and_check(cfg, tmp_path):
    path = save_config(cfg, str(tmp_path / "run.json"))
    assert run_chopt.main(["--config", path, "--output", str(tmp_path / "out"), "forward"]) == 0
    assert os.path.exists(tmp_path / "out" / "forward_config.json")
    assert os.path.exists(tmp_path / "out" / "forward" / "summary.json")
    assert run_chopt.main(["check", "--only", "config"]) == 0


def test_cli_bad_config_exits_with_config_code(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text('{"mesh": {"bogus": 1}}', encoding="utf-8")
    assert run_chopt.main(["--config", str(bad), "forward"]) == run_chopt.EXIT_CONFIG
    assert run_chopt.main(["--config", str(tmp_path / "missing.json"), "forward"]) == 2


@pytest.mark.parametrize("flag, code", [
    (CONVERGED, run_chopt.EXIT_OK),
    (MAX_ITERATIONS, run_chopt.EXIT_NOT_CONVERGED),
    (LINE_SEARCH_FAILED, run_chopt.EXIT_LINE_SEARCH),
])
def test_cli_optimize_exit_codes(monkeypatch, tmp_path, flag, code):
    def fake_run_optimize(cfg, kind):
        return {"flag": flag, "iterations": 1, "initial_cost": 2.0, "final_cost": 1.0,
                "full_order_cost": 1.0}

    monkeypatch.setattr(run_chopt, "run_optimize", fake_run_optimize)
    assert run_chopt.main(["--output", str(tmp_path), "optimize"]) == code


def test_cli_basis_dir_reaches_the_config(monkeypatch, tmp_path):
    seen = {}

    def fake_run_optimize(cfg, kind):
        seen["basis_dir"] = cfg.pod.basis_dir
        seen["kind"] = kind
        return {"flag": CONVERGED, "iterations": 0, "initial_cost": 1.0, "final_cost": 1.0,
                "full_order_cost": 1.0}

    monkeypatch.setattr(run_chopt, "run_optimize", fake_run_optimize)
    argv = ["--output", str(tmp_path), "optimize", "--model", "rom", "--basis-dir", "saved/pod"]
    assert run_chopt.main(argv) == run_chopt.EXIT_OK
    assert seen == {"basis_dir": "saved/pod", "kind": "rom"}
