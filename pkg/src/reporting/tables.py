"""
CSV artifacts: controls, iteration histories, mass/energy logs, timing reports,
POD bases, DEIM data and mesh hierarchies.

Floats are written with 17 significant digits so every table reads back bit-exact.
"""

from __future__ import annotations

import os
from typing import Dict, Iterable, List, Sequence

import numpy as np
import pandas as pd

from src.control.control_vector import ControlVector
from src.fem.fields import FEField
from src.mesh.adaptive_mesh import AdaptiveMesh, mesh_from_paths, mesh_paths
from src.reduction.deim import DEIMData
from src.reduction.pod import PODBasis
from src.utils.helpers import ensure_dir

FLOAT_FORMAT = "%.17g"

HISTORY_COLUMNS = ["k", "J", "gradnorm", "s_k"]
MASS_ENERGY_COLUMNS = ["step", "time", "mass", "energy"]
TIMING_ROWS = ["optimization", "per_state_solve", "per_adjoint_solve"]
TIMING_COLUMNS = ["uniform_fe", "adaptive_fe", "pod", "pod_deim"]
OFFLINE_COLUMNS = ["adaptive", "uniform"]
RANK_SWEEP_COLUMNS = ["ell", "ell_used", "ell_d", "eigenvalue_tail", "optimization_seconds",
                      "per_state_solve", "per_adjoint_solve", "rom_error", "full_order_cost"]


def _write(df: pd.DataFrame, path: str, index: bool = False) -> str:
    ensure_dir(os.path.dirname(path) or ".")
    df.to_csv(path, index=index, float_format=FLOAT_FORMAT)
    return path


def write_control_csv(u: ControlVector, dt: float, path: str) -> str:
    data = {"step": np.arange(u.n_levels), "time": np.arange(u.n_levels) * dt}
    for i in range(u.m):
        data[f"u_{i + 1}"] = u.values[i]
    return _write(pd.DataFrame(data), path)


def read_control_csv(path: str) -> ControlVector:
    df = pd.read_csv(path, float_precision="round_trip")
    cols = [c for c in df.columns if c.startswith("u_")]
    if not cols:
        raise ValueError(f"{path}: no u_<i> columns")
    cols.sort(key=lambda c: int(c.split("_")[1]))
    return ControlVector(df[cols].to_numpy(dtype=float).T)


def history_frame(history: Iterable) -> pd.DataFrame:
    rows = [{"k": r.k, "J": r.cost, "gradnorm": r.grad_norm,
             "s_k": np.nan if r.step is None else r.step} for r in history]
    return pd.DataFrame(rows, columns=HISTORY_COLUMNS)


def write_history_csv(history: Iterable, path: str) -> str:
    return _write(history_frame(history), path)


def write_cost_breakdown_csv(history: Iterable, path: str) -> str:
    rows = [{"k": r.k, "tracking": r.breakdown.tracking, "terminal": r.breakdown.terminal,
             "control": r.breakdown.control} for r in history if r.breakdown is not None]
    return _write(pd.DataFrame(rows, columns=["k", "tracking", "terminal", "control"]), path)


def write_mass_energy_csv(times: Sequence[float], mass: Sequence[float],
                          energy: Sequence[float], path: str) -> str:
    df = pd.DataFrame({"step": np.arange(len(mass)), "time": np.asarray(times),
                       "mass": np.asarray(mass), "energy": np.asarray(energy)},
                      columns=MASS_ENERGY_COLUMNS)
    return _write(df, path)


def write_field_csv(f: FEField, path: str) -> str:
    df = pd.DataFrame({"vertex": np.arange(f.mesh.num_vertices),
                       "x": f.mesh.vertices[:, 0], "y": f.mesh.vertices[:, 1],
                       "value": f.coeffs})
    return _write(df, path)


def write_timing_csv(timings: Dict[str, Dict[str, float]], path: str) -> str:
    """timings[column][row] in seconds; missing entries are left empty."""
    df = pd.DataFrame(index=TIMING_ROWS, columns=TIMING_COLUMNS, dtype=float)
    for col, rows in timings.items():
        for row, value in rows.items():
            df.loc[row, col] = value
    df.index.name = "phase"
    return _write(df, path, index=True)


def write_offline_csv(costs: Dict[str, Dict[str, float]], path: str) -> str:
    """costs[discretization][phase]; one column per snapshot discretization."""
    phases: List[str] = []
    for rows in costs.values():
        phases += [p for p in rows if p not in phases]
    columns = [c for c in OFFLINE_COLUMNS if c in costs]
    columns += [c for c in costs if c not in columns]
    df = pd.DataFrame(index=phases, columns=columns, dtype=float)
    for col, rows in costs.items():
        for phase, value in rows.items():
            df.loc[phase, col] = value
    df.index.name = "phase"
    return _write(df, path, index=True)


def write_rank_sweep_csv(rows: Sequence[Dict[str, float]], path: str) -> str:
    return _write(pd.DataFrame(list(rows), columns=RANK_SWEEP_COLUMNS), path)


def write_key_value_csv(values: Dict[str, float], path: str,
                        columns: Sequence[str] = ("item", "seconds")) -> str:
    df = pd.DataFrame({columns[0]: list(values.keys()), columns[1]: list(values.values())})
    return _write(df, path)


def write_mesh_hierarchy(mesh: AdaptiveMesh, path: str) -> str:
    rows = mesh_paths(mesh)
    df = pd.DataFrame({"root": [r for r, _ in rows], "path": [p for _, p in rows]})
    return _write(df, path)


def read_mesh_hierarchy(path: str) -> AdaptiveMesh:
    df = pd.read_csv(path, dtype={"root": int, "path": str}, keep_default_na=False)
    return mesh_from_paths(zip(df["root"], df["path"]))


def write_basis(basis: PODBasis, directory: str) -> Dict[str, str]:
    """Reference mesh hierarchy, modes (vertices x ell) and all eigenvalues."""
    ensure_dir(directory)
    modes = pd.DataFrame(basis.modes, columns=[f"mode_{i + 1}" for i in range(basis.ell)])
    eig = pd.DataFrame({"i": np.arange(1, len(basis.eigenvalues) + 1),
                        "eigenvalue": basis.eigenvalues})
    return {
        "mesh": write_mesh_hierarchy(basis.mesh, os.path.join(directory, "reference_mesh.csv")),
        "modes": _write(modes, os.path.join(directory, "pod_modes.csv")),
        "eigenvalues": _write(eig, os.path.join(directory, "pod_eigenvalues.csv")),
    }


def read_basis(directory: str) -> PODBasis:
    mesh = read_mesh_hierarchy(os.path.join(directory, "reference_mesh.csv"))
    modes = pd.read_csv(os.path.join(directory, "pod_modes.csv"), float_precision="round_trip")
    eig = pd.read_csv(os.path.join(directory, "pod_eigenvalues.csv"), float_precision="round_trip")
    values = modes.to_numpy(dtype=float).reshape(mesh.num_vertices, modes.shape[1])
    return PODBasis(mesh, values, eig["eigenvalue"].to_numpy(dtype=float))


def write_deim(deim: DEIMData, directory: str) -> Dict[str, str]:
    ensure_dir(directory)
    idx = pd.DataFrame({"j": np.arange(1, deim.ell + 1), "vertex": deim.indices})
    basis = pd.DataFrame(deim.basis, columns=[f"u_{i + 1}" for i in range(deim.ell)])
    return {
        "indices": _write(idx, os.path.join(directory, "deim_indices.csv")),
        "basis": _write(basis, os.path.join(directory, "deim_basis.csv")),
    }


def read_deim(directory: str) -> DEIMData:
    idx = pd.read_csv(os.path.join(directory, "deim_indices.csv"))
    basis = pd.read_csv(os.path.join(directory, "deim_basis.csv"), float_precision="round_trip")
    U = basis.to_numpy(dtype=float)
    indices = idx["vertex"].to_numpy(dtype=np.int64)
    return DEIMData(U, indices, float(np.linalg.cond(U[indices, :])))