"""
Nodal transfer of P1 fields between meshes of the bisection hierarchy.
"""

from __future__ import annotations

from functools import lru_cache
from typing import Dict, Optional

import numpy as np
import scipy.sparse as sp

from src.fem.fields import FEField
from src.mesh.adaptive_mesh import (
    AdaptiveMesh,
    Key,
    _midpoint,
    common_refinement,
    triangle_vertices,
)
from src.utils.errors import MeshError


def _covering_leaf(key: Key, leaves: frozenset) -> Optional[Key]:
    for d in range(len(key), 0, -1):
        if key[:d] in leaves:
            return key[:d]
    return None


@lru_cache(maxsize=256)
def prolongation_matrix(source: AdaptiveMesh, target: AdaptiveMesh) -> sp.csr_matrix:
    """Sparse map of source coefficients to target coefficients; target refines source."""
    if source == target:
        return sp.identity(source.num_vertices, format="csr")
    leaves = source.leaf_set
    weights: Dict[tuple, Dict[int, float]] = {
        tuple(v): {i: 1.0} for i, v in enumerate(map(tuple, source.int_vertices.tolist()))
    }
    for key in target.keys:
        anc = _covering_leaf(key, leaves)
        if anc is None:
            raise MeshError(
                f"mesh {target.mesh_id} does not refine mesh {source.mesh_id}"
            )
        for d in range(len(anc), len(key)):
            _, b, c = triangle_vertices(key[:d])
            m = _midpoint(b, c)
            if m in weights:
                continue
            w: Dict[int, float] = {}
            for end in (weights[b], weights[c]):
                for j, val in end.items():
                    w[j] = w.get(j, 0.0) + 0.5 * val
            weights[m] = w
    rows, cols, vals = [], [], []
    for i, v in enumerate(map(tuple, target.int_vertices.tolist())):
        for j, val in weights[v].items():
            rows.append(i)
            cols.append(j)
            vals.append(val)
    return sp.csr_matrix((vals, (rows, cols)),
                         shape=(target.num_vertices, source.num_vertices))


@lru_cache(maxsize=256)
def transfer_matrix(source: AdaptiveMesh, target: AdaptiveMesh) -> sp.csr_matrix:
    """Nodal interpolation from source to an arbitrary mesh of the same hierarchy."""
    if target.refines(source):
        return prolongation_matrix(source, target)
    common = common_refinement(source, target)
    p = prolongation_matrix(source, common)
    rows = np.array([common.vertex_index(tuple(v)) for v in target.int_vertices.tolist()],
                    dtype=np.int64)
    return p[rows, :].tocsr()


def prolongate(f: FEField, target: AdaptiveMesh) -> FEField:
    """Represent f on a refinement of its mesh; the function itself is unchanged."""
    if not target.refines(f.mesh):
        raise MeshError(f"mesh {target.mesh_id} does not refine mesh {f.mesh_id}")
    return FEField(prolongation_matrix(f.mesh, target) @ f.coeffs, target, f.name)


def transfer(f: FEField, target: AdaptiveMesh) -> FEField:
    """Nodal interpolant of f on target (exact when target refines f's mesh)."""
    if target == f.mesh:
        return f
    return FEField(transfer_matrix(f.mesh, target) @ f.coeffs, target, f.name)
