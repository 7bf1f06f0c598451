"""
P1 Assembly
Vectorized element matrices for mass, stiffness and skew convection on an AdaptiveMesh.
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from typing import Callable

import numpy as np
import scipy.sparse as sp

from config.settings import THREADS
from src.fem.fields import FEField, VelocityField, gradients
from src.mesh.adaptive_mesh import AdaptiveMesh

logger = logging.getLogger(__name__)

_MASS_REF = np.array([[2.0, 1.0, 1.0], [1.0, 2.0, 1.0], [1.0, 1.0, 2.0]]) / 12.0


def _scatter(mesh: AdaptiveMesh, local: np.ndarray) -> sp.csr_matrix:
    """Sum element blocks of shape (T, 3, 3) into a global CSR matrix."""
    tri = mesh.triangles
    rows = np.repeat(tri, 3, axis=1).ravel()
    cols = np.tile(tri, (1, 3)).ravel()
    n = mesh.num_vertices
    return sp.coo_matrix((local.ravel(), (rows, cols)), shape=(n, n)).tocsr()


def _element_blocks(mesh: AdaptiveMesh, kernel: Callable[[slice], np.ndarray],
                    threads: int = THREADS) -> np.ndarray:
    n_t = mesh.num_triangles
    if threads <= 1 or n_t < 4 * threads:
        return kernel(slice(0, n_t))
    bounds = np.linspace(0, n_t, threads + 1).astype(int)
    chunks = [slice(a, b) for a, b in zip(bounds[:-1], bounds[1:])]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        parts = list(pool.map(kernel, chunks))
    return np.concatenate(parts)


def assemble_mass(mesh: AdaptiveMesh, threads: int = THREADS) -> sp.csr_matrix:
    """Consistent P1 mass matrix, exact for piecewise-linear products."""
    area = mesh.areas
    blocks = _element_blocks(mesh, lambda s: area[s, None, None] * _MASS_REF, threads)
    return _scatter(mesh, blocks)


def assemble_stiffness(mesh: AdaptiveMesh, threads: int = THREADS) -> sp.csr_matrix:
    area = mesh.areas
    grad = gradients(mesh)

    def kernel(s):
        return area[s, None, None] * np.einsum("tid,tjd->tij", grad[s], grad[s])

    return _scatter(mesh, _element_blocks(mesh, kernel, threads))


def lumped_mass(mesh: AdaptiveMesh) -> np.ndarray:
    """Row sums of the mass matrix (a third of the patch area per vertex)."""
    return np.bincount(mesh.triangles.ravel(), weights=np.repeat(mesh.areas / 3.0, 3),
                       minlength=mesh.num_vertices)


def assemble_advection(mesh: AdaptiveMesh, v: VelocityField,
                       threads: int = THREADS) -> sp.csr_matrix:
    """C_adv[i, j] = int (v . grad psi_j) psi_i with the element-wise transport velocity."""
    v.v1.require_mesh(mesh)
    area = mesh.areas
    grad = gradients(mesh)
    cell = v.cell_velocity

    def kernel(s):
        vg = np.einsum("td,tjd->tj", cell[s], grad[s])
        return (area[s] / 3.0)[:, None, None] * np.broadcast_to(vg[:, None, :], (len(vg), 3, 3))

    return _scatter(mesh, _element_blocks(mesh, kernel, threads))


def assemble_convection(mesh: AdaptiveMesh, v: VelocityField,
                        threads: int = THREADS) -> sp.csr_matrix:
    """Skew-symmetric convection C = (C_adv - C_adv^T) / 2."""
    c_adv = assemble_advection(mesh, v, threads)
    return (0.5 * (c_adv - c_adv.T)).tocsr()


def discrete_divergence_residual(v: VelocityField) -> float:
    """max_j |int v . grad psi_j| for the nodal velocity components."""
    mesh = v.mesh
    grad = gradients(mesh)
    tri = mesh.triangles
    v_avg = np.stack([v.v1.coeffs[tri].mean(axis=1), v.v2.coeffs[tri].mean(axis=1)], axis=1)
    local = mesh.areas[:, None] * np.einsum("td,tjd->tj", v_avg, grad)
    res = np.bincount(tri.ravel(), weights=local.ravel(), minlength=mesh.num_vertices)
    return float(np.max(np.abs(res)))


def l2_inner(f: FEField, g: FEField, mass: sp.spmatrix = None) -> float:
    g.require_mesh(f.mesh)
    m = assemble_mass(f.mesh) if mass is None else mass
    return float(f.coeffs @ (m @ g.coeffs))
