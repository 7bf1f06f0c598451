"""
Discrete empirical interpolation of the nodal nonlinearity F'(phi) = phi^3 - phi.

Because F' is evaluated vertex by vertex (lumped quadrature), sampling the
reduced state at the interpolation vertices is all the online phase needs.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from src.fem.fields import FEField
from src.fem.nonlinearity import free_energy_derivative, free_energy_second_derivative
from src.utils.errors import DEIMError

logger = logging.getLogger(__name__)

_RESIDUAL_TOL = 1e-12


def deim_select(U: np.ndarray) -> np.ndarray:
    """Greedy interpolation indices: each pick maximizes the current interpolation residual."""
    U = np.asarray(U, dtype=float)
    if U.ndim != 2 or U.shape[1] == 0:
        raise DEIMError(f"DEIM basis must be a non-empty matrix, got shape {U.shape}")
    scale = float(np.max(np.abs(U)))
    if scale == 0.0:
        raise DEIMError("DEIM basis is zero")
    indices = [int(np.argmax(np.abs(U[:, 0])))]
    for l in range(1, U.shape[1]):
        P = np.array(indices)
        c = np.linalg.solve(U[P, :l], U[P, l])
        r = U[:, l] - U[:, :l] @ c
        j = int(np.argmax(np.abs(r)))
        if abs(r[j]) <= _RESIDUAL_TOL * scale:
            raise DEIMError(f"DEIM basis is rank deficient at column {l + 1}")
        indices.append(j)
    return np.array(indices, dtype=np.int64)


@dataclass(frozen=True, eq=False)
class DEIMData:
    basis: np.ndarray
    indices: np.ndarray
    condition: float

    @property
    def ell(self) -> int:
        return self.basis.shape[1]

    @property
    def sampled_basis(self) -> np.ndarray:
        return self.basis[self.indices, :]

    def truncated(self, ell_d: int) -> "DEIMData":
        """Leading ell_d columns and points; greedy selection makes them a prefix."""
        if not 1 <= ell_d <= self.ell:
            raise DEIMError(f"cannot truncate {self.ell} DEIM points to {ell_d}")
        basis = self.basis[:, :ell_d]
        indices = self.indices[:ell_d]
        return DEIMData(basis, indices, float(np.linalg.cond(basis[indices, :])))

    def projector(self, left: np.ndarray) -> np.ndarray:
        """E = left^T U (P^T U)^{-1}, the offline matrix applied to sampled values."""
        lu = left.T @ self.basis
        return np.linalg.solve(self.sampled_basis.T, lu.T).T


def nonlinearity_snapshots(fields: Sequence[FEField],
                           f: Callable[[np.ndarray], np.ndarray] = free_energy_derivative) -> np.ndarray:
    return np.column_stack([f(x.coeffs) for x in fields])


def build_deim(snapshots: np.ndarray, ell_d: int) -> DEIMData:
    """Orthonormal nonlinearity basis from an SVD of the snapshot matrix and its indices."""
    if ell_d < 1:
        raise DEIMError(f"ell_d must be >= 1, got {ell_d}")
    U, s, _ = np.linalg.svd(np.asarray(snapshots, dtype=float), full_matrices=False)
    if s.size == 0 or s[0] == 0.0:
        raise DEIMError("nonlinearity snapshots are all zero")
    rank = int(np.sum(s > 1e-12 * s[0]))
    if ell_d > rank:
        logger.warning(f"requested {ell_d} DEIM functions but snapshot rank is {rank}; truncating")
        ell_d = rank
    U = U[:, :ell_d]
    indices = deim_select(U)
    cond = float(np.linalg.cond(U[indices, :]))
    logger.info(f"DEIM: {ell_d} interpolation points, cond(P^T U) = {cond:.3e}")
    return DEIMData(U, indices, cond)


@dataclass(frozen=True, eq=False)
class DEIMNonlinearity:
    """Online evaluation a -> E f(V_P a) and its Jacobian, with only ell_d samples."""
    projector: np.ndarray
    sampled_modes: np.ndarray

    def value(self, a: np.ndarray) -> np.ndarray:
        return self.projector @ free_energy_derivative(self.sampled_modes @ a)

    def jacobian(self, a: np.ndarray) -> np.ndarray:
        d = free_energy_second_derivative(self.sampled_modes @ a)
        return self.projector @ (d[:, None] * self.sampled_modes)


def deim_apply(a: np.ndarray, nonlinear: DEIMNonlinearity) -> np.ndarray:
    return nonlinear.value(np.asarray(a, dtype=float))
