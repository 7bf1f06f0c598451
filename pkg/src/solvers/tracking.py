"""
L2 misfits between fields that may live on different meshes of the hierarchy.

Both fields are prolongated to their common refinement, where the comparison
is exact for P1 functions.
"""

from __future__ import annotations

from functools import lru_cache
from typing import List, Sequence, Tuple

import numpy as np
import scipy.sparse as sp

from src.fem.fields import FEField
from src.fem.operators import mesh_operators
from src.mesh.adaptive_mesh import AdaptiveMesh, common_refinement
from src.mesh.transfer import prolongation_matrix
from src.utils.helpers import trapezoid_weights


@lru_cache(maxsize=1024)
def comparison_space(a: AdaptiveMesh, b: AdaptiveMesh) -> Tuple[sp.csr_matrix, sp.csr_matrix, sp.csr_matrix]:
    """(P_a, P_b, M_c): prolongations of a and b to their common refinement and its mass."""
    if a == b:
        eye = sp.identity(a.num_vertices, format="csr")
        return eye, eye, mesh_operators(a).mass
    c = common_refinement(a, b)
    return prolongation_matrix(a, c), prolongation_matrix(b, c), mesh_operators(c).mass


def misfit(phi: FEField, target: FEField) -> Tuple[float, np.ndarray]:
    """0.5*||phi - target||_M^2 and its gradient with respect to phi's coefficients."""
    pa, pb, mc = comparison_space(phi.mesh, target.mesh)
    d = pa @ phi.coeffs - pb @ target.coeffs
    md = mc @ d
    return 0.5 * float(d @ md), pa.T @ md


def l2_distance(a: FEField, b: FEField) -> float:
    return float(np.sqrt(2.0 * misfit(a, b)[0]))


class TrackingFunctional:
    """beta1/2 sum_k w_k ||phi_k - phi_d,k||^2 + beta2/2 ||phi_N - phi_T||^2."""

    def __init__(self, desired: Sequence[FEField], terminal: FEField,
                 beta1: float, beta2: float, dt: float):
        if beta1 < 0.0 or beta2 < 0.0:
            raise ValueError(f"tracking weights must be nonnegative, got {beta1}, {beta2}")
        self.desired = list(desired)
        self.terminal = terminal
        self.beta1 = float(beta1)
        self.beta2 = float(beta2)
        self.dt = float(dt)
        self.weights = trapezoid_weights(len(self.desired) - 1, dt)

    def _check(self, phis: Sequence[FEField]) -> None:
        if len(phis) != len(self.desired):
            raise ValueError(f"{len(phis)} states but {len(self.desired)} desired fields")

    def evaluate(self, phis: Sequence[FEField]) -> Tuple[float, float]:
        """(tracking term, terminal term)."""
        self._check(phis)
        tracking = 0.0
        if self.beta1 != 0.0:
            for w, phi, target in zip(self.weights, phis, self.desired):
                tracking += w * misfit(phi, target)[0]
        terminal = 0.0
        if self.beta2 != 0.0:
            terminal = misfit(phis[-1], self.terminal)[0]
        return self.beta1 * tracking, self.beta2 * terminal

    def state_gradients(self, phis: Sequence[FEField]) -> List[np.ndarray]:
        """Derivative of the tracking cost with respect to each phi_k's coefficients."""
        self._check(phis)
        grads = []
        for k, (w, phi, target) in enumerate(zip(self.weights, phis, self.desired)):
            g = np.zeros(phi.mesh.num_vertices)
            if self.beta1 != 0.0:
                g += self.beta1 * w * misfit(phi, target)[1]
            if k == len(phis) - 1 and self.beta2 != 0.0:
                g += self.beta2 * misfit(phi, self.terminal)[1]
            grads.append(g)
        return grads


def trajectory_error(a: Sequence[FEField], b: Sequence[FEField], dt: float,
                     relative: bool = True) -> float:
    """L2(0,T;L2) distance of two trajectories, relative to the norm of b by default."""
    if len(a) != len(b):
        raise ValueError(f"trajectories have {len(a)} and {len(b)} time levels")
    w = trapezoid_weights(len(a) - 1, dt)
    num = sum(wk * 2.0 * misfit(x, y)[0] for wk, x, y in zip(w, a, b))
    if not relative:
        return float(np.sqrt(num))
    den = 0.0
    for wk, y in zip(w, b):
        ops = mesh_operators(y.mesh)
        den += wk * float(y.coeffs @ (ops.mass @ y.coeffs))
    return float(np.sqrt(num / den)) if den > 0.0 else float(np.sqrt(num))
