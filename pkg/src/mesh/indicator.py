"""
Interface indicator and indicator-driven construction of adapted meshes.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Callable

import numpy as np

from config.settings import INTERFACE_FLAG_WEIGHT, INTERFACE_THRESHOLD
from src.fem.fields import FEField, field_gradient
from src.mesh.adaptive_mesh import (
    AdaptiveMesh,
    MeshSettings,
    initial_mesh,
    refine_coarsen,
)

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class RefinementIndicator:
    scores: np.ndarray
    mesh_id: str

    def __post_init__(self):
        s = np.array(self.scores, dtype=float)
        if not np.all(np.isfinite(s)) or np.any(s < 0.0):
            raise ValueError("indicator scores must be finite and nonnegative")
        object.__setattr__(self, "scores", s)

    @property
    def total(self) -> float:
        return float(self.scores.sum())


def interface_indicator(phi: FEField, threshold: float = INTERFACE_THRESHOLD,
                        flag_weight: float = INTERFACE_FLAG_WEIGHT) -> RefinementIndicator:
    """Per-triangle score area*|grad phi|^2, plus flag_weight*area on interfacial triangles.

    A triangle is interfacial when a vertex value satisfies |phi| < threshold or
    the phase changes sign across it.
    """
    mesh = phi.mesh
    area = mesh.areas
    grad = field_gradient(phi)
    score = area * np.einsum("td,td->t", grad, grad)
    vals = phi.coeffs[mesh.triangles]
    interfacial = np.any(np.abs(vals) < threshold, axis=1) | (
        (vals.max(axis=1) > 0.0) & (vals.min(axis=1) < 0.0)
    )
    score = score + flag_weight * area * interfacial
    return RefinementIndicator(score, mesh.mesh_id)


def adapt_to_function(func: Callable[[np.ndarray, np.ndarray], np.ndarray],
                      settings: MeshSettings) -> AdaptiveMesh:
    """Refine-only passes from the uniform root level towards the interface of func."""
    mesh = initial_mesh(settings.root_level)
    for i in range(settings.initial_passes):
        ind = interface_indicator(FEField.interpolate(func, mesh),
                                  settings.interface_threshold, settings.flag_weight)
        new_mesh = refine_coarsen(mesh, ind, settings.frac_refine, 0.0,
                                  settings.h_min_guard, settings.max_level,
                                  settings.root_level)
        logger.info(f"initial adaptation pass {i + 1}: {new_mesh.num_vertices} vertices")
        if new_mesh == mesh:
            break
        mesh = new_mesh
    return mesh
