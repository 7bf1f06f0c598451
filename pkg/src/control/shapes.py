"""
Control shape functions and the control operator B u = sum_i u_i chi_i.

Every registered shape is the curl of a stream function that vanishes on the
boundary of the unit square, so it is solenoidal with zero normal trace.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Dict, List, Sequence, Tuple

import numpy as np

from config.settings import CONTROL_SHAPES
from src.fem.fields import VelocityField, combine_velocities
from src.fem.operators import mesh_operators
from src.mesh.adaptive_mesh import AdaptiveMesh

Pair = Tuple[np.ndarray, np.ndarray]


@dataclass(frozen=True)
class ShapeFunction:
    name: str
    velocity: Callable[[np.ndarray, np.ndarray], Pair]
    stream: Callable[[np.ndarray, np.ndarray], np.ndarray]

    def velocity_on(self, mesh: AdaptiveMesh) -> VelocityField:
        return VelocityField.from_stream_function(self.velocity, self.stream, mesh)


def _sin_cos_vortex(x, y) -> Pair:
    return (np.sin(np.pi * x) * np.cos(np.pi * y),
            -np.sin(np.pi * y) * np.cos(np.pi * x))


def _sin_cos_vortex_stream(x, y):
    return np.sin(np.pi * x) * np.sin(np.pi * y) / np.pi


def _double_vortex(x, y) -> Pair:
    return (0.5 * np.sin(2 * np.pi * x) * np.cos(np.pi * y),
            -np.cos(2 * np.pi * x) * np.sin(np.pi * y))


def _double_vortex_stream(x, y):
    return np.sin(2 * np.pi * x) * np.sin(np.pi * y) / (2 * np.pi)


SHAPE_REGISTRY: Dict[str, ShapeFunction] = {
    "sin_cos_vortex": ShapeFunction("sin_cos_vortex", _sin_cos_vortex, _sin_cos_vortex_stream),
    "double_vortex": ShapeFunction("double_vortex", _double_vortex, _double_vortex_stream),
}


class ControlShapes:
    """Ordered list of m shape functions; re-interpolated on whatever mesh is asked for."""

    def __init__(self, names: Sequence[str] = tuple(CONTROL_SHAPES)):
        unknown = [n for n in names if n not in SHAPE_REGISTRY]
        if unknown:
            raise ValueError(
                f"unknown control shapes {unknown}; available: {sorted(SHAPE_REGISTRY)}"
            )
        if not names:
            raise ValueError("at least one control shape is required")
        self.names: Tuple[str, ...] = tuple(names)
        self.functions: List[ShapeFunction] = [SHAPE_REGISTRY[n] for n in self.names]

    def __len__(self) -> int:
        return len(self.functions)

    def __iter__(self):
        return iter(self.functions)

    def __getitem__(self, i: int) -> ShapeFunction:
        return self.functions[i]

    def __repr__(self) -> str:
        return f"ControlShapes({list(self.names)})"

    @property
    def m(self) -> int:
        return len(self.functions)

    def velocities(self, mesh: AdaptiveMesh) -> List[VelocityField]:
        ops = mesh_operators(mesh)
        return [ops.velocity(s) for s in self.functions]


def apply_B(u, k: int, shapes: ControlShapes, mesh: AdaptiveMesh) -> VelocityField:
    """Velocity sum_i u_i(t_k) chi_i interpolated on mesh."""
    values = u.values
    if values.shape[0] != shapes.m:
        raise ValueError(f"control has {values.shape[0]} components, {shapes.m} shapes given")
    if not 0 <= k < values.shape[1]:
        raise IndexError(f"time index {k} outside 0..{values.shape[1] - 1}")
    return combine_velocities(shapes.velocities(mesh), values[:, k])
