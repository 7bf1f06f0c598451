"""
Time-discrete controls, box bounds and the trapezoidal control norm.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence, Union

import numpy as np

from config.settings import U_A, U_B
from src.utils.helpers import trapezoid_weights

Bound = Union[float, Sequence[float], np.ndarray]


@dataclass(frozen=True, eq=False)
class ControlVector:
    """Amplitudes u_i(t_k), shape (m, N_t + 1)."""
    values: np.ndarray

    def __post_init__(self):
        v = np.array(self.values, dtype=float)
        if v.ndim == 1:
            v = v[None, :]
        if v.ndim != 2 or v.shape[1] < 1:
            raise ValueError(f"control values must have shape (m, N_t+1), got {v.shape}")
        if not np.all(np.isfinite(v)):
            raise ValueError("control contains non-finite values")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @property
    def m(self) -> int:
        return self.values.shape[0]

    @property
    def n_levels(self) -> int:
        return self.values.shape[1]

    @property
    def n_steps(self) -> int:
        return self.values.shape[1] - 1

    @classmethod
    def zeros(cls, m: int, n_steps: int) -> "ControlVector":
        return cls(np.zeros((m, n_steps + 1)))

    @classmethod
    def constant(cls, value: float, m: int, n_steps: int) -> "ControlVector":
        return cls(np.full((m, n_steps + 1), float(value)))

    def cache_key(self) -> bytes:
        return self.values.tobytes()

    def __sub__(self, other: "ControlVector") -> np.ndarray:
        return self.values - other.values


@dataclass(frozen=True, eq=False)
class BoxBounds:
    """Per-component bounds u_a <= u_i(t) <= u_b, constant in time."""
    u_a: Bound = U_A
    u_b: Bound = U_B

    def __post_init__(self):
        lo = np.atleast_1d(np.asarray(self.u_a, dtype=float))
        hi = np.atleast_1d(np.asarray(self.u_b, dtype=float))
        if np.any(lo > hi):
            raise ValueError(f"box bounds need u_a <= u_b, got {lo} and {hi}")
        object.__setattr__(self, "u_a", lo)
        object.__setattr__(self, "u_b", hi)

    def lower(self, m: int) -> np.ndarray:
        return np.broadcast_to(self.u_a, (m,))[:, None]

    def upper(self, m: int) -> np.ndarray:
        return np.broadcast_to(self.u_b, (m,))[:, None]

    def contains(self, u: ControlVector) -> bool:
        return bool(np.all(u.values >= self.lower(u.m)) and np.all(u.values <= self.upper(u.m)))


def project_box(u: ControlVector, bounds: BoxBounds) -> ControlVector:
    """Componentwise clamp to [u_a, u_b]."""
    return ControlVector(np.clip(u.values, bounds.lower(u.m), bounds.upper(u.m)))


def control_inner(a: np.ndarray, b: np.ndarray, dt: float) -> float:
    """Trapezoid-in-time, Euclidean-in-components inner product of (m, N+1) arrays."""
    a = np.atleast_2d(np.asarray(a, dtype=float))
    b = np.atleast_2d(np.asarray(b, dtype=float))
    w = trapezoid_weights(a.shape[1] - 1, dt)
    return float(np.sum(w * np.sum(a * b, axis=0)))


def control_norm(g, dt: float) -> float:
    """(sum_k w_k sum_i g_i(t_k)^2)^(1/2) with trapezoid weights w_k."""
    values = g.values if isinstance(g, ControlVector) else g
    return float(np.sqrt(max(control_inner(values, values, dt), 0.0)))
