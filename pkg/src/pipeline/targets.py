"""
Target synthesis: initial phase field, desired trajectory and terminal target.

The desired trajectory is the forward solution under a constant reference
control, started from the same initial state as the control problem, so the
target is reachable.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Callable

import numpy as np

from src.control.control_vector import ControlVector
from src.control.shapes import ControlShapes
from src.fem.fields import FEField
from src.mesh.adaptive_mesh import AdaptiveMesh, initial_mesh
from src.mesh.indicator import adapt_to_function
from src.solvers.state_solver import Trajectory, solve_trajectory

logger = logging.getLogger(__name__)


def _box_distance(px, py, hx, hy):
    qx = np.abs(px) - hx
    qy = np.abs(py) - hy
    outside = np.hypot(np.maximum(qx, 0.0), np.maximum(qy, 0.0))
    inside = np.minimum(np.maximum(qx, qy), 0.0)
    return outside + inside


def cross_signed_distance(x, y, half_length: float, half_width: float):
    """Signed distance to a plus-shaped region centred at (0.5, 0.5); negative inside."""
    px, py = x - 0.5, y - 0.5
    return np.minimum(_box_distance(px, py, half_length, half_width),
                      _box_distance(px, py, half_width, half_length))


def cross_profile(half_length: float, half_width: float, epsilon: float) -> Callable:
    """tanh profile, +1 inside the cross and -1 outside."""
    def func(x, y):
        d = cross_signed_distance(x, y, half_length, half_width)
        return np.tanh(-d / (np.sqrt(2.0) * epsilon))
    return func


def initial_state(cfg, rng: np.random.Generator = None) -> FEField:
    """phi_0 on the (adapted) initial mesh described by the run config."""
    t = cfg.targets
    if t.initial_shape == "cross":
        func = cross_profile(t.arm_half_length, t.arm_half_width, cfg.model.epsilon)
        if cfg.mesh.adapt:
            mesh = adapt_to_function(func, cfg.mesh)
        else:
            mesh = initial_mesh(cfg.mesh.root_level)
        return FEField.interpolate(func, mesh)
    mesh = initial_mesh(cfg.mesh.root_level)
    if t.initial_shape == "constant":
        return FEField.constant(t.initial_value, mesh)
    rng = rng or np.random.default_rng(cfg.output.seed)
    return FEField(t.noise_amplitude * rng.standard_normal(mesh.num_vertices), mesh)


@dataclass
class TargetBundle:
    phi0: FEField
    desired: Trajectory
    terminal: FEField
    u_desired: ControlVector

    @property
    def desired_fields(self):
        return self.desired.phi

    @property
    def initial_mesh(self) -> AdaptiveMesh:
        return self.phi0.mesh


def synthesize_targets(cfg, shapes: ControlShapes) -> TargetBundle:
    phi0 = initial_state(cfg)
    n = cfg.model.n_steps
    u_d = ControlVector.constant(cfg.targets.u_desired, shapes.m, n)
    logger.info(f"synthesizing desired trajectory at u_d={cfg.targets.u_desired:g} "
                f"on {phi0.mesh.num_vertices} vertices")
    desired = solve_trajectory(phi0, u_d, shapes, cfg.model, cfg.mesh.adapt, cfg.mesh,
                               cfg.output.cfl_policy)
    return TargetBundle(phi0, desired, desired.final.renamed("phi_T"), u_d)
