"""
Model interface consumed by the optimizer, and the full-order model.
"""

from __future__ import annotations

import logging
import time
from abc import ABC, abstractmethod
from typing import Dict, List, Optional, Tuple

import numpy as np

from config.settings import CFL_POLICY
from src.control.control_vector import ControlVector, control_inner
from src.control.gradient import reduced_gradient
from src.control.shapes import ControlShapes
from src.fem.fields import FEField
from src.mesh.adaptive_mesh import MeshSettings
from src.optimization.cost import CostBreakdown, CostWeights
from src.solvers.adjoint_solver import AdjointTrajectory, solve_adjoint
from src.solvers.state_solver import CHParams, Trajectory, solve_trajectory
from src.solvers.tracking import TrackingFunctional
from src.utils.helpers import trapezoid_weights

logger = logging.getLogger(__name__)


class ModelInterface(ABC):
    """Reduced cost u -> J(u) with its gradient on the trapezoidal control space."""

    dt: float
    _cache = None

    def clear_cache(self) -> None:
        self._cache = None

    @abstractmethod
    def evaluate_cost(self, u: ControlVector) -> CostBreakdown:
        ...

    @abstractmethod
    def evaluate_gradient(self, u: ControlVector) -> np.ndarray:
        ...

    def norm(self, g) -> float:
        values = g.values if isinstance(g, ControlVector) else np.asarray(g)
        return float(np.sqrt(max(control_inner(values, values, self.dt), 0.0)))

    def control_cost(self, u: ControlVector, gamma: float) -> float:
        return 0.5 * gamma * control_inner(u.values, u.values, self.dt)


def evaluate_cost(u: ControlVector, model: ModelInterface) -> float:
    return model.evaluate_cost(u).total


class FullOrderModel(ModelInterface):
    """Forward solve + discrete adjoint on (optionally adapted) finite element meshes."""

    def __init__(self, phi0: FEField, shapes: ControlShapes, params: CHParams,
                 weights: CostWeights, tracking: TrackingFunctional, adapt: bool = False,
                 mesh_settings: MeshSettings = None, cfl_policy: str = CFL_POLICY):
        self.phi0 = phi0
        self.shapes = shapes
        self.params = params
        self.weights = weights
        self.tracking = tracking
        self.adapt = adapt
        self.mesh_settings = mesh_settings or MeshSettings()
        self.cfl_policy = cfl_policy
        self.dt = params.dt
        self.time_weights = trapezoid_weights(params.n_steps, params.dt)
        self._cache: Optional[Tuple[bytes, Trajectory]] = None
        self.timings: Dict[str, List[float]] = {"state_solve": [], "adjoint_solve": []}

    def solve(self, u: ControlVector) -> Trajectory:
        key = u.cache_key()
        if self._cache is not None and self._cache[0] == key:
            return self._cache[1]
        start = time.perf_counter()
        traj = solve_trajectory(self.phi0, u, self.shapes, self.params, self.adapt,
                                self.mesh_settings, self.cfl_policy)
        self.timings["state_solve"].append(time.perf_counter() - start)
        self._cache = (key, traj)
        return traj

    def evaluate_cost(self, u: ControlVector) -> CostBreakdown:
        traj = self.solve(u)
        tracking, terminal = self.tracking.evaluate(traj.phi)
        return CostBreakdown(tracking, terminal, self.control_cost(u, self.weights.gamma))

    def adjoint(self, u: ControlVector) -> AdjointTrajectory:
        traj = self.solve(u)
        start = time.perf_counter()
        adj = solve_adjoint(traj, u, self.tracking, self.shapes, self.params)
        self.timings["adjoint_solve"].append(time.perf_counter() - start)
        return adj

    def evaluate_gradient(self, u: ControlVector) -> np.ndarray:
        traj = self.solve(u)
        return reduced_gradient(u, traj, self.adjoint(u), self.shapes, self.weights.gamma)
