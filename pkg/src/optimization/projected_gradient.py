"""
Projected Gradient Module.

Box-constrained projected-gradient descent with an Armijo backtracking rule.

Key features:
- Generic over the model: anything implementing ModelInterface (full order,
  POD or POD-DEIM) is driven by the same loop
- Armijo condition in projected form: J(P(u - s g)) <= J(u) - c/s ||P(u - s g) - u||^2
- Stopping rule ||g_k|| < rel_tol * ||g_0|| + abs_tol, safety cap k_max
- A failed line search ends the run with the best iterate and a flag instead
  of an exception
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import List, Optional, Tuple

from config.settings import (
    ARMIJO_C,
    ARMIJO_MAX_BACKTRACKS,
    ARMIJO_S_INIT,
    ARMIJO_SHRINK,
    K_MAX,
    STOP_ABS_TOL,
    STOP_REL_TOL,
)
from src.control.control_vector import BoxBounds, ControlVector, project_box
from src.optimization.cost import CostBreakdown
from src.optimization.models import ModelInterface
from src.utils.errors import LineSearchError

logger = logging.getLogger(__name__)

CONVERGED = "converged"
MAX_ITERATIONS = "k_max"
LINE_SEARCH_FAILED = "line_search_failed"


@dataclass(frozen=True)
class OptimizerSettings:
    """
    Configuration for the projected-gradient run.

    Attributes:
        k_max: Iteration cap
        s_init: First trial step of every line search
        shrink: Backtracking factor
        c_armijo: Sufficient-decrease constant
        max_backtracks: Backtracks allowed before the line search fails
        rel_tol, abs_tol: Stopping rule ||g_k|| < rel_tol*||g_0|| + abs_tol
    """
    k_max: int = K_MAX
    s_init: float = ARMIJO_S_INIT
    shrink: float = ARMIJO_SHRINK
    c_armijo: float = ARMIJO_C
    max_backtracks: int = ARMIJO_MAX_BACKTRACKS
    rel_tol: float = STOP_REL_TOL
    abs_tol: float = STOP_ABS_TOL

    def __post_init__(self):
        if self.k_max < 0:
            raise ValueError(f"k_max must be >= 0, got {self.k_max}")
        if self.s_init <= 0.0:
            raise ValueError(f"s_init must be > 0, got {self.s_init}")
        if not 0.0 < self.shrink < 1.0:
            raise ValueError(f"shrink must lie in (0,1), got {self.shrink}")
        if not 0.0 < self.c_armijo < 1.0:
            raise ValueError(f"c_armijo must lie in (0,1), got {self.c_armijo}")
        if self.max_backtracks < 0:
            raise ValueError(f"max_backtracks must be >= 0, got {self.max_backtracks}")
        if self.rel_tol < 0.0 or self.abs_tol < 0.0:
            raise ValueError("stopping tolerances must be >= 0")


@dataclass(frozen=True)
class IterationRecord:
    k: int
    cost: float
    grad_norm: float
    step: Optional[float]
    breakdown: Optional[CostBreakdown] = None


@dataclass
class OptimizationResult:
    control: ControlVector
    history: List[IterationRecord] = field(default_factory=list)
    flag: str = CONVERGED

    @property
    def converged(self) -> bool:
        return self.flag == CONVERGED

    @property
    def final_cost(self) -> float:
        return self.history[-1].cost


def armijo_search(u: ControlVector, g, model: ModelInterface, bounds: BoxBounds,
                  cost_u: float, s_init: float = ARMIJO_S_INIT, shrink: float = ARMIJO_SHRINK,
                  c_armijo: float = ARMIJO_C,
                  max_backtracks: int = ARMIJO_MAX_BACKTRACKS) -> Tuple[float, ControlVector, CostBreakdown]:
    """Largest s in {s_init * shrink^j} satisfying the projected Armijo condition.

    Returns:
        (s, P(u - s g), cost breakdown at the new control)
    """
    s = s_init
    for j in range(max_backtracks + 1):
        trial = project_box(ControlVector(u.values - s * g), bounds)
        step_sq = model.norm(trial.values - u.values) ** 2
        cost = model.evaluate_cost(trial)
        if cost.total <= cost_u - c_armijo / s * step_sq:
            logger.debug(f"armijo: accepted s={s:g} after {j} backtracks")
            return s, trial, cost
        s *= shrink
    raise LineSearchError(f"Armijo line search failed after {max_backtracks} backtracks")


def projected_gradient(u0: ControlVector, model: ModelInterface, bounds: BoxBounds,
                       settings: OptimizerSettings = None) -> OptimizationResult:
    """Minimize the reduced cost of ``model`` over the box, starting from an admissible u0."""
    settings = settings or OptimizerSettings()
    if not bounds.contains(u0):
        raise ValueError("initial control violates the box bounds")

    u = u0
    cost = model.evaluate_cost(u)
    g = model.evaluate_gradient(u)
    g_norm = model.norm(g)
    threshold = settings.rel_tol * g_norm + settings.abs_tol
    history: List[IterationRecord] = []
    flag = MAX_ITERATIONS

    for k in range(settings.k_max + 1):
        logger.info(f"iteration {k}: J={cost.total:.6e} |g|={g_norm:.6e}")
        if g_norm < threshold:
            history.append(IterationRecord(k, cost.total, g_norm, None, cost))
            flag = CONVERGED
            break
        if k == settings.k_max:
            history.append(IterationRecord(k, cost.total, g_norm, None, cost))
            break
        try:
            s, u_new, cost_new = armijo_search(
                u, g, model, bounds, cost.total, settings.s_init, settings.shrink,
                settings.c_armijo, settings.max_backtracks,
            )
        except LineSearchError as exc:
            logger.warning(f"iteration {k}: {exc}; returning the current iterate")
            history.append(IterationRecord(k, cost.total, g_norm, None, cost))
            flag = LINE_SEARCH_FAILED
            break
        history.append(IterationRecord(k, cost.total, g_norm, s, cost))
        u, cost = u_new, cost_new
        g = model.evaluate_gradient(u)
        g_norm = model.norm(g)

    return OptimizationResult(u, history, flag)
