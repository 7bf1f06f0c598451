import numpy as np
import pytest

from src.control.control_vector import BoxBounds, ControlVector
from src.optimization.cost import CostBreakdown
from src.optimization.models import ModelInterface
from src.optimization.projected_gradient import (
    CONVERGED,
    LINE_SEARCH_FAILED,
    MAX_ITERATIONS,
    OptimizerSettings,
    armijo_search,
    projected_gradient,
)

DT = 0.1
N_STEPS = 10


class QuadraticModel(ModelInterface):
    """J(u) = 0.5 * scale * ||u - center||^2 in the trapezoidal control norm."""

    def __init__(self, center: np.ndarray, scale: float = 1.0):
        self.center = center
        self.scale = scale
        self.dt = DT
        self.calls = 0

    def evaluate_cost(self, u):
        self.calls += 1
        r = u.values - self.center
        return CostBreakdown(0.5 * self.scale * self.norm(r) ** 2, 0.0, 0.0)

    def evaluate_gradient(self, u):
        return self.scale * (u.values - self.center)


class AscentModel(QuadraticModel):
    """Gradient of the wrong sign, so no step can decrease the cost."""

    def evaluate_gradient(self, u):
        return -super().evaluate_gradient(u)


@pytest.fixture
def center():
    rng = np.random.default_rng(7)
    return 10.0 + 20.0 * rng.random((1, N_STEPS + 1))


def test_interior_minimum_converges_with_monotone_cost(center):
    model = QuadraticModel(center, scale=0.6)
    u0 = ControlVector.zeros(1, N_STEPS)
    result = projected_gradient(u0, model, BoxBounds(0.0, 50.0), OptimizerSettings(k_max=50))
    assert result.flag == CONVERGED and result.converged
    costs = [r.cost for r in result.history]
    assert all(b <= a for a, b in zip(costs, costs[1:]))
    assert result.history[-1].step is None
    assert result.history[-1].grad_norm < 0.01 * result.history[0].grad_norm + 0.01
    np.testing.assert_allclose(result.control.values, center, rtol=0.02)


def test_active_bounds_reach_projection_of_minimizer(center):
    model = QuadraticModel(center)
    bounds = BoxBounds(0.0, 15.0)
    result = projected_gradient(ControlVector.zeros(1, N_STEPS), model, bounds,
                                OptimizerSettings(k_max=4))
    np.testing.assert_allclose(result.control.values, np.clip(center, 0.0, 15.0))
    assert bounds.contains(result.control)
    # the unprojected gradient stays nonzero on the active set
    assert result.flag == MAX_ITERATIONS
    assert len(result.history) == 5


def test_line_search_failure_returns_current_iterate(center):
    model = AscentModel(center)
    u0 = ControlVector.constant(5.0, 1, N_STEPS)
    result = projected_gradient(u0, model, BoxBounds(0.0, 50.0),
                                OptimizerSettings(max_backtracks=3))
    assert result.flag == LINE_SEARCH_FAILED
    assert len(result.history) == 1
    assert result.history[-1].step is None
    np.testing.assert_array_equal(result.control.values, u0.values)


def test_armijo_backtracks_until_sufficient_decrease():
    center = np.full((1, N_STEPS + 1), 10.0)
    model = QuadraticModel(center, scale=4.0)
    u = ControlVector.zeros(1, N_STEPS)
    g = model.evaluate_gradient(u)
    s, trial, cost = armijo_search(u, g, model, BoxBounds(0.0, 50.0),
                                   model.evaluate_cost(u).total)
    assert s == 0.25
    np.testing.assert_allclose(trial.values, center)
    assert cost.total == pytest.approx(0.0, abs=1e-20)


def test_inadmissible_start_is_rejected(center):
    with pytest.raises(ValueError):
        projected_gradient(ControlVector.constant(-1.0, 1, N_STEPS), QuadraticModel(center),
                           BoxBounds(0.0, 50.0))


def test_zero_iterations_records_initial_point(center):
    model = QuadraticModel(center)
    result = projected_gradient(ControlVector.zeros(1, N_STEPS), model, BoxBounds(0.0, 50.0),
                                OptimizerSettings(k_max=0))
    assert result.flag == MAX_ITERATIONS
    assert [r.k for r in result.history] == [0]
    assert result.final_cost == model.evaluate_cost(ControlVector.zeros(1, N_STEPS)).total


@pytest.mark.parametrize("kwargs", [
    {"k_max": -1}, {"s_init": 0.0}, {"shrink": 1.0}, {"c_armijo": 0.0},
    {"max_backtracks": -1}, {"rel_tol": -1.0},
])
def test_settings_validation(kwargs):
    with pytest.raises(ValueError):
        OptimizerSettings(**kwargs)
