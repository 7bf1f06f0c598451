import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).resolve().parents[1]))

from src.control.control_vector import ControlVector  # noqa: E402
from src.control.shapes import ControlShapes  # noqa: E402
from src.fem.fields import FEField  # noqa: E402
from src.mesh.adaptive_mesh import initial_mesh  # noqa: E402
from src.pipeline.checks import small_params  # noqa: E402
from src.pipeline.targets import cross_profile  # noqa: E402
from src.solvers.state_solver import solve_trajectory  # noqa: E402
from src.solvers.tracking import TrackingFunctional  # noqa: E402


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def mesh3():
    return initial_mesh(3)


@pytest.fixture
def params():
    """Five default-sized time steps with tight Newton tolerances."""
    return small_params(5)


@pytest.fixture
def shapes():
    return ControlShapes(["sin_cos_vortex"])


@pytest.fixture
def cross3(mesh3, params):
    return FEField.interpolate(cross_profile(0.3, 0.1, params.epsilon), mesh3)


@pytest.fixture
def desired(cross3, shapes, params):
    """Reachable desired trajectory: the state at a constant control of 30."""
    u_d = ControlVector.constant(30.0, shapes.m, params.n_steps)
    return solve_trajectory(cross3, u_d, shapes, params)


@pytest.fixture
def tracking(desired, params):
    return TrackingFunctional(desired.phi, desired.final, 20.0, 20.0, params.dt)
