import numpy as np
import pytest

from src.control.control_vector import ControlVector
from src.control.gradient import reduced_gradient
from src.control.shapes import apply_B
from src.fem.assembly import assemble_convection
from src.fem.fields import FEField
from src.fem.operators import mesh_operators
from src.mesh.adaptive_mesh import MeshSettings, initial_mesh
from src.optimization.cost import CostWeights
from src.optimization.models import FullOrderModel
from src.pipeline.checks import directional_fd_error, fd_step
from src.solvers.adjoint_solver import solve_adjoint
from src.solvers.state_solver import CHParams, solve_trajectory
from src.solvers.tracking import TrackingFunctional, misfit
from src.utils.errors import FieldMismatchError


@pytest.fixture
def model(cross3, shapes, params, tracking):
    return FullOrderModel(cross3, shapes, params, CostWeights(), tracking, adapt=False)


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_gradient_matches_central_differences(model, params, seed):
    rng = np.random.default_rng(seed)
    u = ControlVector(5.0 + 10.0 * rng.random((1, params.n_steps + 1)))
    d = rng.standard_normal(u.values.shape)
    assert directional_fd_error(model, u, d) <= 1e-5


def test_gradient_with_two_shapes(cross3, params, tracking, rng):
    from src.control.shapes import ControlShapes

    shapes = ControlShapes(["sin_cos_vortex", "double_vortex"])
    model = FullOrderModel(cross3, shapes, params, CostWeights(), tracking, adapt=False)
    u = ControlVector(10.0 * rng.random((2, params.n_steps + 1)))
    d = rng.standard_normal(u.values.shape)
    assert directional_fd_error(model, u, d) <= 1e-5


def test_gradient_across_remeshing(cross3, shapes, params, rng):
    settings = MeshSettings(root_level=3, cadence=2, max_level=5, h_min_guard=None)
    u_d = ControlVector.constant(30.0, 1, params.n_steps)
    desired = solve_trajectory(cross3, u_d, shapes, params, adapt=True, mesh_settings=settings)
    tracking = TrackingFunctional(desired.phi, desired.final, 20.0, 20.0, params.dt)
    model = FullOrderModel(cross3, shapes, params, CostWeights(), tracking, adapt=True,
                           mesh_settings=settings)
    u = ControlVector(10.0 + rng.random((1, params.n_steps + 1)))
    d = rng.standard_normal(u.values.shape)
    h = 1e-3
    ids = model.solve(u).mesh_ids
    assert model.solve(u).remesh_steps
    for sign in (1.0, -1.0):
        if model.solve(ControlVector(u.values + sign * h * d)).mesh_ids != ids:
            pytest.skip("remeshing decision changed under the perturbation")
    assert directional_fd_error(model, u, d, h) <= 1e-4


def test_initial_state_gradient(cross3, shapes, params, tracking, rng):
    u = ControlVector.constant(10.0, 1, params.n_steps)
    weights = CostWeights()

    def cost(phi0):
        m = FullOrderModel(phi0, shapes, params, weights, tracking, adapt=False)
        return m.evaluate_cost(u).total

    model = FullOrderModel(cross3, shapes, params, weights, tracking, adapt=False)
    adj = model.adjoint(u)
    g = adj.initial_state_gradient().coeffs
    delta = rng.standard_normal(cross3.mesh.num_vertices)
    h = 1e-4
    plus = cost(FEField(cross3.coeffs + h * delta, cross3.mesh))
    minus = cost(FEField(cross3.coeffs - h * delta, cross3.mesh))
    fd = (plus - minus) / (2.0 * h)
    np.testing.assert_allclose(g @ delta, fd, rtol=1e-5)


def test_adjoint_terminal_and_final_state(model, params, tracking):
    u = ControlVector.constant(10.0, 1, params.n_steps)
    traj = model.solve(u)
    adj = model.adjoint(u)
    assert adj.mesh_ids == traj.mesh_ids
    np.testing.assert_allclose(adj.q[0].coeffs, 0.0)
    expected = -tracking.beta2 * misfit(traj.final, tracking.terminal)[1]
    np.testing.assert_allclose(adj.terminal.coeffs, expected)


def test_zero_misfit_gives_pure_control_gradient(cross3, shapes, params, desired, tracking):
    u_d = ControlVector.constant(30.0, 1, params.n_steps)
    model = FullOrderModel(cross3, shapes, params, CostWeights(gamma=1e-4), tracking)
    g = model.evaluate_gradient(u_d)
    np.testing.assert_allclose(g, 1e-4 * u_d.values, rtol=1e-6, atol=1e-12)


def test_mismatched_inputs_are_rejected(model, params, shapes, tracking):
    u = ControlVector.constant(10.0, 1, params.n_steps)
    traj = model.solve(u)
    with pytest.raises(FieldMismatchError):
        solve_adjoint(traj, ControlVector.zeros(1, params.n_steps + 2), tracking, shapes, params)
    adj = model.adjoint(u)
    with pytest.raises(FieldMismatchError):
        reduced_gradient(ControlVector.zeros(1, params.n_steps - 1), traj, adj, shapes, 1e-4)


def test_fd_step_scales_with_the_control():
    assert fd_step(ControlVector.constant(-9.0, 1, 2)) == pytest.approx(1e-3)
    assert fd_step(ControlVector.zeros(1, 2)) == pytest.approx(1e-4)


@pytest.fixture
def off_target(cross3, shapes, params):
    u = ControlVector.constant(10.0, 1, params.n_steps)
    return u, solve_trajectory(cross3, u, shapes, params)


def test_adjoint_is_linear_in_the_tracking_weights(off_target, desired, shapes, params):
    u, traj = off_target
    single = TrackingFunctional(desired.phi, desired.final, 20.0, 5.0, params.dt)
    double = TrackingFunctional(desired.phi, desired.final, 40.0, 10.0, params.dt)
    a = solve_adjoint(traj, u, single, shapes, params)
    b = solve_adjoint(traj, u, double, shapes, params)
    for k in range(params.n_steps + 1):
        scale = max(np.abs(a.p[k].coeffs).max(), 1e-300)
        np.testing.assert_allclose(b.p[k].coeffs, 2.0 * a.p[k].coeffs, rtol=1e-10,
                                   atol=1e-12 * scale)
        np.testing.assert_allclose(b.q[k].coeffs, 2.0 * a.q[k].coeffs, rtol=1e-10,
                                   atol=1e-12 * scale)
    np.testing.assert_allclose(b.terminal.coeffs, 2.0 * a.terminal.coeffs, rtol=1e-12)


def test_zero_tracking_weights_give_zero_adjoint(off_target, desired, shapes, params):
    u, traj = off_target
    tracking = TrackingFunctional(desired.phi, desired.final, 0.0, 0.0, params.dt)
    adj = solve_adjoint(traj, u, tracking, shapes, params)
    for p, q in zip(adj.p, adj.q):
        np.testing.assert_array_equal(p.coeffs, 0.0)
        np.testing.assert_array_equal(q.coeffs, 0.0)
    np.testing.assert_array_equal(adj.terminal.coeffs, 0.0)


def test_adjoint_matches_dense_space_time_transpose(shapes, rng):
    mesh = initial_mesh(1)
    n = mesh.num_vertices
    params = CHParams(T=2 * 2.5e-5, newton_atol=1e-12, newton_rtol=1e-14)
    dt, s_e = params.dt, params.sigma_over_eps
    phi0 = FEField(rng.uniform(-0.9, 0.9, n), mesh)
    u = ControlVector(np.array([[20.0, 35.0, 50.0]]))
    traj = solve_trajectory(phi0, u, shapes, params)
    desired = [FEField(rng.uniform(-1.0, 1.0, n), mesh) for _ in range(3)]
    terminal = FEField(rng.uniform(-1.0, 1.0, n), mesh)
    tracking = TrackingFunctional(desired, terminal, 20.0, 5.0, dt)

    ops = mesh_operators(mesh)
    M, K, m = ops.mass.toarray(), ops.stiffness.toarray(), ops.lumped
    zero = np.zeros((n, n))

    def step_jacobian(k):
        C = assemble_convection(mesh, apply_B(u, k, shapes, mesh)).toarray()
        phi = traj.phi[k].coeffs
        return np.block([[M + dt * C, dt * params.b * K],
                         [params.sigma_eps * K + np.diag(3.0 * s_e * m * phi ** 2), -M]])

    # derivative of the step-2 residual with respect to (phi_1, mu_1)
    previous = np.block([[-M, zero], [-np.diag(s_e * m), zero]])
    A = np.block([[step_jacobian(1), np.zeros((2 * n, 2 * n))], [previous, step_jacobian(2)]])
    w = [dt / 2.0, dt, dt / 2.0]
    g = [20.0 * w[k] * M @ (traj.phi[k].coeffs - desired[k].coeffs) for k in range(3)]
    g[2] = g[2] + 5.0 * M @ (traj.phi[2].coeffs - terminal.coeffs)
    rhs = -np.concatenate([g[1], np.zeros(n), g[2], np.zeros(n)])
    lam = np.linalg.solve(A.T, rhs)
    p1, q1, p2, q2 = np.split(lam, 4)
    p0 = -g[0] + M @ p1 + s_e * m * q1

    adj = solve_adjoint(traj, u, tracking, shapes, params)
    for got, ref in ((adj.p[2], p2), (adj.q[2], q2), (adj.p[1], p1), (adj.q[1], q1),
                     (adj.p[0], p0)):
        np.testing.assert_allclose(got.coeffs, ref, rtol=1e-10, atol=1e-10 * np.abs(ref).max())
