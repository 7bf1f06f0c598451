import numpy as np
import pytest

from src.control.control_vector import ControlVector
from src.control.shapes import ControlShapes
from src.mesh.adaptive_mesh import initial_mesh
from src.optimization.cost import CostWeights
from src.optimization.models import FullOrderModel
from src.pipeline.checks import directional_fd_error
from src.reduction.deim import build_deim, nonlinearity_snapshots
from src.reduction.pod import SnapshotSet, build_common_space, compute_basis
from src.reduction.rom import ReducedOrderModel, build_rom, rom_solve
from src.solvers.tracking import trajectory_error
from src.utils.errors import FieldMismatchError


def _rom(snaps, shapes, params, cross3, desired, use_deim=False):
    _, fields = build_common_space(snaps)
    basis = compute_basis(fields, snaps.weights, len(fields))
    deim = build_deim(nonlinearity_snapshots(fields), basis.ell) if use_deim else None
    return build_rom(basis, deim, shapes, params, cross3, desired.phi, desired.final)


@pytest.fixture
def desired_snaps(desired, params):
    return SnapshotSet.from_trajectory(desired.phi, params.dt)


@pytest.fixture
def rom_ops(desired_snaps, shapes, params, cross3, desired):
    return _rom(desired_snaps, shapes, params, cross3, desired)


def test_rom_reproduces_its_snapshot_trajectory(rom_ops, desired, params):
    u_star = ControlVector.constant(30.0, 1, params.n_steps)
    traj = rom_solve(u_star, rom_ops)
    assert traj.n_steps == params.n_steps
    assert len(traj.newton_iterations) == params.n_steps
    assert trajectory_error(traj.lift(rom_ops.basis), desired.phi, params.dt) <= 1e-6


def test_rom_at_desired_control_has_only_control_cost(rom_ops, params):
    weights = CostWeights()
    model = ReducedOrderModel(rom_ops, weights)
    u_star = ControlVector.constant(30.0, 1, params.n_steps)
    cost = model.evaluate_cost(u_star)
    assert cost.tracking + cost.terminal <= 1e-8 * cost.control
    lifted = model.lifted(u_star)
    assert len(lifted) == params.n_steps + 1
    assert all(f.mesh == rom_ops.basis.mesh for f in lifted)


@pytest.mark.parametrize("use_deim", [False, True])
def test_rom_gradient_matches_central_differences(desired_snaps, shapes, params, cross3,
                                                  desired, use_deim, rng):
    ops = _rom(desired_snaps, shapes, params, cross3, desired, use_deim)
    assert ops.uses_deim == use_deim
    model = ReducedOrderModel(ops, CostWeights())
    u = ControlVector(5.0 + 10.0 * rng.random((1, params.n_steps + 1)))
    d = rng.standard_normal(u.values.shape)
    assert directional_fd_error(model, u, d) <= 1e-5


def test_rom_cost_matches_full_order_when_state_is_in_span(desired_snaps, shapes, params,
                                                          cross3, desired, tracking):
    weights = CostWeights()
    fom = FullOrderModel(cross3, shapes, params, weights, tracking, adapt=False)
    u = ControlVector.constant(12.0, 1, params.n_steps)
    state = SnapshotSet.from_trajectory(fom.solve(u).phi, params.dt, "state")
    ops = _rom(desired_snaps.extended(state), shapes, params, cross3, desired)
    rom = ReducedOrderModel(ops, weights)
    np.testing.assert_allclose(rom.evaluate_cost(u).total, fom.evaluate_cost(u).total,
                               rtol=1e-4)


def test_two_shape_rom_gradient(desired_snaps, params, cross3, desired, rng):
    shapes = ControlShapes(["sin_cos_vortex", "double_vortex"])
    ops = _rom(desired_snaps, shapes, params, cross3, desired)
    assert len(ops.convection) == 2
    model = ReducedOrderModel(ops, CostWeights())
    u = ControlVector(10.0 * rng.random((2, params.n_steps + 1)))
    d = rng.standard_normal(u.values.shape)
    assert directional_fd_error(model, u, d) <= 1e-5


def test_reduced_operators_are_consistent(rom_ops):
    np.testing.assert_allclose(rom_ops.stiffness, rom_ops.stiffness.T)
    for cr in rom_ops.convection:
        np.testing.assert_allclose(cr, -cr.T, atol=1e-12)
    assert np.all(np.linalg.eigvalsh(rom_ops.coupling) >= -1e-10)
    np.testing.assert_array_equal(rom_ops.mass, np.eye(rom_ops.ell))


def test_rom_input_validation(rom_ops, desired_snaps, shapes, params, cross3, desired):
    with pytest.raises(ValueError):
        rom_solve(ControlVector.zeros(1, params.n_steps + 1), rom_ops)
    with pytest.raises(ValueError):
        rom_solve(ControlVector.zeros(2, params.n_steps), rom_ops)
    with pytest.raises(ValueError):
        build_rom(rom_ops.basis, None, shapes, params, cross3, desired.phi[:-1], desired.final)
    other = build_deim(np.random.default_rng(0).standard_normal(
        (initial_mesh(2).num_vertices, 3)), 2)
    with pytest.raises(FieldMismatchError):
        build_rom(rom_ops.basis, other, shapes, params, cross3, desired.phi, desired.final)
