import logging

import numpy as np
import pytest

from src.fem.fields import FEField
from src.fem.operators import mesh_operators
from src.mesh.adaptive_mesh import refine_coarsen
from src.reduction.pod import (
    Snapshot,
    SnapshotSet,
    build_common_space,
    compute_basis,
    compute_basis_from_snapshots,
    projection_error,
)
from src.utils.errors import FieldMismatchError, PODError


def _mode(i):
    a, b = 1 + i % 3, 1 + i // 3
    return lambda x, y: np.cos(a * np.pi * x) * np.sin(b * np.pi * y) + 0.1 * i * x


@pytest.fixture
def snaps(mesh3, rng):
    """Seven snapshots spread over four different adapted meshes."""
    meshes = [mesh3]
    for _ in range(3):
        meshes.append(refine_coarsen(mesh3, rng.random(mesh3.num_triangles), 0.3, 0.0, None, 6))
    shots = [Snapshot(FEField.interpolate(_mode(i), meshes[i % 4]), 0.5 + rng.random())
             for i in range(7)]
    return SnapshotSet(shots, "test")


def test_common_space_refines_every_snapshot_mesh(snaps):
    reference, fields = build_common_space(snaps)
    assert len({s.mesh_id for s in snaps.snapshots}) >= 2
    assert all(reference.refines(m) for m in snaps.meshes)
    assert all(f.mesh == reference for f in fields)


@pytest.mark.parametrize("ell", [1, 3, 7])
def test_projection_error_equals_eigenvalue_tail(snaps, ell):
    basis = compute_basis_from_snapshots(snaps, ell)
    _, fields = build_common_space(snaps)
    err = projection_error(fields, snaps.weights, basis)
    total = float(np.sum(basis.eigenvalues))
    assert abs(err.direct - err.tail) / total <= 1e-10
    # fields on their own meshes give the same error after exact prolongation
    again = projection_error(snaps.fields, snaps.weights, basis)
    np.testing.assert_allclose(again.direct, err.direct, rtol=1e-9, atol=1e-14 * total)


def test_modes_are_mass_orthonormal(snaps):
    basis = compute_basis_from_snapshots(snaps, 5)
    M = mesh_operators(basis.mesh).mass
    np.testing.assert_allclose(basis.modes.T @ (M @ basis.modes), np.eye(5), atol=1e-10)


def test_eigenvalues_sorted_and_nonnegative(snaps):
    basis = compute_basis_from_snapshots(snaps, 4)
    lam = basis.eigenvalues
    assert lam.shape == (7,)
    assert np.all(lam >= 0.0)
    assert np.all(np.diff(lam) <= 0.0)
    np.testing.assert_allclose(basis.tail_sum, lam[4:].sum())


def test_lift_and_project_are_inverse_on_coefficients(snaps, rng):
    basis = compute_basis_from_snapshots(snaps, 4)
    a = rng.standard_normal(4)
    np.testing.assert_allclose(basis.project(basis.lift(a)), a, atol=1e-12)
    assert basis.mode(0).mesh == basis.mesh


def test_basis_is_invariant_under_snapshot_order(snaps):
    order = [3, 0, 6, 1, 5, 2, 4]
    shuffled = SnapshotSet([snaps.snapshots[i] for i in order])
    a = compute_basis_from_snapshots(snaps, 3)
    b = compute_basis_from_snapshots(shuffled, 3)
    np.testing.assert_allclose(a.eigenvalues, b.eigenvalues, rtol=1e-10, atol=1e-14)
    f = snaps.fields[2]
    np.testing.assert_allclose(a.lift(a.project(f)).coeffs, b.lift(b.project(f)).coeffs,
                               atol=1e-9)


def test_ell_above_snapshot_count_raises(snaps):
    with pytest.raises(PODError):
        compute_basis_from_snapshots(snaps, 8)


def test_ell_above_rank_truncates_with_warning(mesh3, caplog):
    f = FEField.interpolate(_mode(1), mesh3)
    fields = [f, FEField(2.0 * f.coeffs, mesh3), FEField(-f.coeffs, mesh3)]
    with caplog.at_level(logging.WARNING, logger="src.reduction.pod"):
        basis = compute_basis(fields, np.ones(3), 3)
    assert basis.ell == 1
    assert "numerical rank" in caplog.text


def test_snapshot_set_validation(mesh3):
    f = FEField.constant(1.0, mesh3)
    with pytest.raises(PODError):
        SnapshotSet([Snapshot(f, 1.0)])
    with pytest.raises(PODError):
        SnapshotSet([Snapshot(f, 1.0), Snapshot(f, 0.0)])


def test_compute_basis_input_validation(snaps, mesh3):
    with pytest.raises(PODError):
        compute_basis([], np.ones(0), 1)
    with pytest.raises(FieldMismatchError):
        compute_basis(snaps.fields, snaps.weights, 2)
    same = [FEField.interpolate(_mode(i), mesh3) for i in range(3)]
    with pytest.raises(PODError):
        compute_basis(same, np.ones(2), 1)


def test_trajectory_snapshots_use_trapezoid_weights(desired, params):
    snaps = SnapshotSet.from_trajectory(desired.phi, params.dt)
    assert len(snaps) == params.n_steps + 1
    np.testing.assert_allclose(snaps.weights[[0, -1]], 0.5 * params.dt)
    np.testing.assert_allclose(snaps.weights.sum(), params.T)
    both = snaps.extended(SnapshotSet.from_trajectory(desired.phi, params.dt, "state"))
    assert len(both) == 2 * len(snaps) and both.source == "desired+state"
