import numpy as np
import pytest

from app.models import catalog
from app.models.family import WeightedFamily

C = 0.01


@pytest.fixture
def planes():
    return catalog.affine_lagrangian(C, label="upper"), catalog.affine_lagrangian(0.0, label="middle")


def test_phi_is_a_translation_between_parallel_planes(flat4, planes):
    N_g, N = planes
    p = np.array([0.1, 0.2, C + 0.03, -0.02])
    image = flat4.slices.phi_g(N_g, N, p)
    assert np.allclose(image, [0.1, 0.2, 0.03, -0.02], atol=1e-10)
    decomposition = flat4.slices.decompose(N_g, N, p)
    assert np.allclose(decomposition.base_point, [0.1, 0.2, C, 0.0], atol=1e-10)
    assert np.allclose(decomposition.lift_point, [0.1, 0.2, 0.0, 0.0], atol=1e-10)


def test_phi_inverse(flat4, planes):
    N_g, N = planes
    q = np.array([-0.3, 0.05, 0.02, 0.01])
    p = flat4.slices.phi_g_inverse(N_g, N, q)
    assert np.allclose(p, q + np.array([0.0, 0.0, C, 0.0]), atol=1e-9)
    assert flat4.slices.vertical_radius(N_g, N, q) == pytest.approx(np.hypot(0.02, 0.01), abs=1e-9)


def test_pushforward_of_a_translation_is_the_identity(flat4, planes, rng):
    N_g, N = planes
    p = np.array([0.1, -0.1, C + 0.02, 0.01])
    X = rng.standard_normal(4)
    pushed = flat4.slices.pushforward_phi(N_g, N, p, X)
    assert np.allclose(pushed, X, atol=1e-7)
    assert np.allclose(flat4.slices.phi_jacobian(N_g, N, p), np.eye(4), atol=1e-7)


def test_pulled_back_form_of_a_translation_is_omega(flat4, planes):
    N_g, N = planes
    q = np.array([0.0, 0.1, 0.02, 0.0])
    assert np.allclose(flat4.slices.omega_g_at(N_g, N, q), flat4.model.omega(q), atol=1e-7)
    X, Y = np.eye(4)[0], np.eye(4)[2]
    assert flat4.slices.omega_g_at(N_g, N, q, X, Y) == pytest.approx(1.0, abs=1e-7)


def test_pulled_back_form_respects_the_radius(flat4, planes):
    from app.core.exceptions import OutsideTube

    N_g, N = planes
    with pytest.raises(OutsideTube):
        flat4.slices.omega_g_at(N_g, N, np.array([0.0, 0.0, 0.2, 0.0]), radius=0.1)


def test_nondegeneracy_certificate_for_parallel_planes(flat4):
    family = WeightedFamily.from_pairs(
        [(0.5, catalog.affine_lagrangian(C, label="upper")), (0.5, catalog.affine_lagrangian(-C, label="lower"))]
    )
    N = catalog.affine_lagrangian(0.0, label="middle")
    certificate = flat4.slices.nondegeneracy_certificate(family, N, np.array([0.1, 0.0, 0.01, 0.0]))
    assert certificate == pytest.approx(1.0, abs=1e-6)


def test_bundle_splitting_of_a_plane(flat4):
    plane = catalog.affine_lagrangian(0.0)
    q = np.array([0.1, 0.2, 0.3, 0.0])
    splitting = flat4.slices.bundle_splitting(plane, q, with_lc=True)
    assert splitting.distance == pytest.approx(0.3)
    assert np.allclose(splitting.foot, [0.1, 0.2, 0.0, 0.0], atol=1e-12)
    vertical = flat4.kernel.subspace_basis(q, np.eye(4)[:, 2:])
    assert flat4.kernel.subspace_distance(splitting.vert, vertical) == pytest.approx(0.0, abs=1e-9)
    assert splitting.hor.dim == 2
    assert splitting.vert_avert_distance == pytest.approx(0.0, abs=1e-9)
    assert flat4.kernel.subspace_distance(splitting.ahor, splitting.lc) == pytest.approx(0.0, abs=1e-6)


def test_lift_onto_a_normal_section_is_immediate(flat4):
    family = WeightedFamily.from_pairs(
        [(0.5, catalog.affine_lagrangian(C, label="upper")), (0.5, catalog.affine_lagrangian(-C, label="lower"))]
    )
    N, _ = flat4.averaging.weinstein_average(family)
    reference = family.members[0].submanifold
    s0 = reference.grid_parameters[7]
    lift = flat4.slices.lift_to_section(reference, N, reference.grid_points[7], s0)
    assert lift.iterations == 0
    assert np.allclose(lift.parameter, s0)
    other = family.members[1].submanifold
    lift = flat4.slices.lift_to_section(other, N, other.grid_points[7])
    assert np.allclose(lift.point[:2], other.grid_points[7][:2], atol=1e-8)
    assert abs(lift.point[2]) < 1e-8
