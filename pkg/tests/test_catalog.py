import numpy as np
import pytest

from app.models import catalog
from app.models.family import FamilyMember, WeightedFamily


def test_flat_model_needs_even_dimension():
    with pytest.raises(ValueError):
        catalog.flat(dim=3)


def test_build_manifold_rejects_unknown_ids():
    with pytest.raises(KeyError):
        catalog.build_manifold("klein_bottle")
    with pytest.raises(KeyError):
        catalog.build_submanifold("helix")
    with pytest.raises(KeyError):
        catalog.build_isometry("reflection")


def test_sphere_chart_round_trip():
    u = np.array([0.3, -0.7])
    x = catalog.sphere_embedding(u)
    assert np.linalg.norm(x) == pytest.approx(1.0)
    assert np.allclose(catalog.sphere_chart(x)[0], u)


def test_latitude_curve_sits_at_its_polar_angle():
    curve = catalog.sphere_cap_curve(1.2, resolution=8)
    heights = catalog.sphere_embedding(curve.grid_points)[:, 2]
    assert np.allclose(heights, np.cos(1.2))


def test_unitary_maps_preserve_the_standard_form():
    omega = np.array(catalog.flat(dim=4).omega(np.zeros(4)))
    for chart_map in (catalog.unitary_r4(0.3, -1.1), catalog.u2_mix(0.7), catalog.diagonal_rotation(2.0)):
        matrix = np.column_stack([chart_map(e) for e in np.eye(4)])
        assert np.allclose(matrix.T @ omega @ matrix, omega)
        assert np.allclose(matrix.T @ matrix, np.eye(4))


def test_sphere_rotation_is_an_isometry_of_the_round_metric():
    rotate = catalog.sphere_rotation(alpha=0.4, beta=0.9)
    model = catalog.sphere2()
    p, q = np.array([0.2, 0.1]), np.array([-0.3, 0.5])
    before = model.distance_field(p, q[None, :])[0]
    after = model.distance_field(rotate(p), rotate(q)[None, :])[0]
    assert after == pytest.approx(before, abs=1e-12)


def test_perturbed_torus_is_invariant_only_without_perturbation():
    action = catalog.DiagonalCircleAction()
    torus = catalog.lagrangian_torus_r4(resolution=6)
    values = [action.moment(x) for x in torus.grid_points]
    assert np.allclose(values, 1.0)
    bumpy = catalog.perturbed_torus(a1=0.1, resolution=6)
    values = [action.moment(x) for x in bumpy.grid_points]
    assert np.ptp(values) > 0.1


def test_moment_map_generates_the_action():
    action = catalog.DiagonalCircleAction()
    p = np.array([0.3, -0.2, 0.5, 0.1])
    omega = catalog.flat(dim=4).omega(p)
    h = 1e-6
    d_moment = np.array([(action.moment(p + h * e) - action.moment(p - h * e)) / (2 * h) for e in np.eye(4)])
    # i_{v} omega = dJ
    assert np.allclose(action.generator(p) @ omega, d_moment, atol=1e-8)
    moved = action.element(1e-6)(p)
    assert np.allclose((moved - p) / 1e-6, action.generator(p), atol=1e-5)


def test_group_family_has_equal_weights():
    base = catalog.lagrangian_torus_r4(resolution=4, label="torus")
    family = WeightedFamily.from_group(base, catalog.DiagonalCircleAction().sample(3))
    assert len(family) == 3
    assert np.allclose(family.weights, 1.0 / 3.0)
    assert family.dim == 2


def test_family_validation():
    plane = catalog.affine_lagrangian(0.0, label="a")
    other = catalog.affine_lagrangian(0.1, label="b")
    with pytest.raises(ValueError):
        WeightedFamily([FamilyMember(0.5, plane), FamilyMember(0.4, other)])
    with pytest.raises(ValueError):
        WeightedFamily([FamilyMember(1.5, plane), FamilyMember(-0.5, other)])
    with pytest.raises(ValueError):
        WeightedFamily([FamilyMember(0.5, plane), FamilyMember(0.5, catalog.point([0, 0, 0, 0]))])
    with pytest.raises(ValueError):
        WeightedFamily([])


def test_family_order_does_not_depend_on_input_order():
    a = catalog.affine_lagrangian(0.0, label="a")
    b = catalog.affine_lagrangian(0.1, label="b")
    forward = WeightedFamily.from_pairs([(0.25, a), (0.75, b)])
    backward = WeightedFamily.from_pairs([(0.75, b), (0.25, a)])
    assert [m.label for m in forward] == [m.label for m in backward] == ["a", "b"]


def test_refined_grid_contains_the_coarse_nodes():
    circle = catalog.circle_flat(1.0, resolution=8)
    fine = circle.refined()
    assert fine.node_count == 16
    plane = catalog.affine_lagrangian(0.0, resolution=5)
    assert plane.refined().node_count == 81
