import math

import numpy as np
import pytest

from app.core.exceptions import DomainError
from app.models import catalog
from app.models.checks import CheckStatus, lower_bound_check, upper_bound_check
from app.models.family import WeightedFamily
from app.services.bound_verifier import VerifierReport, triangle_lower_bound

# C, A, B with P_C = span(CB) and P_A = span(AB); delta is close to pi/6
TRIANGLE = (np.array([0.1, 0.0]), np.array([-0.1611, 0.4522]), np.array([0.0, 0.0]))


def _parallel_planes(c: float) -> WeightedFamily:
    return WeightedFamily.from_pairs(
        [(0.5, catalog.affine_lagrangian(c, label="upper")), (0.5, catalog.affine_lagrangian(-c, label="lower"))]
    )


def test_triangle_lower_bound_formula():
    assert triangle_lower_bound(0.0, 0.0) == pytest.approx(10.0 / 66.0)
    assert triangle_lower_bound(2.0, math.pi / 3) == pytest.approx((10.0 / 11.0) * 0.5 / 8.0)


def test_realizable_flat_triangle(flat2):
    A, B, C = TRIANGLE
    kernel = flat2.kernel
    P_A = kernel.subspace_basis(A, (B - A)[:, None])
    P_C = kernel.subspace_basis(C, (B - C)[:, None])
    instance, reason = flat2.verifier.triangle_instance(A, B, C, P_A, P_C)
    assert instance is not None, reason
    assert instance.delta == pytest.approx(math.pi / 6, abs=1e-3)
    assert instance.Ccal == pytest.approx(1.814, rel=1e-2)
    assert instance.d_CB == pytest.approx(0.480, abs=1e-3)
    checks = flat2.verifier.triangle_checks(instance)
    assert len(checks) == 4
    assert all(check.status == CheckStatus.PASS for check in checks)
    assert checks[0].bound == pytest.approx(0.1007, abs=1e-3)


def test_triangle_hypotheses_are_reported(flat2):
    A, B, C = TRIANGLE
    kernel = flat2.kernel
    P_A = kernel.subspace_basis(A, (B - A)[:, None])
    wrong = kernel.subspace_basis(C, np.array([[1.0], [0.0]]))
    instance, reason = flat2.verifier.triangle_instance(A, B, C, P_A, wrong)
    assert instance is None
    assert "P_C" in reason
    far = np.array([0.3, 0.0])
    instance, reason = flat2.verifier.triangle_instance(far, B, C, kernel.subspace_basis(far, (B - far)[:, None]), wrong)
    assert instance is None
    assert "d(C,A)" in reason


def test_triangle_bound_in_the_plane(flat2):
    report = flat2.verifier.verify_triangle_bound(trials=20)
    assert report.trials == 20
    assert not report.failures
    assert report.values["max_Ccal"] <= 2.0


@pytest.mark.slow
def test_triangle_bound_on_the_sphere(sphere):
    report = sphere.verifier.verify_triangle_bound(trials=10)
    assert report.trials > 0
    assert not report.failures


def test_triangle_subspace_dimension_must_fit(flat2):
    report = flat2.verifier.verify_triangle_bound(trials=5, subspace_dim=2)
    assert report.trials == 0
    assert report.notes


def test_tube_around_a_flat_line_is_exact(flat4):
    sub = catalog.line([1.0, 0.0, 0.0, 0.0])
    scaled, target, k = flat4.verifier.tube_shape_deviation(sub, np.array([0.2]), np.array([0.0, 1.0, 0.0, 0.0]), 0.1)
    assert k == 2
    assert np.allclose(scaled, target, atol=1e-9)
    report = flat4.verifier.verify_tube_shape_operator(sub, 0.1, trials=5)
    assert report.trials == 5
    assert report.status == CheckStatus.PASS


def test_tube_around_a_point_on_the_sphere(sphere):
    # the geodesic sphere of radius t has shape operator cot(t)
    sub = catalog.point([0.0, 0.0])
    t = 0.1
    scaled, target, k = sphere.verifier.tube_shape_deviation(sub, np.zeros(0), np.array([0.5, 0.0]), t)
    assert k == 1
    assert scaled[0, 0] == pytest.approx(t / math.tan(t), abs=1e-5)
    assert target[0, 0] == 1.0
    report = sphere.verifier.verify_tube_shape_operator(sub, t, trials=4)
    assert report.status == CheckStatus.PASS


def test_tube_radius_outside_the_range_is_rejected(flat4):
    report = flat4.verifier.verify_tube_shape_operator(catalog.line([1.0, 0.0, 0.0, 0.0]), 0.7, trials=3)
    assert report.rejections == 3
    assert not report.checks


def test_hessian_cross_terms_vanish_for_a_flat_plane(flat4):
    report = flat4.verifier.verify_hessian_cross(catalog.affine_lagrangian(0.0), 0.1, trials=10)
    assert report.trials == 10
    assert max(check.value for check in report.checks) < 1e-8
    assert report.status == CheckStatus.PASS


def test_hessian_cross_terms_near_a_latitude(sphere):
    report = sphere.verifier.verify_hessian_cross(catalog.sphere_cap_curve(1.2), 0.1, trials=6)
    assert report.trials == 6
    assert max(check.value for check in report.checks) < 1e-4


def test_pushforward_bounds_for_parallel_planes(flat4):
    family = _parallel_planes(5e-6)
    N, _ = flat4.averaging.weinstein_average(family)
    upper = family.members[1].submanifold
    assert upper.label == "upper"
    report = flat4.verifier.verify_pushforward_bounds(upper, N, 1e-5, trials=8)
    assert report.trials == 8
    assert not report.failures
    assert {instance.kind for instance in report.instances} == {
        "tangent",
        "almost_vertical",
        "strong_jacobi",
        "general",
    }
    assert max(instance.deviation for instance in report.instances) < 1e-6


def test_pushforward_bounds_need_small_epsilon(flat4):
    plane = catalog.affine_lagrangian(0.0)
    report = flat4.verifier.verify_pushforward_bounds(plane, plane, 1e-4, trials=4)
    assert report.rejections == 4
    assert not report.checks


def test_curve_growth_for_identical_members(flat4):
    plane = catalog.affine_lagrangian(0.0, label="a")
    family = WeightedFamily.from_pairs([(0.5, plane), (0.5, catalog.affine_lagrangian(0.0, label="b"))])
    N, _ = flat4.averaging.weinstein_average(family)
    report = flat4.verifier.verify_curve_growth(plane, N, 1e-6, np.array([0.0, 0.0]), np.array([0.05, 0.0]))
    assert report.values["length"] == pytest.approx(0.05)
    assert report.values["gap"] == pytest.approx(0.0, abs=1e-12)
    assert not report.failures
    assert report.notes


def test_curve_growth_for_parallel_planes(flat4):
    family = _parallel_planes(5e-6)
    N, _ = flat4.averaging.weinstein_average(family)
    upper = family.members[1].submanifold
    report = flat4.verifier.verify_curve_growth(upper, N, 1e-5, np.array([-0.02, 0.01]), np.array([0.03, -0.02]))
    assert report.values["alpha"] == pytest.approx(0.0, abs=1e-6)
    assert not report.failures


def test_curve_growth_guards_its_hypotheses(flat4):
    plane = catalog.affine_lagrangian(0.0)
    with pytest.raises(DomainError):
        flat4.verifier.verify_curve_growth(plane, plane, 1e-6, np.array([0.0, 0.0]), np.array([0.5, 0.0]))
    with pytest.raises(DomainError):
        flat4.verifier.verify_curve_growth(plane, plane, 1e-4, np.array([0.0, 0.0]), np.array([0.05, 0.0]))


def test_curve_growth_suite_rejects_large_epsilon(flat4):
    plane = catalog.affine_lagrangian(0.0)
    report = flat4.verifier.curve_growth_suite(plane, plane, 1e-3, pairs=3)
    assert report.rejections == 3
    assert report.trials == 0


def test_moment_map_is_constant_on_an_invariant_torus(flat4):
    action = catalog.DiagonalCircleAction()
    torus = catalog.lagrangian_torus_r4(resolution=6)
    report = flat4.verifier.moment_map_spread(action, torus, group_samples=3, directions=4)
    assert report.trials == 1
    assert report.values["spread"] <= 1e-9
    assert report.values["mu"] == pytest.approx(1.0)
    assert report.values["C"] == pytest.approx(math.sqrt(2.0), rel=0.02)
    assert report.status == CheckStatus.PASS


def test_moment_map_spread_needs_small_epsilon(flat4):
    action = catalog.DiagonalCircleAction()
    torus = catalog.lagrangian_torus_r4(resolution=4)
    report = flat4.verifier.moment_map_spread(action, torus, epsilon=1e-4, directions=2)
    assert report.trials == 0
    assert report.rejections == 1
    assert not report.checks


def test_report_merge_and_summary():
    first = VerifierReport(name="demo", trials=2)
    first.checks.append(upper_bound_check("x <= 1", 0.5, 1.0))
    first.checks.append(upper_bound_check("x <= 1", 0.9, 1.0))
    second = VerifierReport(name="demo", trials=1, rejections=2)
    second.checks.append(lower_bound_check("y >= 2", 1.0, 2.0))
    second.notes.append("one rejected")
    first.merge(second)
    assert first.trials == 3
    assert first.rejections == 2
    assert first.status == CheckStatus.FAIL
    assert len(first.failures) == 1
    summary = first.summary()
    assert summary["x <= 1"]["count"] == 2
    assert summary["x <= 1"]["value"] == 0.9
    assert summary["x <= 1"]["status"] == CheckStatus.PASS.value
    assert summary["y >= 2"]["status"] == CheckStatus.FAIL.value
    assert first.notes == ["one rejected"]
