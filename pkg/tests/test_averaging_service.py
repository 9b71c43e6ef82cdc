import numpy as np
import pytest

from app.core.exceptions import ConfigError
from app.models import catalog
from app.models.checks import CheckStatus
from app.models.family import WeightedFamily


def _parallel_planes(c: float) -> WeightedFamily:
    return WeightedFamily.from_pairs(
        [(0.5, catalog.affine_lagrangian(c, label="upper")), (0.5, catalog.affine_lagrangian(-c, label="lower"))]
    )


def test_identical_members_average_to_themselves(flat4):
    family = WeightedFamily.from_pairs(
        [(0.5, catalog.affine_lagrangian(0.0, label="a")), (0.5, catalog.affine_lagrangian(0.0, label="b"))]
    )
    N, report = flat4.averaging.weinstein_average(family)
    assert np.allclose(N.grid_points, family.members[0].submanifold.grid_points, atol=1e-12)
    assert report.epsilon_measured == pytest.approx(0.0, abs=1e-12)
    assert all(check.status != CheckStatus.FAIL for check in report.bound_checks)


def test_parallel_planes_average_to_the_middle_plane(flat4):
    N, report = flat4.averaging.weinstein_average(_parallel_planes(5e-6))
    assert np.allclose(N.grid_points[:, 2:], 0.0, atol=1e-10)
    assert report.epsilon_measured == pytest.approx(1e-5, rel=1e-6)
    # the averaging tolerance leaves the fibers a few 1e-12 off the middle plane
    assert report.d0_to_average["upper"] == pytest.approx(5e-6, abs=1e-10)
    assert report.bound_checks
    assert all(check.status == CheckStatus.PASS for check in report.bound_checks)


def test_weights_move_the_center_of_mass(flat4):
    family = WeightedFamily.from_pairs(
        [(0.25, catalog.affine_lagrangian(0.0, label="a")), (0.75, catalog.affine_lagrangian(0.01, label="b"))]
    )
    N, report = flat4.averaging.weinstein_average(family)
    assert np.allclose(N.grid_points[:, 2], 0.0075, atol=1e-10)
    assert np.allclose(N.grid_points[:, 3], 0.0, atol=1e-12)
    # eps = 0.01 is far outside the hypothesis, so no distance bounds are asserted
    assert not report.bound_checks
    assert report.notes


def test_member_order_does_not_change_the_average(flat4):
    a = catalog.affine_lagrangian(0.002, label="a")
    b = catalog.affine_lagrangian(-0.001, label="b")
    forward, _ = flat4.averaging.weinstein_average(WeightedFamily.from_pairs([(0.4, a), (0.6, b)]))
    backward, _ = flat4.averaging.weinstein_average(WeightedFamily.from_pairs([(0.6, b), (0.4, a)]))
    assert np.array_equal(forward.grid_points, backward.grid_points)


def test_average_commutes_with_unitary_maps(flat4):
    family = _parallel_planes(1e-3)
    rotate = catalog.unitary_r4(0.3, -0.5)
    N, _ = flat4.averaging.weinstein_average(family)
    N_rotated, _ = flat4.averaging.weinstein_average(family.transformed(rotate))
    expected = np.array([rotate(x) for x in N.grid_points])
    assert np.allclose(N_rotated.grid_points, expected, atol=1e-10)


def test_reference_choice_does_not_move_the_average(flat4):
    family = _parallel_planes(1e-3)
    N, _ = flat4.averaging.weinstein_average(family, reference_index=0)
    assert flat4.averaging.reference_cross_check(family, N, 1) < 1e-10


def test_latitudes_average_to_the_middle_latitude(sphere):
    family = WeightedFamily.from_pairs(
        [
            (0.5, catalog.sphere_cap_curve(1.0, resolution=8, label="north")),
            (0.5, catalog.sphere_cap_curve(1.1, resolution=8, label="south")),
        ]
    )
    N, _ = sphere.averaging.weinstein_average(family, epsilon=0.1)
    polar = 2.0 * np.arctan(np.linalg.norm(N.grid_points, axis=1))
    assert np.allclose(polar, 1.05, atol=1e-6)


def test_averaged_field_vanishes_on_the_average(flat4):
    family = _parallel_planes(1e-3)
    N, _ = flat4.averaging.weinstein_average(family)
    for x in N.grid_points[:5]:
        assert np.linalg.norm(flat4.averaging.averaged_field(family, x)) < 1e-10


def test_reference_index_out_of_range_is_rejected(flat4):
    with pytest.raises(ConfigError):
        flat4.averaging.weinstein_average(_parallel_planes(5e-6), reference_index=2)
    with pytest.raises(ConfigError):
        flat4.averaging.solve_fibers(_parallel_planes(5e-6), reference_index=-1)


def test_unsettled_d1_cannot_pass_silently(flat4, monkeypatch):
    measure = flat4.submanifolds.c1_distance_detail

    def unsettled(base, other):
        detail = measure(base, other)
        detail.stable = False
        return detail

    monkeypatch.setattr(flat4.submanifolds, "c1_distance_detail", unsettled)
    _, report = flat4.averaging.weinstein_average(_parallel_planes(5e-6), epsilon=1e-5)
    d1_checks = [check for check in report.bound_checks if check.name.startswith("d1")]
    assert len(d1_checks) == 2
    assert all(check.status == CheckStatus.INCONCLUSIVE for check in d1_checks)
    assert sum("refinement" in note for note in report.notes) == 2
