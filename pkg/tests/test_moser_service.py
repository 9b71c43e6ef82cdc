from dataclasses import dataclass
from typing import Optional

import numpy as np
import pytest

from app.core.config import Settings
from app.core.exceptions import LeftTube
from app.models import catalog
from app.models.checks import CheckStatus
from app.models.family import WeightedFamily
from app.models.submanifold import ParamSubmanifold
from app.services.moser_service import FlowReport, NormalBundle, PrimitiveData
from tests.conftest import Stack


def _parallel_planes(c: float, resolution: int = 5) -> WeightedFamily:
    return WeightedFamily.from_pairs(
        [
            (0.5, catalog.affine_lagrangian(c, resolution=resolution, label="upper")),
            (0.5, catalog.affine_lagrangian(-c, resolution=resolution, label="lower")),
        ]
    )


@pytest.fixture
def fast_flat4(fast_settings) -> Stack:
    return Stack(catalog.flat(dim=4), fast_settings)


def test_homotopy_operator_inverts_d_on_a_plane(flat4):
    # Q omega = -sum y_i dx_i near the zero section, and d of that is omega
    bundle = NormalBundle(flat4.slices, catalog.affine_lagrangian(0.0))
    p = np.array([0.1, -0.2, 0.03, -0.05])
    covector = flat4.moser.homotopy_Q(bundle, flat4.kernel.omega, p)
    assert np.allclose(covector, [-0.03, 0.05, 0.0, 0.0], atol=1e-10)
    X = np.array([1.0, 1.0, 0.0, 0.0])
    assert flat4.moser.homotopy_Q(bundle, flat4.kernel.omega, p, X) == pytest.approx(0.02, abs=1e-10)


def test_homotopy_operator_vanishes_on_the_zero_section(flat4):
    bundle = NormalBundle(flat4.slices, catalog.affine_lagrangian(0.0))
    covector = flat4.moser.homotopy_Q(bundle, flat4.kernel.omega, np.array([0.3, 0.1, 0.0, 0.0]))
    assert np.allclose(covector, 0.0, atol=1e-12)


def test_identical_members_have_a_zero_primitive(flat4):
    family = WeightedFamily.from_pairs(
        [(0.5, catalog.affine_lagrangian(0.0, label="a")), (0.5, catalog.affine_lagrangian(0.0, label="b"))]
    )
    N, _ = flat4.averaging.weinstein_average(family)
    primitive = flat4.moser.build_primitive(family, N)
    assert primitive.beta_sup["a"] == pytest.approx(0.0, abs=1e-12)
    assert primitive.beta_sup["b"] == pytest.approx(0.0, abs=1e-12)
    q = N.grid_points[12]
    assert np.allclose(primitive.alpha(q), 0.0, atol=1e-10)
    assert np.allclose(primitive.omega_t(q, 0.5), flat4.model.omega(q), atol=1e-8)


def test_parallel_planes_primitive(flat4):
    c = 5e-6
    family = _parallel_planes(c)
    N, _ = flat4.averaging.weinstein_average(family)
    primitive = flat4.moser.build_primitive(family, N)
    # beta^upper = c dx1 and beta^lower = -c dx1 on N, so the weighted alpha cancels
    assert primitive.beta_sup["upper"] == pytest.approx(c, rel=1e-6)
    assert primitive.beta_sup["lower"] == pytest.approx(c, rel=1e-6)
    assert all(check.status == CheckStatus.PASS for check in primitive.beta_checks(2 * c))
    q = N.grid_points[12]
    point = primitive.evaluate(q)
    assert np.allclose(point.alpha, 0.0, atol=1e-10)
    assert np.allclose(point.omega_avg, point.omega, atol=1e-8)
    assert np.allclose(point.velocity(0.3), 0.0, atol=1e-10)
    assert primitive.alpha_sup(N.grid_points[:3]) < 1e-10


def test_exactness_on_parallel_planes(flat4):
    family = _parallel_planes(5e-6)
    N, _ = flat4.averaging.weinstein_average(family)
    primitive = flat4.moser.build_primitive(family, N)
    q = N.grid_points[12]
    assert primitive.exactness_defect(q) < 1e-6
    check = primitive.check_exactness([q])
    assert check.status == CheckStatus.PASS
    loop = primitive.loop_integral(q, np.eye(4)[0], np.eye(4)[2], radius=1e-3, samples=8)
    assert loop == pytest.approx(0.0, abs=1e-10)


def test_flow_refuses_to_run_without_containment(flat4):
    family = _parallel_planes(5e-6, resolution=3)
    N, _ = flat4.averaging.weinstein_average(family)
    primitive = flat4.moser.build_primitive(family, N)
    with pytest.raises(LeftTube) as info:
        flat4.moser.moser_flow(family, N, primitive, epsilon=1.0 / 70000.0, allow_override=False)
    assert info.value.constant == "842eps<R_eps_L_eps"


@pytest.mark.slow
def test_flow_on_parallel_planes_keeps_the_average(fast_flat4):
    family = _parallel_planes(5e-6, resolution=3)
    N, _ = fast_flat4.averaging.weinstein_average(family)
    primitive = fast_flat4.moser.build_primitive(family, N)
    L, report = fast_flat4.moser.moser_flow(family, N, primitive, epsilon=1e-5)
    assert np.allclose(L.grid_points, N.grid_points, atol=1e-10)
    assert report.containment_checked and not report.containment_overridden
    assert report.max_displacement < 1e-10
    assert report.isotropy_defect < 1e-7
    assert report.d0_to_members["upper"] == pytest.approx(5e-6, rel=1e-4)
    assert report.nondegeneracy_min == pytest.approx(1.0, abs=1e-6)
    assert report.bound_checks
    assert all(check.status == CheckStatus.PASS for check in report.bound_checks)


@pytest.mark.slow
def test_flow_override_drops_the_displacement_check(fast_flat4):
    family = _parallel_planes(5e-6, resolution=3)
    N, _ = fast_flat4.averaging.weinstein_average(family)
    primitive = fast_flat4.moser.build_primitive(family, N)
    _, report = fast_flat4.moser.moser_flow(family, N, primitive, epsilon=1.0 / 70000.0, allow_override=True)
    assert report.containment_overridden
    assert report.tube_limit == N.tube_radius
    assert report.notes
    assert not any(check.name.startswith("max displacement") for check in report.bound_checks)


def _rotated_tori(resolution: int = 6) -> WeightedFamily:
    base = catalog.perturbed_torus(1.0, 1.3, 0.02, 0.01, resolution=resolution, label="torus")
    return WeightedFamily.from_group(
        base, [("e", catalog.diagonal_rotation(0.0)), ("g", catalog.diagonal_rotation(0.4))]
    )


def _torus_settings(**update) -> Settings:
    base = Settings(_env_file=None).model_copy(
        update={"flow_steps": 2, "quadrature_nodes": 6, "sup_refinement": False}
    )
    return base.model_copy(update=update)


@dataclass
class TorusFlow:
    stack: Stack
    family: WeightedFamily
    N: ParamSubmanifold
    primitive: PrimitiveData
    L: ParamSubmanifold
    report: FlowReport


def _run_flow(stack: Stack, family: WeightedFamily, flow_steps: Optional[int] = None) -> TorusFlow:
    N, _ = stack.averaging.weinstein_average(family)
    primitive = stack.moser.build_primitive(family, N)
    L, report = stack.moser.moser_flow(family, N, primitive, flow_steps=flow_steps)
    return TorusFlow(stack, family, N, primitive, L, report)


@pytest.fixture(scope="module")
def torus_flow() -> TorusFlow:
    return _run_flow(Stack(catalog.flat(dim=4), _torus_settings()), _rotated_tori())


@pytest.mark.slow
def test_flow_with_a_nonzero_primitive(torus_flow):
    primitive, report = torus_flow.primitive, torus_flow.report
    assert min(primitive.beta_sup.values()) > 1e-4
    assert primitive.alpha_sup(torus_flow.N.grid_points[:6]) > 1e-9
    assert 1e-12 < report.max_displacement < 0.05
    assert not np.allclose(torus_flow.L.grid_points, torus_flow.N.grid_points, atol=1e-12, rtol=0.0)
    # products of planar curves stay Lagrangian along the flow
    assert report.isotropy_defect < 1e-7
    assert report.nondegeneracy_min > 0.5
    assert report.steps_used >= 2
    assert not report.containment_checked


@pytest.mark.slow
def test_flow_is_bitwise_independent_of_thread_count(torus_flow):
    threaded = _run_flow(Stack(catalog.flat(dim=4), _torus_settings(threads=4)), torus_flow.family)
    assert np.array_equal(threaded.N.grid_points, torus_flow.N.grid_points)
    assert np.array_equal(threaded.L.grid_points, torus_flow.L.grid_points)
    assert threaded.report.max_displacement == torus_flow.report.max_displacement


@pytest.mark.slow
def test_exactness_holds_across_grid_lines(torus_flow):
    N, primitive = torus_flow.N, torus_flow.primitive
    rng = np.random.default_rng(11)
    points = []
    # pi / 3 is a grid line of the 6 x 6 grid in both parameters
    for offset in (2e-3, -5e-4, 1e-4, 0.0):
        direction = rng.standard_normal(4)
        x = N.evaluate(np.array([np.pi / 3 + offset, np.pi / 3 - offset]))
        points.append(x + 0.005 * direction / np.linalg.norm(direction))
    check = primitive.check_exactness(points, tolerance=1e-5)
    assert check.status == CheckStatus.PASS
    assert primitive.exactness_defect(points[0], step=3e-4) < 1e-5
    assert primitive.exactness_defect(points[1], step=3e-4) < 1e-5


@pytest.mark.slow
def test_flow_commutes_with_unitary_maps(torus_flow):
    rotation = catalog.unitary_r4(0.3, -0.5)
    stack = Stack(catalog.flat(dim=4), _torus_settings())
    moved = _run_flow(stack, torus_flow.family.transformed(rotation))
    expected = np.array([rotation(x) for x in torus_flow.L.grid_points])
    assert np.allclose(moved.L.grid_points, expected, atol=1e-8, rtol=0.0)
    assert moved.report.max_displacement == pytest.approx(torus_flow.report.max_displacement, abs=1e-9)


@pytest.mark.slow
def test_orbit_average_is_invariant_under_the_group():
    action = catalog.DiagonalCircleAction()
    base = catalog.perturbed_torus(1.0, 1.3, 1e-3, 0.0, resolution=9, label="torus")
    family = WeightedFamily.from_group(base, action.sample(3))
    stack = Stack(catalog.flat(dim=4), _torus_settings())
    flow = _run_flow(stack, family, flow_steps=1)
    generator = action.element(2.0 * np.pi / 3.0)
    # members sit about 2e-3 apart; an unaveraged L would miss by that much
    for x in flow.L.grid_points[::4]:
        foot = stack.submanifolds.closest_point(flow.L, generator(x))
        assert foot.distance < 2e-4
