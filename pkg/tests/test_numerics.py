import threading
import time

import numpy as np
import pytest

from app.models.checks import CheckStatus, classify, lower_bound_check, upper_bound_check, worst_status
from app.utils.numerics import (
    central_jacobian,
    cholesky_frame,
    gauss_legendre_unit,
    metric_orthonormalize,
    orthonormal_basis,
    standard_symplectic,
    wrap_angle,
)
from app.utils.parallel import ordered_map


def _spd(rng, m):
    a = rng.standard_normal((m, m))
    return a @ a.T + m * np.eye(m)


def test_standard_symplectic_squares_to_minus_identity():
    omega = standard_symplectic(6)
    assert np.allclose(omega @ omega, -np.eye(6))
    assert np.allclose(omega.T, -omega)


def test_orthonormal_basis_is_metric_orthonormal(rng):
    g = _spd(rng, 4)
    basis = orthonormal_basis(g)
    assert np.allclose(basis.T @ g @ basis, np.eye(4), atol=1e-12)


def test_cholesky_frame_factors_the_jacobian(rng):
    g = _spd(rng, 4)
    jac = rng.standard_normal((4, 2))
    frame, upper = cholesky_frame(jac, g)
    assert np.allclose(frame @ upper, jac, atol=1e-12)
    assert np.allclose(frame.T @ g @ frame, np.eye(2), atol=1e-12)
    assert np.allclose(upper, np.triu(upper))


def test_metric_orthonormalize_keeps_the_span(rng):
    g = _spd(rng, 4)
    vectors = rng.standard_normal((4, 2))
    frame = metric_orthonormalize(vectors, g)
    assert np.allclose(frame.T @ g @ frame, np.eye(2), atol=1e-12)
    coefficients, *_ = np.linalg.lstsq(vectors, frame, rcond=None)
    assert np.allclose(vectors @ coefficients, frame, atol=1e-12)


def test_metric_orthonormalize_rejects_rank_deficient_frames():
    vectors = np.array([[1.0, 2.0], [0.0, 0.0], [0.0, 0.0]])
    with pytest.raises(np.linalg.LinAlgError):
        metric_orthonormalize(vectors, np.eye(3))


def test_gauss_legendre_unit_integrates_polynomials_exactly():
    nodes, weights = gauss_legendre_unit(4)
    assert weights.sum() == pytest.approx(1.0, abs=1e-15)
    assert np.sum(weights * nodes**5) == pytest.approx(1.0 / 6.0, abs=1e-15)
    assert np.all((nodes > 0.0) & (nodes < 1.0))


def test_wrap_angle_maps_into_half_open_interval():
    wrapped = wrap_angle(np.array([1.5 * np.pi, -1.5 * np.pi, np.pi, 0.25]))
    assert np.allclose(wrapped, [-0.5 * np.pi, 0.5 * np.pi, np.pi, 0.25])


def test_central_jacobian_of_a_linear_map(rng):
    matrix = rng.standard_normal((3, 2))
    jac = central_jacobian(lambda x: matrix @ x, np.array([0.3, -0.2]), 1e-5)
    assert np.allclose(jac, matrix, atol=1e-9)


def test_ordered_map_keeps_input_order_with_threads():
    def slow_square(x):
        time.sleep(0.001 * (10 - x))
        return x * x, threading.get_ident()

    results = ordered_map(slow_square, range(10), threads=4)
    assert [value for value, _ in results] == [x * x for x in range(10)]


def test_classify_noise_band():
    assert classify(1.0, 1.0, 0.0) == CheckStatus.PASS
    assert classify(1.0 + 1e-8, 1.0, 3e-7) == CheckStatus.INCONCLUSIVE
    assert classify(1.1, 1.0, 3e-7) == CheckStatus.FAIL


def test_lower_bound_check_and_margins():
    check = lower_bound_check("d >= b", 0.5, 0.2)
    assert check.status == CheckStatus.PASS
    assert check.kind == "lower"
    assert check.margin == pytest.approx(0.3)
    failing = upper_bound_check("d <= b", 2.0, 1.0)
    assert failing.margin == pytest.approx(-1.0)
    assert failing.as_dict()["status"] == "FAIL"
    assert worst_status([check, failing]) == CheckStatus.FAIL
    assert worst_status([check]) == CheckStatus.PASS
