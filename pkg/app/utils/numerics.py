# app/utils/numerics.py - Small linear-algebra and finite-difference helpers

from typing import Callable

import numpy as np
from scipy import linalg


def standard_symplectic(dim: int) -> np.ndarray:
    """Matrix of the standard form in coordinates (x1..xn, y1..yn)."""
    n = dim // 2
    omega = np.zeros((dim, dim))
    omega[:n, n:] = np.eye(n)
    omega[n:, :n] = -np.eye(n)
    return omega


def symmetrize(matrix: np.ndarray) -> np.ndarray:
    return 0.5 * (matrix + matrix.T)


def central_jacobian(
    func: Callable[[np.ndarray], np.ndarray], x: np.ndarray, step: float
) -> np.ndarray:
    """Columns are central differences of func along each coordinate of x."""
    x = np.asarray(x, dtype=float)
    columns = []
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = step
        columns.append((np.asarray(func(x + e)) - np.asarray(func(x - e))) / (2.0 * step))
    if not columns:
        return np.zeros((np.asarray(func(x)).size, 0))
    return np.stack(columns, axis=-1)


def metric_orthonormalize(vectors: np.ndarray, metric: np.ndarray) -> np.ndarray:
    """Symmetric (Loewdin) orthonormalisation of the columns w.r.t. metric.

    Smooth in the input, so frames built this way vary continuously over a grid.
    """
    if vectors.shape[1] == 0:
        return vectors
    gram = symmetrize(vectors.T @ metric @ vectors)
    values, basis = np.linalg.eigh(gram)
    if values.min() <= 1e-14:
        raise np.linalg.LinAlgError("rank-deficient frame")
    return vectors @ (basis @ np.diag(values ** -0.5) @ basis.T)


def cholesky_frame(jacobian: np.ndarray, metric: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Gram-Schmidt of the Jacobian columns, returned as (E, R) with J = E R."""
    gram = symmetrize(jacobian.T @ metric @ jacobian)
    upper = linalg.cholesky(gram, lower=False)
    frame = linalg.solve_triangular(upper, jacobian.T, trans="T", lower=False).T
    return frame, upper


def orthonormal_basis(metric: np.ndarray) -> np.ndarray:
    """Columns form a metric-orthonormal basis of the whole space."""
    lower = linalg.cholesky(metric, lower=True)
    return linalg.solve_triangular(lower, np.eye(metric.shape[0]), lower=True).T


def metric_projector(frame: np.ndarray, metric: np.ndarray) -> np.ndarray:
    """Orthogonal projector onto the span of a metric-orthonormal frame."""
    return frame @ frame.T @ metric


def rk4_step(rhs: Callable[[np.ndarray], np.ndarray], state: np.ndarray, dt: float) -> np.ndarray:
    k1 = rhs(state)
    k2 = rhs(state + 0.5 * dt * k1)
    k3 = rhs(state + 0.5 * dt * k2)
    k4 = rhs(state + dt * k3)
    return state + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def gauss_legendre_unit(nodes: int) -> tuple[np.ndarray, np.ndarray]:
    """Gauss-Legendre nodes and weights mapped to [0, 1]."""
    x, w = np.polynomial.legendre.leggauss(nodes)
    return 0.5 * (x + 1.0), 0.5 * w


def wrap_angle(values: np.ndarray) -> np.ndarray:
    """Map angles to (-pi, pi]."""
    return -np.remainder(-np.asarray(values) + np.pi, 2.0 * np.pi) + np.pi
