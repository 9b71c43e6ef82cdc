# app/models/manifold.py - Almost-Kaehler model manifolds on a single chart

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from app.core.exceptions import Degenerate

MatrixField = Callable[[np.ndarray], np.ndarray]


@dataclass(frozen=True, eq=False)
class AlmostKaehlerModel:
    """A chart box with a metric, a symplectic form and optional closed forms.

    The almost complex structure is derived from the relation omega(X, I Y) = g(X, Y).
    """

    name: str
    dim: int
    metric_field: MatrixField
    symplectic_field: MatrixField
    lower: np.ndarray  # chart box corners
    upper: np.ndarray
    curvature_bound_hint: float = 0.0  # expected sup |K|
    nabla_omega_hint: float = 0.0  # expected sup |grad omega|
    injectivity_radius: float = np.inf
    log_guard: float = np.inf  # log map refuses vectors longer than this
    flat: bool = False  # exp/log/transport are affine
    periodic: bool = False  # flat torus: coordinates wrap over the box
    christoffel_field: Optional[Callable[[np.ndarray], np.ndarray]] = None
    distance_field: Optional[Callable[[np.ndarray, np.ndarray], np.ndarray]] = None
    log_field: Optional[Callable[[np.ndarray, np.ndarray], np.ndarray]] = None  # closed-form shooting guess
    params: dict = field(default_factory=dict)

    def metric(self, p: np.ndarray) -> np.ndarray:
        return np.asarray(self.metric_field(np.asarray(p, dtype=float)), dtype=float)

    def omega(self, p: np.ndarray) -> np.ndarray:
        return np.asarray(self.symplectic_field(np.asarray(p, dtype=float)), dtype=float)

    def contains(self, p: np.ndarray) -> bool:
        if self.periodic:
            return bool(np.all(np.isfinite(p)))
        return bool(np.all(p >= self.lower) and np.all(p <= self.upper))

    def wrap(self, p: np.ndarray) -> np.ndarray:
        if not self.periodic:
            return np.asarray(p, dtype=float)
        span = self.upper - self.lower
        return self.lower + np.remainder(np.asarray(p, dtype=float) - self.lower, span)

    def chart_difference(self, p: np.ndarray, q: np.ndarray) -> np.ndarray:
        """q - p, taking the short way round on a periodic box."""
        diff = np.asarray(q, dtype=float) - np.asarray(p, dtype=float)
        if self.periodic:
            span = self.upper - self.lower
            diff = diff - span * np.round(diff / span)
        return diff

    def sample_points(self, count: int, rng: np.random.Generator, shrink: float = 0.5) -> np.ndarray:
        """Uniform samples from the central part of the chart box."""
        center = 0.5 * (self.lower + self.upper)
        half = 0.5 * (self.upper - self.lower) * shrink
        half = np.minimum(half, 2.0)
        return center + rng.uniform(-1.0, 1.0, size=(count, self.dim)) * half


def canonical_compatible_metric(omega_field: MatrixField, gtilde_field: MatrixField, tol: float = 1e-12) -> MatrixField:
    """Return the metric field compatible with omega built from a reference metric.

    At each point K = omega^{-1} gtilde is gtilde-skew, so -K^2 is positive and
    I = K (-K^2)^{-1/2} squares to -Id. The result is g = omega I.
    """

    def metric_field(p: np.ndarray) -> np.ndarray:
        omega = np.asarray(omega_field(p), dtype=float)
        gtilde = np.asarray(gtilde_field(p), dtype=float)
        k = np.linalg.solve(omega, gtilde)
        values, basis = np.linalg.eigh(0.5 * (gtilde + gtilde.T))
        if values.min() <= tol:
            raise Degenerate(f"reference metric is not positive-definite at {p}")
        root = basis @ np.diag(np.sqrt(values)) @ basis.T
        root_inv = basis @ np.diag(1.0 / np.sqrt(values)) @ basis.T
        minus_k2 = -(k @ k)
        conjugated = root @ minus_k2 @ root_inv
        lam, vec = np.linalg.eigh(0.5 * (conjugated + conjugated.T))
        if lam.min() <= tol:
            raise Degenerate(f"-K^2 has eigenvalue {lam.min():.3e} at {p}")
        inv_sqrt = root_inv @ (vec @ np.diag(lam ** -0.5) @ vec.T) @ root
        structure = k @ inv_sqrt
        g = omega @ structure
        return 0.5 * (g + g.T)

    return metric_field
