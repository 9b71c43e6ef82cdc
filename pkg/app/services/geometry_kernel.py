# app/services/geometry_kernel.py - Geodesics, transport, curvature and subspace angles

"""
Geometry kernel for a single-chart almost-Kaehler model.

All methods are pure functions of the (immutable) model and the settings the
kernel was built with, so one kernel can be shared between worker threads.
"""

import logging
from typing import Optional, Tuple, Union

import numpy as np
from scipy import linalg

from app.core.config import Settings, settings as default_settings
from app.core.exceptions import DimensionMismatch, LeftDomain, NoConvergence, NotCompatible
from app.models.geometry import GeodesicPath, SubspaceBasis
from app.models.manifold import AlmostKaehlerModel, canonical_compatible_metric
from app.utils.numerics import orthonormal_basis, rk4_step

logger = logging.getLogger(__name__)

__all__ = ["GeometryKernel", "canonical_compatible_metric"]


class GeometryKernel:
    """Numerical Riemannian and symplectic primitives on one model"""

    COMPATIBILITY_TOLERANCE = 1e-6

    def __init__(self, model: AlmostKaehlerModel, config: Optional[Settings] = None):
        self.model = model
        self.config = config or default_settings
        self.dim = model.dim

    # ------------------------------------------------------------------
    # Pointwise structure
    # ------------------------------------------------------------------

    def metric(self, p: np.ndarray) -> np.ndarray:
        return self.model.metric(p)

    def omega(self, p: np.ndarray) -> np.ndarray:
        return self.model.omega(p)

    def inner(self, p: np.ndarray, x: np.ndarray, y: np.ndarray) -> float:
        return float(x @ self.metric(p) @ y)

    def norm(self, p: np.ndarray, x: np.ndarray) -> float:
        return float(np.sqrt(max(x @ self.metric(p) @ x, 0.0)))

    def compatibility_defect(self, p: np.ndarray) -> float:
        structure = np.linalg.solve(self.omega(p), self.metric(p))
        return float(np.linalg.norm(structure @ structure + np.eye(self.dim)))

    def acs_at(self, p: np.ndarray) -> np.ndarray:
        """Almost complex structure I with omega(X, I Y) = g(X, Y)."""
        structure = np.linalg.solve(self.omega(p), self.metric(p))
        defect = np.linalg.norm(structure @ structure + np.eye(self.dim))
        if defect > self.COMPATIBILITY_TOLERANCE:
            raise NotCompatible(f"|I^2 + Id| = {defect:.3e} at {np.round(p, 6)}")
        return structure

    def _check_inside(self, p: np.ndarray) -> None:
        if not self.model.contains(p):
            raise LeftDomain(f"point {np.round(p, 6)} outside the {self.model.name} chart")

    # ------------------------------------------------------------------
    # Connection and curvature
    # ------------------------------------------------------------------

    def christoffel(self, p: np.ndarray) -> np.ndarray:
        """Gamma[k, i, j] = Gamma^k_ij."""
        m = self.dim
        if self.model.flat:
            return np.zeros((m, m, m))
        if self.model.christoffel_field is not None:
            return self.model.christoffel_field(p)
        h = self.config.fd_step
        dg = np.empty((m, m, m))
        for d in range(m):
            e = np.zeros(m)
            e[d] = h
            dg[d] = (self.metric(p + e) - self.metric(p - e)) / (2.0 * h)
        # dg[d, i, j] = d_d g_ij
        combo = dg + np.einsum("jil->ijl", dg) - np.einsum("lij->ijl", dg)
        return 0.5 * np.einsum("kl,ijl->kij", np.linalg.inv(self.metric(p)), combo)

    def curvature_tensor(self, p: np.ndarray) -> np.ndarray:
        """R[l, i, j, k] with R(d_i, d_j) d_k = R^l_ijk d_l."""
        m = self.dim
        if self.model.flat:
            return np.zeros((m, m, m, m))
        h = self.config.fd_step
        d_gamma = np.empty((m, m, m, m))
        for d in range(m):
            e = np.zeros(m)
            e[d] = h
            d_gamma[d] = (self.christoffel(p + e) - self.christoffel(p - e)) / (2.0 * h)
        gamma = self.christoffel(p)
        return (
            np.einsum("iljk->lijk", d_gamma)
            - np.einsum("jlik->lijk", d_gamma)
            + np.einsum("lim,mjk->lijk", gamma, gamma)
            - np.einsum("ljm,mik->lijk", gamma, gamma)
        )

    def curvature_operator(self, p: np.ndarray, x: np.ndarray, y: np.ndarray, z: np.ndarray) -> np.ndarray:
        """R(X, Y) Z"""
        return np.einsum("lijk,i,j,k->l", self.curvature_tensor(p), x, y, z)

    def sectional_curvature(self, p: np.ndarray, plane: Union[SubspaceBasis, np.ndarray]) -> float:
        self._check_inside(p)
        vectors = plane.vectors if isinstance(plane, SubspaceBasis) else np.asarray(plane)
        if vectors.shape[1] != 2:
            raise DimensionMismatch(f"sectional curvature needs a 2-plane, got {vectors.shape[1]} vectors")
        x, y = vectors[:, 0], vectors[:, 1]
        g = self.metric(p)
        area = (x @ g @ x) * (y @ g @ y) - (x @ g @ y) ** 2
        return float(self.curvature_operator(p, x, y, y) @ g @ x / area)

    def nabla_omega(self, p: np.ndarray) -> np.ndarray:
        """(nabla_k omega)_ij by covariant finite differences."""
        m = self.dim
        h = self.config.fd_step
        d_omega = np.empty((m, m, m))
        for k in range(m):
            e = np.zeros(m)
            e[k] = h
            d_omega[k] = (self.omega(p + e) - self.omega(p - e)) / (2.0 * h)
        gamma = self.christoffel(p)
        omega = self.omega(p)
        return (
            d_omega
            - np.einsum("lki,lj->kij", gamma, omega)
            - np.einsum("lkj,il->kij", gamma, omega)
        )

    def nabla_omega_norm(self, p: np.ndarray) -> float:
        """sup over unit X of |nabla_X omega| in a metric-orthonormal frame."""
        frame = orthonormal_basis(self.metric(p))
        tensor = np.einsum("kij,ka,ib,jc->abc", self.nabla_omega(p), frame, frame, frame)
        return float(np.linalg.norm(tensor.reshape(self.dim, -1), 2))

    def nabla_omega_sup(self, sample_points: np.ndarray) -> float:
        return max((self.nabla_omega_norm(p) for p in np.atleast_2d(sample_points)), default=0.0)

    # ------------------------------------------------------------------
    # Geodesics
    # ------------------------------------------------------------------

    def step_count(self, p: np.ndarray, v: np.ndarray, n_steps: Optional[int] = None) -> int:
        if n_steps is not None:
            return max(int(n_steps), 1)
        length = self.norm(p, v)
        return max(self.config.min_rk4_steps, int(np.ceil(self.config.rk4_steps_per_unit * length)))

    def _geodesic_rhs(self, state: np.ndarray) -> np.ndarray:
        m = self.dim
        x, v = state[:m], state[m:]
        accel = -np.einsum("kij,i,j->k", self.christoffel(x), v, v)
        return np.concatenate([v, accel])

    def geodesic(
        self, p: np.ndarray, v: np.ndarray, n_steps: Optional[int] = None, truncate: bool = False
    ) -> GeodesicPath:
        """Sampled geodesic t -> exp_p(t v) on [0, 1].

        With truncate=True a path leaving the chart is returned up to its last
        interior sample instead of raising.
        """
        p = np.asarray(p, dtype=float)
        v = np.asarray(v, dtype=float)
        self._check_inside(p)
        steps = self.step_count(p, v, n_steps)
        times = np.linspace(0.0, 1.0, steps + 1)
        if self.model.flat:
            points = np.array([self.model.wrap(p + t * v) for t in times])
            velocities = np.tile(v, (steps + 1, 1))
            inside = np.array([self.model.contains(x) for x in points])
            if not inside.all():
                if not truncate:
                    raise LeftDomain(f"flat geodesic from {np.round(p, 6)} leaves the chart")
                last = int(np.argmin(inside))
                return GeodesicPath(times[:last], points[:last], velocities[:last], self.norm(p, v))
            return GeodesicPath(times, points, velocities, self.norm(p, v))
        m = self.dim
        state = np.concatenate([p, v])
        points, velocities = [p.copy()], [v.copy()]
        dt = 1.0 / steps
        for k in range(steps):
            try:
                state = rk4_step(self._geodesic_rhs, state, dt)
            except LeftDomain:
                state = np.full(2 * m, np.nan)
            if not self.model.contains(state[:m]):
                if truncate:
                    return GeodesicPath(times[: k + 1], np.array(points), np.array(velocities), self.norm(p, v))
                raise LeftDomain(f"geodesic from {np.round(p, 6)} with |v| = {self.norm(p, v):.4f} leaves the chart")
            points.append(state[:m].copy())
            velocities.append(state[m:].copy())
        return GeodesicPath(times, np.array(points), np.array(velocities), self.norm(p, v))

    def exp_map(self, p: np.ndarray, v: np.ndarray, n_steps: Optional[int] = None) -> np.ndarray:
        p = np.asarray(p, dtype=float)
        v = np.asarray(v, dtype=float)
        if self.model.flat:
            q = self.model.wrap(p + v)
            self._check_inside(q)
            return q
        return self.geodesic(p, v, n_steps).end

    def exp_differential(self, p: np.ndarray, v: np.ndarray, directions: np.ndarray) -> np.ndarray:
        """d(exp_p) at v applied to the columns of directions."""
        directions = np.asarray(directions, dtype=float)
        if self.model.flat:
            return directions.copy()
        h = self.config.chart_jacobian_step * max(1.0, float(np.linalg.norm(v)))
        columns = []
        for w in directions.T:
            plus = self.exp_map(p, v + h * w)
            minus = self.exp_map(p, v - h * w)
            columns.append(self.model.chart_difference(minus, plus) / (2.0 * h))
        return np.stack(columns, axis=-1) if columns else np.zeros((self.dim, 0))

    def log_map(self, p: np.ndarray, q: np.ndarray) -> np.ndarray:
        """Initial velocity v with exp_p(v) = q, by damped Newton shooting."""
        p = np.asarray(p, dtype=float)
        q = np.asarray(q, dtype=float)
        guard = self.model.log_guard
        if self.model.flat:
            v = self.model.chart_difference(p, q)
            if self.norm(p, v) > guard:
                raise NoConvergence(f"|log| = {self.norm(p, v):.4f} exceeds the guard {guard:.4f}")
            return v
        if self.model.log_field is not None:
            v = np.asarray(self.model.log_field(p, q), dtype=float)
        else:
            v = self.model.chart_difference(p, q)
        tol = self.config.log_tolerance

        def residual(w: np.ndarray) -> np.ndarray:
            return self.model.chart_difference(q, self.exp_map(p, w))

        try:
            r = residual(v)
            for iteration in range(self.config.log_max_iter):
                size = np.linalg.norm(r)
                if size < tol:
                    break
                jac = self.exp_differential(p, v, np.eye(self.dim))
                dv = np.linalg.solve(jac, -r)
                damping = 1.0
                while True:
                    trial = v + damping * dv
                    try:
                        r_trial = residual(trial)
                        trial_size = np.linalg.norm(r_trial)
                    except LeftDomain:
                        trial_size = np.inf
                    if trial_size < size or damping < 1.0 / 64:
                        break
                    damping *= 0.5
                if not np.isfinite(trial_size):
                    raise NoConvergence(f"log shooting from {np.round(p, 6)} left the chart")
                v, r = trial, r_trial
            else:
                raise NoConvergence(
                    f"log map did not converge in {self.config.log_max_iter} iterations (residual {np.linalg.norm(r):.2e})"
                )
        except LeftDomain as e:
            raise NoConvergence(f"log shooting failed: {e}") from e
        except np.linalg.LinAlgError as e:
            raise NoConvergence(f"singular shooting Jacobian near a conjugate point: {e}") from e
        length = self.norm(p, v)
        if length > guard:
            raise NoConvergence(f"|log| = {length:.4f} exceeds the guard {guard:.4f}")
        return v

    def distance(self, p: np.ndarray, q: np.ndarray) -> float:
        if self.model.distance_field is not None:
            return float(self.model.distance_field(np.asarray(p, dtype=float), np.atleast_2d(q))[0])
        return self.norm(p, self.log_map(p, q))

    def distances(self, p: np.ndarray, points: np.ndarray) -> np.ndarray:
        """Distances from p to many points; closed form when the catalog has one."""
        points = np.atleast_2d(points)
        if self.model.distance_field is not None:
            return np.asarray(self.model.distance_field(np.asarray(p, dtype=float), points))
        return np.array([self.distance(p, q) for q in points])

    # ------------------------------------------------------------------
    # Parallel transport and Jacobi fields
    # ------------------------------------------------------------------

    def transport_along_geodesic(
        self, p: np.ndarray, v: np.ndarray, vectors: np.ndarray, t: float = 1.0, n_steps: Optional[int] = None
    ) -> np.ndarray:
        """Parallel transport of a vector (m,) or matrix of columns (m, k) along s -> exp_p(s v), s in [0, t]."""
        vectors = np.asarray(vectors, dtype=float)
        if self.model.flat:
            return vectors.copy()
        m = self.dim
        shape = vectors.shape
        block = vectors.reshape(m, -1)
        width = block.shape[1]

        def rhs(state: np.ndarray) -> np.ndarray:
            x, vel = state[:m], state[m : 2 * m]
            gamma = self.christoffel(x)
            cols = state[2 * m :].reshape(m, width)
            d_cols = -np.einsum("kij,i,jl->kl", gamma, vel, cols)
            accel = -np.einsum("kij,i,j->k", gamma, vel, vel)
            return np.concatenate([vel, accel, d_cols.ravel()])

        steps = self.step_count(p, t * np.asarray(v), n_steps)
        state = np.concatenate([p, v, block.ravel()])
        dt = t / steps
        for _ in range(steps):
            state = rk4_step(rhs, state, dt)
            if not self.model.contains(state[:m]):
                raise LeftDomain("transport path left the chart")
        return state[2 * m :].reshape(shape)

    def parallel_transport(self, path: Union[GeodesicPath, np.ndarray], vectors: np.ndarray) -> np.ndarray:
        """Transport along a geodesic path or along a sampled curve (k, m)."""
        if isinstance(path, GeodesicPath):
            return self.transport_along_geodesic(path.start, path.initial_velocity, vectors, n_steps=len(path.times) - 1)
        vectors = np.asarray(vectors, dtype=float)
        points = np.asarray(path, dtype=float)
        if self.model.flat:
            return vectors.copy()
        m = self.dim
        shape = vectors.shape
        block = vectors.reshape(m, -1)
        # Catmull-Rom tangents; Hermite cubic between samples
        tangents = np.gradient(points, axis=0)
        for x in points:
            self._check_inside(x)

        def hermite(k: int, s: float) -> Tuple[np.ndarray, np.ndarray]:
            x0, x1, m0, m1 = points[k], points[k + 1], tangents[k], tangents[k + 1]
            h00, h10, h01, h11 = 2 * s**3 - 3 * s**2 + 1, s**3 - 2 * s**2 + s, -2 * s**3 + 3 * s**2, s**3 - s**2
            d00, d10, d01, d11 = 6 * s**2 - 6 * s, 3 * s**2 - 4 * s + 1, -6 * s**2 + 6 * s, 3 * s**2 - 2 * s
            return h00 * x0 + h10 * m0 + h01 * x1 + h11 * m1, d00 * x0 + d10 * m0 + d01 * x1 + d11 * m1

        for k in range(len(points) - 1):

            def rhs(s: float, cols: np.ndarray) -> np.ndarray:
                x, dx = hermite(k, s)
                return -np.einsum("kij,i,jl->kl", self.christoffel(x), dx, cols)

            k1 = rhs(0.0, block)
            k2 = rhs(0.5, block + 0.5 * k1)
            k3 = rhs(0.5, block + 0.5 * k2)
            k4 = rhs(1.0, block + k3)
            block = block + (k1 + 2 * k2 + 2 * k3 + k4) / 6.0
        return block.reshape(shape)

    def jacobi_field(
        self,
        p: np.ndarray,
        v: np.ndarray,
        j0: np.ndarray,
        dj0: np.ndarray,
        t: float = 1.0,
        n_steps: Optional[int] = None,
    ) -> Tuple[np.ndarray, np.ndarray]:
        """(J(t), J'(t)) along s -> exp_p(s v) for J(0) = j0 and covariant J'(0) = dj0.

        Columns of j0/dj0 are integrated together.
        """
        j0 = np.asarray(j0, dtype=float)
        dj0 = np.asarray(dj0, dtype=float)
        if self.model.flat:
            return j0 + t * dj0, dj0.copy()
        m = self.dim
        shape = j0.shape
        width = j0.reshape(m, -1).shape[1]

        def rhs(state: np.ndarray) -> np.ndarray:
            x, vel = state[:m], state[m : 2 * m]
            jac = state[2 * m : 2 * m + m * width].reshape(m, width)
            djac = state[2 * m + m * width :].reshape(m, width)
            gamma = self.christoffel(x)
            curvature = self.curvature_tensor(x)
            accel = -np.einsum("kij,i,j->k", gamma, vel, vel)
            d_jac = djac - np.einsum("kij,i,jl->kl", gamma, vel, jac)
            d_djac = -np.einsum("lijk,ia,j,k->la", curvature, jac, vel, vel) - np.einsum(
                "kij,i,jl->kl", gamma, vel, djac
            )
            return np.concatenate([vel, accel, d_jac.ravel(), d_djac.ravel()])

        steps = self.step_count(p, t * np.asarray(v), n_steps)
        state = np.concatenate([p, v, j0.reshape(m, width).ravel(), dj0.reshape(m, width).ravel()])
        dt = t / steps
        for _ in range(steps):
            state = rk4_step(rhs, state, dt)
            if not self.model.contains(state[:m]):
                raise LeftDomain("Jacobi field path left the chart")
        jac = state[2 * m : 2 * m + m * width].reshape(shape)
        djac = state[2 * m + m * width :].reshape(shape)
        return jac, djac

    # ------------------------------------------------------------------
    # Subspaces
    # ------------------------------------------------------------------

    def subspace_basis(self, p: np.ndarray, vectors: np.ndarray) -> SubspaceBasis:
        """Metric-orthonormal basis of the span of the given columns."""
        vectors = np.atleast_2d(np.asarray(vectors, dtype=float).T).T
        g = self.metric(p)
        lower = linalg.cholesky(g, lower=True)
        q, _ = np.linalg.qr(lower.T @ vectors)
        return SubspaceBasis(base=np.asarray(p, dtype=float), vectors=linalg.solve_triangular(lower.T, q, lower=False))

    def subspace_distance(self, first: SubspaceBasis, second: SubspaceBasis) -> float:
        """Largest principal angle between two equal-dimensional subspaces of one tangent space."""
        if first.dim != second.dim:
            raise DimensionMismatch(f"subspaces of dimension {first.dim} and {second.dim}")
        if not np.allclose(first.base, second.base, atol=1e-9):
            raise DimensionMismatch("subspaces live at different base points")
        if first.dim == 0:
            return 0.0
        if np.array_equal(first.vectors, second.vectors):
            return 0.0
        upper = linalg.cholesky(self.metric(first.base), lower=True).T
        angles = linalg.subspace_angles(upper @ first.vectors, upper @ second.vectors)
        return float(min(np.max(angles), np.pi / 2))

    def orthogonal_complement(self, basis: SubspaceBasis) -> SubspaceBasis:
        g = self.metric(basis.base)
        upper = linalg.cholesky(g, lower=True).T
        if basis.dim == 0:
            return SubspaceBasis(basis.base, orthonormal_basis(g))
        complement = linalg.null_space((upper @ basis.vectors).T)
        return SubspaceBasis(basis.base, linalg.solve_triangular(upper, complement, lower=False))
