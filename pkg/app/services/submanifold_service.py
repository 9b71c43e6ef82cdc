# app/services/submanifold_service.py - Frames, foot points and distances of parametrized submanifolds

import logging
import weakref
from dataclasses import dataclass, field
from typing import List, Optional, Tuple, Union

import numpy as np
from scipy import linalg

from app.core.exceptions import Degenerate, LeftDomain, NoConvergence, NotCompatible, OutsideTube
from app.models.geometry import SubspaceBasis
from app.models.submanifold import ParamSubmanifold
from app.services.geometry_kernel import GeometryKernel
from app.utils.numerics import cholesky_frame, metric_orthonormalize, orthonormal_basis
from app.utils.parallel import ordered_map

logger = logging.getLogger(__name__)


@dataclass
class FootPointResult:
    """Nearest point of a submanifold to a query point"""

    parameter: np.ndarray
    foot: np.ndarray
    distance: float
    normal_vector: np.ndarray  # log_foot(query), g-orthogonal to the tangent space


@dataclass
class GentleReport:
    normal_injectivity_margin: float
    curvature_sup_in_tube: float
    injectivity_proxy: float
    passed: bool
    truncated_directions: int = 0  # normal geodesics cut short by the chart
    caveat: str = "sampled heuristic"


@dataclass
class C1DistanceDetail:
    d1: float
    d0: float
    node_d1: np.ndarray
    node_d0: np.ndarray
    stable: bool = True  # refined sup within 5% of the coarse one
    notes: List[str] = field(default_factory=list)


class SubmanifoldService:
    """Submanifold geometry on top of a geometry kernel"""

    MIN_SINGULAR_VALUE = 1e-6
    STABILITY_TOLERANCE = 0.05
    VIOLATION_THRESHOLD = 1e-7
    SADDLE_RESTARTS = 3

    def __init__(self, kernel: GeometryKernel):
        self.kernel = kernel
        self.model = kernel.model
        self.config = kernel.config
        self._reference_normals: "weakref.WeakKeyDictionary[ParamSubmanifold, np.ndarray]" = weakref.WeakKeyDictionary()

    # ------------------------------------------------------------------
    # Frames
    # ------------------------------------------------------------------

    def tangent_frame(self, sub: ParamSubmanifold, s: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        """Metric-orthonormal tangent frame E and the triangular R with J = E R."""
        if sub.dim == 0:
            return np.zeros((sub.ambient_dim, 0)), np.zeros((0, 0))
        jac = sub.jacobian(s)
        if np.linalg.svd(jac, compute_uv=False).min() < self.MIN_SINGULAR_VALUE:
            raise Degenerate(f"{sub.label}: Jacobian loses rank at parameter {np.round(s, 6)}")
        return cholesky_frame(jac, self.kernel.metric(sub.evaluate(s)))

    def tangent_basis(self, sub: ParamSubmanifold, s: np.ndarray) -> SubspaceBasis:
        return SubspaceBasis(base=sub.evaluate(s), vectors=self.tangent_frame(sub, s)[0])

    def _reference(self, sub: ParamSubmanifold) -> np.ndarray:
        if sub not in self._reference_normals:
            center = 0.5 * (sub.lower + sub.upper)
            p = sub.evaluate(center)
            g = self.kernel.metric(p)
            self._reference_normals[sub] = linalg.null_space(sub.jacobian(center).T @ g)
        return self._reference_normals[sub]

    def normal_frame(self, sub: ParamSubmanifold, s: np.ndarray) -> np.ndarray:
        """Metric-orthonormal frame of the normal space, continuous over the grid.

        Half-dimensional submanifolds use I applied to the tangent frame; others
        project a fixed reference basis taken at the centre of the parameter box.
        """
        p = sub.evaluate(s)
        g = self.kernel.metric(p)
        if sub.dim == 0:
            return orthonormal_basis(g)
        frame, _ = self.tangent_frame(sub, s)
        projector = np.eye(sub.ambient_dim) - frame @ frame.T @ g
        candidates = None
        if 2 * sub.dim == sub.ambient_dim:
            try:
                candidates = projector @ self.kernel.acs_at(p) @ frame
            except NotCompatible:
                candidates = None
        if candidates is None:
            candidates = projector @ self._reference(sub)
        try:
            return metric_orthonormalize(candidates, g)
        except np.linalg.LinAlgError as e:
            raise Degenerate(f"{sub.label}: normal frame degenerates at {np.round(s, 6)}") from e

    # ------------------------------------------------------------------
    # Foot points
    # ------------------------------------------------------------------

    def _screening_distances(self, sub: ParamSubmanifold, p: np.ndarray) -> np.ndarray:
        nodes = sub.grid_points
        if self.model.distance_field is not None:
            return self.kernel.distances(p, nodes)
        g = self.kernel.metric(p)
        diff = np.array([self.model.chart_difference(p, x) for x in nodes])
        return np.sqrt(np.einsum("ki,ij,kj->k", diff, g, diff))

    def _ordered_seeds(
        self, sub: ParamSubmanifold, p: np.ndarray, count: int, screening: Optional[np.ndarray] = None
    ) -> np.ndarray:
        params = sub.grid_parameters
        screening = self._screening_distances(sub, p) if screening is None else screening
        dist = np.round(screening, 12)
        keys = tuple(params[:, a] for a in reversed(range(sub.dim))) + (dist,)
        order = np.lexsort(keys)
        return order[:count]

    def _gauss_newton(self, sub: ParamSubmanifold, p: np.ndarray, s: np.ndarray) -> FootPointResult:
        tol = self.config.foot_point_tolerance
        s = np.array(s, dtype=float)
        for _ in range(self.config.foot_point_max_iter):
            foot = sub.evaluate(s)
            v = self.kernel.log_map(foot, p)
            if sub.dim == 0:
                break
            jac = sub.jacobian(s)
            g = self.kernel.metric(foot)
            step = np.linalg.solve(jac.T @ g @ jac, jac.T @ g @ v)
            # parameters may leave the box slightly; parametrizations extend past it
            s_next = sub.wrap(s + step, clip=False)
            moved = np.linalg.norm(sub.parameter_difference(s, s_next))
            s = s_next
            if moved <= tol * max(1.0, np.linalg.norm(s)):
                break
        else:
            jac = sub.jacobian(s)
            foot = sub.evaluate(s)
            v = self.kernel.log_map(foot, p)
            gradient = np.linalg.norm(jac.T @ self.kernel.metric(foot) @ v)
            if gradient > 1e-6 * (1.0 + self.kernel.norm(foot, v)):
                raise NoConvergence(f"foot point on {sub.label} did not converge (gradient {gradient:.2e})")
        foot = sub.evaluate(s)
        v = self.kernel.log_map(foot, p)
        return FootPointResult(parameter=s, foot=foot, distance=self.kernel.norm(foot, v), normal_vector=v)

    def _try_seed(self, sub: ParamSubmanifold, p: np.ndarray, s: np.ndarray) -> Optional[FootPointResult]:
        try:
            return self._gauss_newton(sub, p, s)
        except (NoConvergence, LeftDomain) as e:
            logger.debug(f"foot-point seed {np.round(s, 6)} on {sub.label} failed: {e}")
            return None

    @staticmethod
    def _better(candidate: Optional[FootPointResult], best: Optional[FootPointResult]) -> bool:
        if candidate is None:
            return False
        if best is None or candidate.distance < best.distance - 1e-13:
            return True
        return abs(candidate.distance - best.distance) <= 1e-13 and tuple(candidate.parameter) < tuple(best.parameter)

    def _distance_hessian(self, sub: ParamSubmanifold, result: FootPointResult) -> np.ndarray:
        """Hessian in s of half the squared distance at a critical point: J^T g J - g(nabla dJ, v)."""
        s = result.parameter
        jac = sub.jacobian(s)
        g = self.kernel.metric(result.foot)
        covariant = sub.hessian(s) + np.einsum("kij,ia,jb->kab", self.kernel.christoffel(result.foot), jac, jac)
        second = np.einsum("kab,kl,l->ab", covariant, g, result.normal_vector)
        hessian = jac.T @ g @ jac - second
        return 0.5 * (hessian + hessian.T)

    def _leave_saddle(self, sub: ParamSubmanifold, p: np.ndarray, best: FootPointResult) -> FootPointResult:
        """Restart from both sides of a critical point that is not a local minimum."""
        spacing = np.array(
            [
                (hi - lo) / max(count - (0 if wraps else 1), 1)
                for lo, hi, count, wraps in zip(sub.lower, sub.upper, sub.resolution, sub.periodic)
            ]
        )
        for _ in range(self.SADDLE_RESTARTS):
            if sub.dim == 0 or best.distance == 0.0:
                return best
            values, vectors = np.linalg.eigh(self._distance_hessian(sub, best))
            if values[0] >= 0.0:
                return best
            shift = 0.5 * spacing * vectors[:, 0]
            improved = best
            for sign in (1.0, -1.0):
                candidate = self._try_seed(sub, p, best.parameter + sign * shift)
                if self._better(candidate, improved):
                    improved = candidate
            if improved is best:
                return best
            logger.debug(f"foot point on {sub.label} left a critical point at {best.distance:.6e}")
            best = improved
        return best

    def closest_point(self, sub: ParamSubmanifold, p: np.ndarray) -> FootPointResult:
        """Global nearest point by Gauss-Newton.

        Runs start from the best screened grid nodes; every other node that is
        closer than the current winner is tried as well, and a winner that is
        not a local minimum of the distance is moved off its critical point.
        """
        p = np.asarray(p, dtype=float)
        screening = self._screening_distances(sub, p)
        order = self._ordered_seeds(sub, p, sub.node_count, screening)
        count = max(1, self.config.foot_point_seeds)
        best: Optional[FootPointResult] = None
        for rank, index in enumerate(order):
            if rank >= count and best is not None and screening[index] >= best.distance - 1e-12:
                break
            candidate = self._try_seed(sub, p, sub.grid_parameters[index])
            if self._better(candidate, best):
                best = candidate
        if best is None:
            raise NoConvergence(f"no foot-point seed on {sub.label} converged")
        best = self._leave_saddle(sub, p, best)
        if best.distance > sub.tube_radius:
            raise OutsideTube(
                f"point {np.round(p, 6)} is at distance {best.distance:.4f} from {sub.label} "
                f"(tube radius {sub.tube_radius})"
            )
        return best

    # ------------------------------------------------------------------
    # Extrinsic curvature and isotropy
    # ------------------------------------------------------------------

    def second_fundamental_form(
        self, sub: ParamSubmanifold, s: np.ndarray, xi: Union[int, np.ndarray], step: float = 1e-4
    ) -> np.ndarray:
        """Matrix of g(II(e_a, e_b), xi) in the orthonormal tangent frame.

        xi is a normal vector or the index of a column of the normal frame.
        """
        s = np.asarray(s, dtype=float)
        if isinstance(xi, (int, np.integer)):
            xi = self.normal_frame(sub, s)[:, int(xi)]
        p = sub.evaluate(s)
        g = self.kernel.metric(p)
        jac = sub.jacobian(s)
        _, upper = self.tangent_frame(sub, s)
        second = sub.hessian(s, step)
        gamma = self.kernel.christoffel(p)
        covariant = second + np.einsum("kij,ia,jb->kab", gamma, jac, jac)
        h = np.einsum("kab,kl,l->ab", covariant, g, np.asarray(xi, dtype=float))
        inv = np.linalg.inv(upper)
        result = inv.T @ h @ inv
        return 0.5 * (result + result.T)

    def isotropy_defect(self, sub: ParamSubmanifold) -> float:
        """sup over nodes and frame pairs of |omega(e_i, e_j)|"""
        if sub.dim < 2:
            return 0.0
        worst = 0.0
        for s, p in zip(sub.grid_parameters, sub.grid_points):
            frame, _ = self.tangent_frame(sub, s)
            worst = max(worst, float(np.max(np.abs(frame.T @ self.kernel.omega(p) @ frame))))
        return worst

    # ------------------------------------------------------------------
    # Distances between submanifolds
    # ------------------------------------------------------------------

    def _node_distances(self, base: ParamSubmanifold, other: ParamSubmanifold, s: np.ndarray) -> Tuple[float, float]:
        x_prime = other.evaluate(s)
        foot = self.closest_point(base, x_prime)
        transported = self.kernel.transport_along_geodesic(
            foot.foot, foot.normal_vector, self.tangent_frame(base, foot.parameter)[0]
        )
        if foot.distance == 0.0:
            moved = SubspaceBasis(x_prime, transported)
        else:
            moved = self.kernel.subspace_basis(x_prime, transported)
        angle = self.kernel.subspace_distance(moved, self.tangent_basis(other, s))
        return max(foot.distance, angle), foot.distance

    def _sup_over_grid(self, base: ParamSubmanifold, other: ParamSubmanifold) -> Tuple[np.ndarray, np.ndarray]:
        rows = ordered_map(
            lambda s: self._node_distances(base, other, s), other.grid_parameters, self.config.threads
        )
        values = np.array(rows).reshape(-1, 2)
        return values[:, 0], values[:, 1]

    def c1_distance_detail(self, base: ParamSubmanifold, other: ParamSubmanifold) -> C1DistanceDetail:
        """C1 and C0 distance of other from base, with per-node values.

        other has to be a section over base: every node must project into base's tube.
        """
        if base.dim != other.dim:
            raise Degenerate(f"cannot compare a {base.dim}-dimensional and a {other.dim}-dimensional submanifold")
        node_d1, node_d0 = self._sup_over_grid(base, other)
        d1, d0 = float(node_d1.max()), float(node_d0.max())
        detail = C1DistanceDetail(d1=d1, d0=d0, node_d1=node_d1, node_d0=node_d0)
        if not self.config.sup_refinement or other.dim == 0 or d1 == 0.0:
            return detail
        fine_d1, fine_d0 = self._sup_over_grid(base, other.refined())
        refined_d1, refined_d0 = max(d1, float(fine_d1.max())), max(d0, float(fine_d0.max()))
        if refined_d1 - d1 > self.STABILITY_TOLERANCE * refined_d1:
            detail.stable = False
            message = f"sup of d1({base.label}, {other.label}) moved from {d1:.3e} to {refined_d1:.3e} on refinement"
            detail.notes.append(message)
            logger.warning(message)
        detail.d1, detail.d0 = refined_d1, refined_d0
        return detail

    def c1_distance(self, base: ParamSubmanifold, other: ParamSubmanifold) -> Tuple[float, float]:
        detail = self.c1_distance_detail(base, other)
        return detail.d1, detail.d0

    # ------------------------------------------------------------------
    # Gentleness
    # ------------------------------------------------------------------

    def _normal_scan(self, sub: ParamSubmanifold, index: int, direction: np.ndarray) -> Tuple[Optional[float], bool]:
        """First radius where another node is closer than the normal geodesic length."""
        radius = self.config.gentle_scan_radius
        steps = int(np.ceil(self.config.gentle_samples_per_unit * radius))
        start = sub.grid_points[index]
        path = self.kernel.geodesic(start, radius * direction, n_steps=steps, truncate=True)
        truncated = len(path.times) < steps + 1
        others = np.delete(sub.grid_points, index, axis=0)
        if others.size == 0:
            return None, truncated
        previous = None
        for t, q in zip(path.times, path.points):
            r = t * radius
            gap = float(np.min(self.kernel.distances(q, others))) - r
            if gap < -self.VIOLATION_THRESHOLD:
                if previous is None:
                    return r, truncated
                r0, gap0 = previous
                return r0 + (r - r0) * gap0 / (gap0 - gap), truncated
            previous = (r, gap)
        return None, truncated

    def _curvature_samples(self, sub: ParamSubmanifold, index: int, direction: np.ndarray) -> float:
        if self.model.flat:
            return 0.0
        start = sub.grid_points[index]
        worst = 0.0
        for r in (0.0, 0.25, 0.5, 0.75, 1.0):
            try:
                q = self.kernel.exp_map(start, r * direction)
            except LeftDomain:
                break
            frame = orthonormal_basis(self.kernel.metric(q))
            m = self.model.dim
            for i in range(m):
                for j in range(i + 1, m):
                    k = self.kernel.sectional_curvature(q, frame[:, [i, j]])
                    worst = max(worst, abs(k))
        return worst

    def gentle_check(self, sub: ParamSubmanifold) -> GentleReport:
        """Sampled normal-injectivity, curvature and injectivity diagnostics."""
        radius = self.config.gentle_scan_radius
        margin = radius
        curvature = 0.0
        truncated = 0
        for index, s in enumerate(sub.grid_parameters):
            normals = self.normal_frame(sub, s)
            for j in range(normals.shape[1]):
                for sign in (1.0, -1.0):
                    direction = sign * normals[:, j]
                    crossing, cut = self._normal_scan(sub, index, direction)
                    if cut:
                        truncated += 1
                        if crossing is None:
                            continue
                    if crossing is not None:
                        margin = min(margin, crossing)
                    curvature = max(curvature, self._curvature_samples(sub, index, direction))
        injectivity = float(self.model.injectivity_radius)
        passed = (
            margin >= 1.0
            and curvature <= 1.0 + self.config.curvature_tolerance
            and injectivity >= 1.0
        )
        if truncated:
            logger.warning(f"gentle check on {sub.label}: {truncated} normal directions left the chart")
        logger.info(
            f"gentle check on {sub.label}: margin {margin:.4f}, curvature {curvature:.4f}, "
            f"injectivity {injectivity:.4f}, passed={passed}"
        )
        return GentleReport(
            normal_injectivity_margin=float(margin),
            curvature_sup_in_tube=float(curvature),
            injectivity_proxy=injectivity,
            passed=bool(passed),
            truncated_directions=truncated,
        )
