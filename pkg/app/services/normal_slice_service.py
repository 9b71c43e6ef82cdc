# app/services/normal_slice_service.py - Normal-slice maps phi_g between a member and the average

import logging
from dataclasses import dataclass
from typing import Optional, Sequence, Tuple

import numpy as np

from app.core.exceptions import Degenerate, LeftDomain, MultipleLifts, NoConvergence, OutsideTube
from app.models.family import WeightedFamily
from app.models.geometry import SubspaceBasis
from app.models.submanifold import ParamSubmanifold, is_normal_section_over
from app.services.submanifold_service import SubmanifoldService
from app.utils.numerics import orthonormal_basis

logger = logging.getLogger(__name__)


@dataclass
class LiftResult:
    parameter: np.ndarray  # parameter on N
    point: np.ndarray  # q0
    iterations: int
    jacobian: Optional[np.ndarray] = None  # last Broyden estimate, a warm start for nearby lifts


@dataclass
class PhiDecomposition:
    """p = exp_{p0}(v) over N_g and its image exp_{q0}(v_par) over N"""

    point: np.ndarray
    base_parameter: np.ndarray  # s0 on N_g
    base_point: np.ndarray  # p0
    normal_vector: np.ndarray  # v
    lift_parameter: np.ndarray
    lift_point: np.ndarray  # q0, the point of N in the normal slice through p0
    transported: np.ndarray  # v carried from p0 to q0
    image: np.ndarray
    lift_jacobian: Optional[np.ndarray] = None


@dataclass
class BundleSplitting:
    point: np.ndarray
    foot: np.ndarray
    distance: float
    vert: SubspaceBasis
    hor: SubspaceBasis
    avert: SubspaceBasis
    ahor: SubspaceBasis
    vert_avert_distance: float
    lc: Optional[SubspaceBasis] = None  # horizontal space of the normal connection


class NormalSliceService:
    """phi_g: exp_{p0}(v) -> exp_{q0}(transported v), for N a section over the normal bundle of N_g"""

    def __init__(self, submanifolds: SubmanifoldService):
        self.submanifolds = submanifolds
        self.kernel = submanifolds.kernel
        self.model = submanifolds.model
        self.config = submanifolds.config

    # ------------------------------------------------------------------
    # Bundle splitting
    # ------------------------------------------------------------------

    def _normal_transport_step(
        self, sub: ParamSubmanifold, s: np.ndarray, s_next: np.ndarray, v: np.ndarray
    ) -> np.ndarray:
        """One first-order step of normal-connection transport from sub(s) to sub(s_next)."""
        start, end = sub.evaluate(s), sub.evaluate(s_next)
        gamma = self.kernel.christoffel(start)
        moved = v - np.einsum("kij,i,j->k", gamma, self.model.chart_difference(start, end), v)
        frame = self.submanifolds.normal_frame(sub, s_next)
        return frame @ (frame.T @ self.kernel.metric(end) @ moved)

    def bundle_splitting(self, N_g: ParamSubmanifold, q: np.ndarray, with_lc: bool = False) -> BundleSplitting:
        q = np.asarray(q, dtype=float)
        foot = self.submanifolds.closest_point(N_g, q)
        s, p0, v = foot.parameter, foot.foot, foot.normal_vector
        normals = self.submanifolds.normal_frame(N_g, s)
        if foot.distance == 0.0:
            vert = SubspaceBasis(q, normals)
            avert = SubspaceBasis(q, normals.copy())
        else:
            vert = self.kernel.subspace_basis(q, self.kernel.transport_along_geodesic(p0, v, normals))
            avert = self.kernel.subspace_basis(q, self.kernel.exp_differential(p0, v, normals))
        splitting = BundleSplitting(
            point=q,
            foot=p0,
            distance=foot.distance,
            vert=vert,
            hor=self.kernel.orthogonal_complement(vert),
            avert=avert,
            ahor=self.kernel.orthogonal_complement(avert),
            vert_avert_distance=self.kernel.subspace_distance(vert, avert),
        )
        if with_lc and N_g.dim > 0:
            h = self.config.fd_step
            columns = []
            for a in range(N_g.dim):
                e = np.zeros(N_g.dim)
                e[a] = h
                ends = []
                for sign in (1.0, -1.0):
                    s_next = s + sign * e
                    carried = self._normal_transport_step(N_g, s, s_next, v)
                    ends.append(self.kernel.exp_map(N_g.evaluate(s_next), carried))
                columns.append(self.model.chart_difference(ends[1], ends[0]) / (2.0 * h))
            splitting.lc = self.kernel.subspace_basis(q, np.stack(columns, axis=-1))
        return splitting

    # ------------------------------------------------------------------
    # Lift to the section
    # ------------------------------------------------------------------

    def _lift_residual(self, N_g: ParamSubmanifold, N: ParamSubmanifold, s0: np.ndarray, s: np.ndarray) -> np.ndarray:
        foot = self.submanifolds.closest_point(N_g, N.evaluate(s))
        return N_g.parameter_difference(s0, foot.parameter)

    def _lift_jacobian(self, N_g: ParamSubmanifold, N: ParamSubmanifold, s0: np.ndarray, s: np.ndarray) -> np.ndarray:
        h = N.jacobian_step
        columns = []
        for a in range(N.dim):
            e = np.zeros(N.dim)
            e[a] = h
            plus = self._lift_residual(N_g, N, s0, s + e)
            minus = self._lift_residual(N_g, N, s0, s - e)
            columns.append((plus - minus) / (2.0 * h))
        return np.stack(columns, axis=-1)

    def _solve_lift(
        self, N_g: ParamSubmanifold, N: ParamSubmanifold, s0: np.ndarray, start: np.ndarray, jacobian: np.ndarray
    ) -> Tuple[np.ndarray, np.ndarray, int]:
        """Broyden iteration on pi_{N_g}(N(s)) = N_g(s0)."""
        tol = self.config.lift_tolerance * max(1.0, float(np.linalg.norm(s0)))
        s = np.array(start, dtype=float)
        r = self._lift_residual(N_g, N, s0, s)
        jac = jacobian.copy()
        for iteration in range(self.config.lift_max_iter):
            if np.linalg.norm(r) <= tol:
                return s, jac, iteration
            s_next = N.wrap(s - np.linalg.solve(jac, r), clip=False)
            r_next = self._lift_residual(N_g, N, s0, s_next)
            step = N.parameter_difference(s, s_next)
            size = float(step @ step)
            if size > 0.0:
                jac = jac + np.outer(r_next - r - jac @ step, step) / size
            s, r = s_next, r_next
        if np.linalg.norm(r) <= tol:
            return s, jac, self.config.lift_max_iter
        raise NoConvergence(f"lift onto {N.label} stalled at residual {np.linalg.norm(r):.2e}")

    def lift_to_section(
        self,
        N_g: ParamSubmanifold,
        N: ParamSubmanifold,
        p0: np.ndarray,
        base_parameter: Optional[np.ndarray] = None,
        seeds: Optional[int] = None,
        start: Optional[np.ndarray] = None,
        jacobian: Optional[np.ndarray] = None,
    ) -> LiftResult:
        """Point of N in the normal slice of N_g through p0.

        jacobian warm-starts the Broyden solve; without it the first seed
        starts from a finite-difference Jacobian.
        """
        if base_parameter is None:
            base_parameter = self.submanifolds.closest_point(N_g, p0).parameter
        s0 = np.asarray(base_parameter, dtype=float)
        if N.dim == 0:
            return LiftResult(parameter=s0.copy(), point=N.evaluate(s0), iterations=0)
        if is_normal_section_over(N, N_g):
            # fibres of a normal section over N_g already lie in its normal slices
            return LiftResult(parameter=s0.copy(), point=N.evaluate(s0), iterations=0)
        if start is not None:
            starts = [np.asarray(start, dtype=float)]
        else:
            count = max(1, self.config.lift_seeds if seeds is None else seeds)
            nodes = self.submanifolds._ordered_seeds(N, N_g.evaluate(s0), count)
            starts = [N.grid_parameters[k] for k in nodes]
        solutions = []
        failures = []
        for seed in starts:
            try:
                initial = jacobian if jacobian is not None else self._lift_jacobian(N_g, N, s0, seed)
                s, jac, iterations = self._solve_lift(N_g, N, s0, seed, initial)
            except (NoConvergence, OutsideTube, LeftDomain, np.linalg.LinAlgError) as e:
                failures.append(str(e))
                continue
            jacobian = jac
            solutions.append(LiftResult(parameter=s, point=N.evaluate(s), iterations=iterations))
        if not solutions:
            raise NoConvergence(f"no lift onto {N.label} converged: {failures[-1] if failures else 'no seeds'}")
        first = solutions[0]
        first.jacobian = jacobian
        for other in solutions[1:]:
            gap = np.linalg.norm(self.model.chart_difference(first.point, other.point))
            if gap > 10.0 * self.config.lift_tolerance * max(1.0, float(np.linalg.norm(first.point))):
                raise MultipleLifts(f"{N.label} meets the slice of {N_g.label} at two points {gap:.2e} apart")
        return first

    # ------------------------------------------------------------------
    # phi_g and its inverse
    # ------------------------------------------------------------------

    def decompose(
        self,
        N_g: ParamSubmanifold,
        N: ParamSubmanifold,
        p: np.ndarray,
        lift_start: Optional[np.ndarray] = None,
        seeds: Optional[int] = None,
        lift_jacobian: Optional[np.ndarray] = None,
    ) -> PhiDecomposition:
        p = np.asarray(p, dtype=float)
        foot = self.submanifolds.closest_point(N_g, p)
        lift = self.lift_to_section(
            N_g, N, foot.foot, foot.parameter, seeds=seeds, start=lift_start, jacobian=lift_jacobian
        )
        connecting = self.model.chart_difference(foot.foot, lift.point)
        if self.model.flat or not np.any(connecting):
            transported = foot.normal_vector.copy()
        else:
            transported = self.kernel.transport_along_geodesic(
                foot.foot, self.kernel.log_map(foot.foot, lift.point), foot.normal_vector
            )
        return PhiDecomposition(
            point=p,
            base_parameter=foot.parameter,
            base_point=foot.foot,
            normal_vector=foot.normal_vector,
            lift_parameter=lift.parameter,
            lift_point=lift.point,
            transported=transported,
            image=self.kernel.exp_map(lift.point, transported),
            lift_jacobian=lift.jacobian,
        )

    def phi_g(self, N_g: ParamSubmanifold, N: ParamSubmanifold, p: np.ndarray) -> np.ndarray:
        return self.decompose(N_g, N, p).image

    def _reverse_guess(self, N_g: ParamSubmanifold, N: ParamSubmanifold, q: np.ndarray) -> np.ndarray:
        on_average = self.submanifolds.closest_point(N, q)
        q0, u = on_average.foot, on_average.normal_vector
        p0 = self.submanifolds.closest_point(N_g, q0).foot
        connecting = self.model.chart_difference(q0, p0)
        if not self.model.flat and np.any(connecting):
            u = self.kernel.transport_along_geodesic(q0, self.kernel.log_map(q0, p0), u)
        return self.kernel.exp_map(p0, u)

    def inverse_tolerance(self) -> float:
        if self.model.flat:
            return self.config.inverse_tolerance
        return max(self.config.inverse_tolerance, 10.0 * self.config.log_tolerance)

    def invert(
        self,
        N_g: ParamSubmanifold,
        N: ParamSubmanifold,
        q: np.ndarray,
        guess: Optional[np.ndarray] = None,
        jacobian: Optional[np.ndarray] = None,
        chord: bool = False,
    ) -> Tuple[PhiDecomposition, np.ndarray]:
        """phi_g^{-1}(q) as a decomposition, plus the Jacobian estimate used.

        Broyden updates start from the given Jacobian, or the identity since
        phi_g is C1-close to it; with chord=True the starting Jacobian is kept fixed. A stalled run retries
        once with a finite-difference Jacobian.
        """
        q = np.asarray(q, dtype=float)
        tol = self.inverse_tolerance()
        p = self._reverse_guess(N_g, N, q) if guess is None else np.asarray(guess, dtype=float)
        jac = jacobian if jacobian is not None else np.eye(self.kernel.dim)
        decomposition = self.decompose(N_g, N, p)
        r = self.model.chart_difference(q, decomposition.image)
        best = (np.linalg.norm(r), decomposition)
        for attempt in range(2):
            for _ in range(self.config.inverse_max_iter):
                if np.linalg.norm(r) <= tol:
                    return decomposition, jac
                step = -np.linalg.solve(jac, r)
                candidate = self.decompose(
                    N_g, N, p + step, lift_start=decomposition.lift_parameter, lift_jacobian=decomposition.lift_jacobian
                )
                r_next = self.model.chart_difference(q, candidate.image)
                if not chord:
                    jac = jac + np.outer(r_next - r - jac @ step, step) / float(step @ step)
                p, r, decomposition = candidate.point, r_next, candidate
                if np.linalg.norm(r) < best[0]:
                    best = (np.linalg.norm(r), decomposition)
            if attempt == 0:
                logger.debug(f"phi inverse on {N_g.label}: restarting with a finite-difference Jacobian")
                p, decomposition = best[1].point, best[1]
                r = self.model.chart_difference(q, decomposition.image)
                jac = self.phi_jacobian(N_g, N, p)
        residual, decomposition = best
        if residual <= 1e3 * tol:
            logger.debug(f"phi inverse on {N_g.label} accepted at residual {residual:.2e}")
            return decomposition, jac
        raise NoConvergence(f"phi inverse for {N_g.label} stalled at residual {residual:.2e}")

    def phi_g_inverse(self, N_g: ParamSubmanifold, N: ParamSubmanifold, q: np.ndarray, chord: bool = False) -> np.ndarray:
        return self.invert(N_g, N, q, chord=chord)[0].point

    def vertical_radius(self, N_g: ParamSubmanifold, N: ParamSubmanifold, q: np.ndarray) -> float:
        """|v_par| of q = exp_{q0}(v_par) in the vertical tube of N."""
        decomposition, _ = self.invert(N_g, N, q)
        return self.kernel.norm(decomposition.lift_point, decomposition.transported)

    # ------------------------------------------------------------------
    # Differentials and pulled-back forms
    # ------------------------------------------------------------------

    def neighbour_decompositions(
        self, N_g: ParamSubmanifold, N: ParamSubmanifold, center: PhiDecomposition, step: float
    ) -> list[Tuple[PhiDecomposition, PhiDecomposition]]:
        """Decompositions at p +- step e_i, warm-started from the centre."""
        warm = {"lift_start": center.lift_parameter, "lift_jacobian": center.lift_jacobian}
        pairs = []
        for i in range(self.kernel.dim):
            e = np.zeros(self.kernel.dim)
            e[i] = step
            plus = self.decompose(N_g, N, center.point + e, **warm)
            minus = self.decompose(N_g, N, center.point - e, **warm)
            pairs.append((plus, minus))
        return pairs

    def phi_jacobian(
        self, N_g: ParamSubmanifold, N: ParamSubmanifold, p: np.ndarray, step: Optional[float] = None
    ) -> np.ndarray:
        """Chart Jacobian of phi_g at p by central differences."""
        step = self.config.homotopy_step if step is None else step
        center = self.decompose(N_g, N, p)
        pairs = self.neighbour_decompositions(N_g, N, center, step)
        columns = [self.model.chart_difference(minus.image, plus.image) / (2.0 * step) for plus, minus in pairs]
        return np.stack(columns, axis=-1)

    def pushforward_phi(
        self, N_g: ParamSubmanifold, N: ParamSubmanifold, p: np.ndarray, X: np.ndarray, step: Optional[float] = None
    ) -> np.ndarray:
        """(phi_g)_* X by a central difference along the geodesic exp_p(hX)."""
        h = self.config.pushforward_step if step is None else step
        X = np.asarray(X, dtype=float)
        center = self.decompose(N_g, N, p)
        warm = {"lift_start": center.lift_parameter, "lift_jacobian": center.lift_jacobian}
        plus = self.decompose(N_g, N, self.kernel.exp_map(p, h * X), **warm)
        minus = self.decompose(N_g, N, self.kernel.exp_map(p, -h * X), **warm)
        return self.model.chart_difference(minus.image, plus.image) / (2.0 * h)

    def omega_g_at(
        self,
        N_g: ParamSubmanifold,
        N: ParamSubmanifold,
        q: np.ndarray,
        X: Optional[np.ndarray] = None,
        Y: Optional[np.ndarray] = None,
        radius: Optional[float] = None,
    ):
        """Matrix of (phi_g^{-1})^* omega at q, or its value on (X, Y).

        With radius given, q must lie within that vertical distance of N.
        """
        decomposition, _ = self.invert(N_g, N, q)
        if radius is not None:
            height = self.kernel.norm(decomposition.lift_point, decomposition.transported)
            if height > radius:
                raise OutsideTube(f"{np.round(q, 6)} is {height:.4f} from {N.label} along Vert of {N_g.label}")
        jac = self.phi_jacobian(N_g, N, decomposition.point)
        inverse = np.linalg.inv(jac)
        form = inverse.T @ self.kernel.omega(decomposition.point) @ inverse
        form = 0.5 * (form - form.T)
        if X is None:
            return form
        return float(np.asarray(X) @ form @ np.asarray(Y))

    def omega_avg_at(self, family: WeightedFamily, N: ParamSubmanifold, q: np.ndarray) -> np.ndarray:
        total = np.zeros((self.kernel.dim, self.kernel.dim))
        for member in family.members:
            total = total + member.weight * self.omega_g_at(member.submanifold, N, q)
        return total

    def omega_t_at(
        self,
        family: WeightedFamily,
        N: ParamSubmanifold,
        q: np.ndarray,
        t: float,
        average: Optional[np.ndarray] = None,
    ) -> np.ndarray:
        base = self.kernel.omega(q)
        if average is None:
            average = self.omega_avg_at(family, N, q)
        return base + t * (average - base)

    def nondegeneracy_certificate(
        self,
        family: WeightedFamily,
        N: ParamSubmanifold,
        q: np.ndarray,
        t_values: Sequence[float] = (0.0, 0.25, 0.5, 0.75, 1.0),
        samples: int = 16,
        rng: Optional[np.random.Generator] = None,
        average: Optional[np.ndarray] = None,
    ) -> float:
        """min of omega_t(X, IX) over unit X and the given times; must stay positive."""
        q = np.asarray(q, dtype=float)
        rng = rng or np.random.default_rng(self.config.verifier_seed)
        g = self.kernel.metric(q)
        acs = self.kernel.acs_at(q)
        basis = orthonormal_basis(g)
        directions = [basis[:, i] for i in range(self.kernel.dim)]
        for _ in range(samples):
            w = basis @ rng.standard_normal(self.kernel.dim)
            directions.append(w / self.kernel.norm(q, w))
        if average is None:
            average = self.omega_avg_at(family, N, q)
        worst = np.inf
        for t in t_values:
            form = self.omega_t_at(family, N, q, t, average=average)
            for X in directions:
                worst = min(worst, float(X @ form @ acs @ X))
        if worst <= 0.0:
            raise Degenerate(f"omega_t(X, IX) = {worst:.3e} at {np.round(q, 6)}")
        return worst
