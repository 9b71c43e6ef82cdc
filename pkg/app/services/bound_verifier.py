# app/services/bound_verifier.py - Randomized numeric checks of the averaging estimates

"""
Every verify_* method samples instances that meet the hypotheses of one
estimate, measures both sides and files the outcome as BoundCheck records.
Instances that miss a hypothesis count as rejections; nothing here raises for
a failed precondition except the curve-growth guard on L(gamma).

Trials draw from their own generator seeded by (verifier_seed, stream, trial),
so reports do not depend on the thread count.
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, List, Optional, Tuple

import numpy as np
from scipy import linalg

from app.core.config import Settings
from app.core.exceptions import DomainError, GeometryError
from app.models.checks import (
    BoundCheck,
    CheckStatus,
    lower_bound_check,
    upper_bound_check,
    worst_status,
)
from app.models.family import WeightedFamily
from app.models.geometry import SubspaceBasis
from app.models.manifold import AlmostKaehlerModel
from app.models.submanifold import ParamSubmanifold
from app.services import constants_service
from app.services.geometry_kernel import GeometryKernel
from app.services.moser_service import MoserService, PrimitiveData
from app.services.normal_slice_service import NormalSliceService
from app.services.submanifold_service import GentleReport, SubmanifoldService
from app.utils.numerics import orthonormal_basis
from app.utils.parallel import ordered_map

logger = logging.getLogger(__name__)

# generator streams, one per verifier
_TUBE, _HESSIAN, _TRIANGLE, _PUSHFORWARD, _CURVES, _FORMS, _MOMENT = range(7)

PUSHFORWARD_CLASSES = ("tangent", "almost_vertical", "strong_jacobi", "general")


@dataclass
class VerifierReport:
    """Outcome of one randomized verifier run"""

    name: str
    trials: int = 0
    rejections: int = 0
    checks: List[BoundCheck] = field(default_factory=list)
    notes: List[str] = field(default_factory=list)
    values: Dict[str, float] = field(default_factory=dict)  # measured scalars worth reporting
    instances: List[Any] = field(default_factory=list)  # not serialized

    @property
    def worst_margin(self) -> Optional[float]:
        return min((c.margin for c in self.checks), default=None)

    @property
    def failures(self) -> List[BoundCheck]:
        return [c for c in self.checks if c.status == CheckStatus.FAIL]

    @property
    def inconclusive(self) -> int:
        return sum(1 for c in self.checks if c.status == CheckStatus.INCONCLUSIVE)

    @property
    def status(self) -> CheckStatus:
        return worst_status(self.checks)

    def merge(self, other: "VerifierReport") -> None:
        self.trials += other.trials
        self.rejections += other.rejections
        self.checks.extend(other.checks)
        self.notes.extend(other.notes)
        self.instances.extend(other.instances)

    def summary(self) -> Dict[str, dict]:
        """Per check name: count, worst margin and the value/bound pair at the worst margin."""
        groups: Dict[str, dict] = {}
        for check in self.checks:
            entry = groups.setdefault(
                check.name, {"count": 0, "worst_margin": math.inf, "value": 0.0, "bound": 0.0, "kind": check.kind}
            )
            entry["count"] += 1
            if check.margin < entry["worst_margin"]:
                entry.update(worst_margin=check.margin, value=check.value, bound=check.bound)
        for name, entry in groups.items():
            entry["status"] = worst_status(c for c in self.checks if c.name == name).value
        return groups


@dataclass
class TriangleInstance:
    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    P_A: SubspaceBasis
    P_C: SubspaceBasis
    delta: float
    Ccal: float  # theta / d(A, C)
    theta: float  # d(P_A, transport of P_C to A)
    d_CA: float
    d_CB: float
    d_AB: float


@dataclass
class PushforwardInstance:
    member: str  # label of N_g
    average: str  # label of N
    point: np.ndarray  # p
    vector: np.ndarray  # unit X at p
    kind: str  # one of PUSHFORWARD_CLASSES
    epsilon: float
    L: float  # d(p, N_g)
    E: float  # d(p, phi_g(p))
    deviation: float


def triangle_lower_bound(Ccal: float, delta: float) -> float:
    """(10/11) / ((C + 6) sqrt(1 + tan^2 delta))"""
    return (10.0 / 11.0) * math.cos(delta) / (Ccal + 6.0)


def _block_norm(block: np.ndarray) -> Optional[float]:
    if block.size == 0:
        return None
    return float(np.linalg.norm(block, 2))


class BoundVerifier:
    """Hypothesis-conditioned sampling of the estimates on one model manifold"""

    TRIANGLE_MAX_CA = 0.15
    TRIANGLE_MAX_CB = 0.5
    TRIANGLE_MAX_CCAL = 2.0
    MEMBERSHIP_TOLERANCE = 1e-8
    MAX_ATTEMPTS_PER_TRIAL = 50
    PUSHFORWARD_MAX_L = 0.08
    INVARIANT_SPREAD = 1e-9

    def __init__(self, slices: NormalSliceService, moser: Optional[MoserService] = None):
        self.slices = slices
        self.moser = moser or MoserService(slices)
        self.submanifolds = slices.submanifolds
        self.kernel = slices.kernel
        self.model = slices.model
        self.config = slices.config

    @classmethod
    def for_model(cls, model: AlmostKaehlerModel, config: Optional[Settings] = None) -> "BoundVerifier":
        kernel = GeometryKernel(model, config)
        return cls(NormalSliceService(SubmanifoldService(kernel)))

    # ------------------------------------------------------------------
    # Helpers
    # ------------------------------------------------------------------

    @property
    def noise(self) -> float:
        return self.config.noise_floor_factor * self.config.noise_floor

    def _rng(self, stream: int, trial: int) -> np.random.Generator:
        return np.random.default_rng([self.config.verifier_seed, stream, trial])

    def _unit(self, p: np.ndarray, v: np.ndarray) -> np.ndarray:
        return v / self.kernel.norm(p, v)

    def _random_unit(self, p: np.ndarray, rng: np.random.Generator, frame: Optional[np.ndarray] = None) -> np.ndarray:
        """Uniform unit vector in the span of a metric-orthonormal frame (whole space by default)."""
        if frame is None:
            frame = orthonormal_basis(self.kernel.metric(p))
        coeffs = rng.standard_normal(frame.shape[1])
        return frame @ (coeffs / np.linalg.norm(coeffs))

    def _angle(self, p: np.ndarray, a: np.ndarray, b: np.ndarray) -> float:
        cos = self.kernel.inner(p, a, b) / (self.kernel.norm(p, a) * self.kernel.norm(p, b))
        return float(np.arccos(np.clip(cos, -1.0, 1.0)))

    def _angle_to_subspace(self, p: np.ndarray, v: np.ndarray, basis: SubspaceBasis) -> float:
        """Smallest angle between v and a nonzero vector of the subspace."""
        if basis.dim == 0:
            return math.pi / 2
        projection = basis.vectors @ (basis.vectors.T @ self.kernel.metric(p) @ v)
        return float(np.arctan2(self.kernel.norm(p, v - projection), self.kernel.norm(p, projection)))

    def _random_node(self, sub: ParamSubmanifold, rng: np.random.Generator) -> np.ndarray:
        return sub.grid_parameters[int(rng.integers(sub.node_count))]

    def _transport(self, start: np.ndarray, end: np.ndarray, vectors: np.ndarray) -> np.ndarray:
        """Parallel transport along the shortest geodesic from start to end."""
        if self.model.flat or not np.any(self.model.chart_difference(start, end)):
            return np.asarray(vectors, dtype=float).copy()
        return self.kernel.transport_along_geodesic(start, self.kernel.log_map(start, end), vectors)

    def second_fundamental_sup(self, sub: ParamSubmanifold) -> float:
        """sup over nodes of sqrt(sum_j |II_{nu_j}|^2), an upper estimate of |B|."""
        if sub.dim == 0:
            return 0.0
        worst = 0.0
        for s in sub.grid_parameters:
            normals = self.submanifolds.normal_frame(sub, s)
            total = sum(
                np.linalg.norm(self.submanifolds.second_fundamental_form(sub, s, normals[:, j]), 2) ** 2
                for j in range(normals.shape[1])
            )
            worst = max(worst, math.sqrt(total))
        return worst

    def _run_trials(
        self, report: VerifierReport, trials: int, trial: Callable[[int], Tuple[List[BoundCheck], Any]]
    ) -> VerifierReport:
        """Run independent trials in order; a trial returning no checks is a rejection."""
        outcomes = ordered_map(trial, range(trials), self.config.threads)
        for checks, instance in outcomes:
            if checks is None:
                report.rejections += 1
                if instance:
                    report.notes.append(str(instance))
                continue
            report.trials += 1
            report.checks.extend(checks)
            if instance is not None:
                report.instances.append(instance)
        logger.info(
            f"{report.name}: {report.trials} trials, {report.rejections} rejected, "
            f"{len(report.failures)} failures, {report.inconclusive} inconclusive"
        )
        return report

    # ------------------------------------------------------------------
    # Shape operator of parallel tubes
    # ------------------------------------------------------------------

    def tube_shape_deviation(
        self, sub: ParamSubmanifold, s: np.ndarray, xi: np.ndarray, t: float
    ) -> Tuple[np.ndarray, np.ndarray, int]:
        """t S(t) from N-Jacobi fields, the model matrix [[I, 0], [0, -t h]] and the vertical block size.

        Columns are ordered vertical first (normals orthogonal to xi), then tangent.
        """
        p0 = sub.evaluate(s)
        g0 = self.kernel.metric(p0)
        normals = self.submanifolds.normal_frame(sub, s)
        xi = self._unit(p0, xi)
        complement = linalg.null_space((normals.T @ g0 @ xi)[None, :])
        etas = normals @ complement
        if sub.dim:
            tangent, _ = self.submanifolds.tangent_frame(sub, s)
            h = self.submanifolds.second_fundamental_form(sub, s, xi)
        else:
            tangent, h = np.zeros((sub.ambient_dim, 0)), np.zeros((0, 0))
        k = etas.shape[1]
        j0 = np.hstack([np.zeros_like(etas), tangent])
        dj0 = np.hstack([etas, -tangent @ h])
        J, DJ = self.kernel.jacobi_field(p0, xi, j0, dj0, t=t)
        frame = self.kernel.transport_along_geodesic(p0, xi, np.hstack([etas, tangent]), t=t)
        q = self.kernel.exp_map(p0, t * xi)
        gq = self.kernel.metric(q)
        shape = (frame.T @ gq @ DJ) @ np.linalg.inv(frame.T @ gq @ J)
        target = linalg.block_diag(np.eye(k), -t * h)
        return t * shape, target, k

    def verify_tube_shape_operator(self, sub: ParamSubmanifold, t: float, trials: int = 200) -> VerifierReport:
        """Blockwise |t S(t) - [[I, 0], [0, tB]]| against [[16t^2, 16t^2], [16t^2, (22 + 2|B|^2) t^2]]."""
        report = VerifierReport(name="tube_shape_operator")
        B = self.second_fundamental_sup(sub)
        report.values.update(t=float(t), B_sup=B)
        limit = min(0.5, 1.0 / (2.0 * B)) if B > 0 else 0.5
        if t <= 0 or t > limit:
            report.rejections = trials
            report.notes.append(f"t = {t} outside (0, min(1/2, 1/(2|B|))] = (0, {limit:.4f}]")
            return report
        if self.model.curvature_bound_hint > 1.0:
            report.rejections = trials
            report.notes.append(f"sectional curvature bound {self.model.curvature_bound_hint} exceeds 1")
            return report
        small, large = 16.0 * t**2, (22.0 + 2.0 * B**2) * t**2

        def trial(index: int):
            rng = self._rng(_TUBE, index)
            s = self._random_node(sub, rng)
            xi = self._random_unit(sub.evaluate(s), rng, self.submanifolds.normal_frame(sub, s))
            try:
                scaled, target, k = self.tube_shape_deviation(sub, s, xi, t)
            except (GeometryError, np.linalg.LinAlgError) as e:
                return None, f"trial {index}: {e}"
            deviation = scaled - target
            note = f"trial {index}"
            checks = []
            for name, block, bound in (
                ("tS vertical block", deviation[:k, :k], small),
                ("tS vertical-tangent block", deviation[:k, k:], small),
                ("tS tangent-vertical block", deviation[k:, :k], small),
                ("tS tangent block", deviation[k:, k:], large),
            ):
                value = _block_norm(block)
                if value is not None:
                    checks.append(upper_bound_check(name, value, bound, self.noise, note))
            return checks, None

        return self._run_trials(report, trials, trial)

    # ------------------------------------------------------------------
    # Hessian cross terms of the squared distance
    # ------------------------------------------------------------------

    def _grad_P(self, sub: ParamSubmanifold, x: np.ndarray) -> np.ndarray:
        foot = self.submanifolds.closest_point(sub, x)
        if foot.distance == 0.0:
            return np.zeros(self.kernel.dim)
        return -self.kernel.log_map(x, foot.foot)

    def hessian_cross(self, sub: ParamSubmanifold, q: np.ndarray, v: np.ndarray, w: np.ndarray) -> float:
        """<nabla_v grad P_N, w> with the chart derivative taken by central differences."""
        h = self.config.fd_step
        derivative = (self._grad_P(sub, q + h * v) - self._grad_P(sub, q - h * v)) / (2.0 * h)
        covariant = derivative + np.einsum("kij,i,j->k", self.kernel.christoffel(q), v, self._grad_P(sub, q))
        return self.kernel.inner(q, covariant, w)

    def verify_hessian_cross(self, sub: ParamSubmanifold, t: float, trials: int = 200) -> VerifierReport:
        """|<H_N(v), w>| <= 16 t^2 for unit v in Hor, w in Vert at distance t from sub."""
        report = VerifierReport(name="hessian_cross")
        report.values["t"] = float(t)
        if t <= 0 or t > 1.0 / 3.0:
            report.rejections = trials
            report.notes.append(f"t = {t} outside (0, 1/3]")
            return report
        bound = 16.0 * t**2

        def trial(index: int):
            rng = self._rng(_HESSIAN, index)
            s = self._random_node(sub, rng)
            p0 = sub.evaluate(s)
            xi = self._random_unit(p0, rng, self.submanifolds.normal_frame(sub, s))
            try:
                q = self.kernel.exp_map(p0, t * xi)
                splitting = self.slices.bundle_splitting(sub, q)
                if splitting.hor.dim == 0:
                    return None, f"trial {index}: horizontal space is trivial"
                v = self._random_unit(q, rng, splitting.hor.vectors)
                w = self._random_unit(q, rng, splitting.vert.vectors)
                value = abs(self.hessian_cross(sub, q, v, w))
            except (GeometryError, np.linalg.LinAlgError) as e:
                return None, f"trial {index}: {e}"
            return [upper_bound_check("|<H(v), w>| <= 16 t^2", value, bound, self.noise, f"trial {index}")], None

        return self._run_trials(report, trials, trial)

    # ------------------------------------------------------------------
    # Geodesic triangles
    # ------------------------------------------------------------------

    def triangle_instance(
        self, A: np.ndarray, B: np.ndarray, C: np.ndarray, P_A: SubspaceBasis, P_C: SubspaceBasis
    ) -> Tuple[Optional[TriangleInstance], str]:
        """Measure delta and the constant C of a triangle, or say which hypothesis fails."""
        d_CA, d_CB = self.kernel.distance(C, A), self.kernel.distance(C, B)
        if not 0.0 < d_CA < self.TRIANGLE_MAX_CA:
            return None, f"d(C,A) = {d_CA:.4f} not in (0, 0.15)"
        if not 0.0 < d_CB < self.TRIANGLE_MAX_CB:
            return None, f"d(C,B) = {d_CB:.4f} not in (0, 0.5)"
        if P_A.dim != P_C.dim:
            return None, "P_A and P_C have different dimensions"
        AB, CB = self.kernel.log_map(A, B), self.kernel.log_map(C, B)
        for name, p, basis, vector in (("P_A", A, P_A, AB), ("P_C", C, P_C, CB)):
            if self._angle_to_subspace(p, vector, basis) > self.MEMBERSHIP_TOLERANCE:
                return None, f"{name} does not contain the direction to B"
        AC = self.kernel.log_map(A, C)
        delta = max(0.0, math.pi / 2 - self._angle_to_subspace(A, AC, P_A))
        moved = self.kernel.subspace_basis(A, self._transport(C, A, P_C.vectors))
        theta = self.kernel.subspace_distance(P_A, moved)
        Ccal = theta / d_CA
        if Ccal > self.TRIANGLE_MAX_CCAL:
            return None, f"C = {Ccal:.3f} exceeds 2"
        instance = TriangleInstance(
            A=np.asarray(A, dtype=float),
            B=np.asarray(B, dtype=float),
            C=np.asarray(C, dtype=float),
            P_A=P_A,
            P_C=P_C,
            delta=delta,
            Ccal=Ccal,
            theta=theta,
            d_CA=d_CA,
            d_CB=d_CB,
            d_AB=self.kernel.norm(A, AB),
        )
        return instance, ""

    def triangle_checks(self, instance: TriangleInstance, note: str = "") -> List[BoundCheck]:
        """The lower bound on d(C,B) and the lifted-chord estimates in T_A M."""
        A, B, C = instance.A, instance.B, instance.C
        d_CA, d_CB = instance.d_CA, instance.d_CB
        checks = [
            lower_bound_check(
                "d(C,B) >= (10/11) / ((C + 6) sqrt(1 + tan^2 delta))",
                d_CB,
                triangle_lower_bound(instance.Ccal, instance.delta),
                self.noise,
                note,
            )
        ]
        chord = self.kernel.log_map(A, B) - self.kernel.log_map(A, C)
        checks.append(upper_bound_check("|B~ - C~| < (11/10) d(C,B)", self.kernel.norm(A, chord), 1.1 * d_CB, self.noise, note))
        velocity = self._unit(C, self.kernel.log_map(C, B))
        carried = self._transport(C, A, velocity)
        checks.append(
            upper_bound_check("angle(B~ - C~, transported CB) < 4 d(C,A)", self._angle(A, chord, carried), 4.0 * d_CA, self.noise, note)
        )
        h = self.config.fd_step
        lifted = (
            self.kernel.log_map(A, self.kernel.exp_map(C, h * velocity))
            - self.kernel.log_map(A, self.kernel.exp_map(C, -h * velocity))
        ) / (2.0 * h)
        checks.append(
            upper_bound_check("angle(d log_A CB, B~ - C~) < 3 d(C,A)", self._angle(A, lifted, chord), 3.0 * d_CA, self.noise, note)
        )
        return checks

    def _sample_triangle(
        self, rng: np.random.Generator, subspace_dim: int
    ) -> Tuple[Optional[TriangleInstance], str]:
        m = self.kernel.dim
        C = self.model.sample_points(1, rng, shrink=0.25)[0]
        u, w = self._random_unit(C, rng), self._random_unit(C, rng)
        A = self.kernel.exp_map(C, rng.uniform(0.005, self.TRIANGLE_MAX_CA) * u)
        B = self.kernel.exp_map(C, rng.uniform(0.02, self.TRIANGLE_MAX_CB) * w)
        AB, CB = self.kernel.log_map(A, B), self.kernel.log_map(C, B)
        extra_C = rng.standard_normal((m, subspace_dim - 1))
        extra_A = self._transport(C, A, extra_C) + 0.05 * rng.standard_normal((m, subspace_dim - 1))
        P_C = self.kernel.subspace_basis(C, np.column_stack([CB, extra_C]))
        P_A = self.kernel.subspace_basis(A, np.column_stack([AB, extra_A]))
        return self.triangle_instance(A, B, C, P_A, P_C)

    def verify_triangle_bound(self, trials: int = 500, subspace_dim: int = 1) -> VerifierReport:
        """Rejection-sample triangles meeting the hypotheses until `trials` are accepted."""
        report = VerifierReport(name="triangle_bound")
        if not 1 <= subspace_dim < self.kernel.dim:
            report.notes.append(f"subspace dimension {subspace_dim} not in [1, {self.kernel.dim})")
            return report
        budget = trials * self.MAX_ATTEMPTS_PER_TRIAL

        def trial(index: int):
            rng = self._rng(_TRIANGLE, index)
            for attempt in range(self.MAX_ATTEMPTS_PER_TRIAL):
                try:
                    instance, _ = self._sample_triangle(rng, subspace_dim)
                except (GeometryError, np.linalg.LinAlgError):
                    instance = None
                if instance is not None:
                    return self.triangle_checks(instance, f"trial {index}"), attempt, instance
            return None, self.MAX_ATTEMPTS_PER_TRIAL, None

        for checks, rejected, instance in ordered_map(trial, range(trials), self.config.threads):
            report.rejections += rejected
            if checks is None:
                continue
            report.trials += 1
            report.checks.extend(checks)
            report.instances.append(instance)
        if report.trials < trials:
            report.notes.append(f"only {report.trials} of {trials} instances found within {budget} attempts")
        if report.instances:
            report.values["max_Ccal"] = max(i.Ccal for i in report.instances)
            report.values["max_delta"] = max(i.delta for i in report.instances)
        logger.info(f"triangle_bound: {report.trials} instances, {report.rejections} rejected samples")
        return report

    # ------------------------------------------------------------------
    # Pushforward of phi_g
    # ------------------------------------------------------------------

    def triple_transport(self, p: np.ndarray, X: np.ndarray, decomposition) -> np.ndarray:
        """X carried p -> pi(p) -> phi_g(pi(p)) -> phi_g(p) along shortest geodesics."""
        X = self._transport(p, decomposition.base_point, X)
        X = self._transport(decomposition.base_point, decomposition.lift_point, X)
        if self.model.flat or not np.any(decomposition.transported):
            return X
        return self.kernel.transport_along_geodesic(decomposition.lift_point, decomposition.transported, X)

    def pushforward_bound(self, kind: str, epsilon: float, L: float) -> float:
        if kind == "tangent":
            return 3200.0 * epsilon
        if kind == "almost_vertical":
            return 2.0 * (math.sinh(L) - L) / math.sin(L)
        if kind == "strong_jacobi":
            return 3.6 * L + 3700.0 * epsilon
        return constants_service.D_bound(epsilon, L)

    def _pushforward_vector(
        self, kind: str, sub: ParamSubmanifold, s: np.ndarray, xi: np.ndarray, L: float, p: np.ndarray, rng
    ) -> Optional[np.ndarray]:
        p0 = sub.evaluate(s)
        if kind == "general":
            return self._random_unit(p, rng)
        if kind == "almost_vertical":
            eta = self._random_unit(p0, rng, self.submanifolds.normal_frame(sub, s))
            X = self.kernel.exp_differential(p0, L * xi, eta[:, None])[:, 0]
            return self._unit(p, X)
        if sub.dim == 0:
            return None
        tangent, _ = self.submanifolds.tangent_frame(sub, s)
        e = self._random_unit(p0, rng, tangent)
        if kind == "tangent":
            return e
        h = self.submanifolds.second_fundamental_form(sub, s, xi)
        coeffs = tangent.T @ self.kernel.metric(p0) @ e
        J, _ = self.kernel.jacobi_field(p0, xi, e, -tangent @ (h @ coeffs), t=L)
        return self._unit(p, J)

    def verify_pushforward_bounds(
        self,
        N_g: ParamSubmanifold,
        N: ParamSubmanifold,
        epsilon: float,
        trials: int = 200,
        gentle: Optional[GentleReport] = None,
    ) -> VerifierReport:
        """|phi_g* X - transport of X| per class of X: 3200 eps, 2(sinh L - L)/sin L, 18L/5 + 3700 eps, 4L + 4100 eps.

        Trials cycle through the four classes; L stays below 0.08.
        """
        report = VerifierReport(name="pushforward_bounds")
        report.values["epsilon"] = float(epsilon)
        if epsilon >= constants_service.EPSILON_AVERAGE:
            report.rejections = trials
            report.notes.append(f"eps = {epsilon:.3e} is not below 1/20000")
            return report
        if gentle is not None and not gentle.passed:
            report.rejections = trials
            report.notes.append(f"({self.model.name}, {N_g.label}) is not a gentle pair")
            return report
        top = min(self.PUSHFORWARD_MAX_L, N_g.tube_radius)

        def trial(index: int):
            rng = self._rng(_PUSHFORWARD, index)
            kind = PUSHFORWARD_CLASSES[index % len(PUSHFORWARD_CLASSES)]
            s = self._random_node(N_g, rng)
            p0 = N_g.evaluate(s)
            xi = self._random_unit(p0, rng, self.submanifolds.normal_frame(N_g, s))
            L = 0.0 if kind == "tangent" else float(rng.uniform(0.1, 0.95) * top)
            try:
                p = self.kernel.exp_map(p0, L * xi)
                X = self._pushforward_vector(kind, N_g, s, xi, L, p, rng)
                if X is None:
                    return None, f"trial {index}: {N_g.label} has no tangent vectors"
                decomposition = self.slices.decompose(N_g, N, p)
                pushed = self.slices.pushforward_phi(N_g, N, p, X)
                carried = self.triple_transport(p, X, decomposition)
            except (GeometryError, np.linalg.LinAlgError) as e:
                return None, f"trial {index}: {e}"
            deviation = self.kernel.norm(decomposition.image, pushed - carried)
            instance = PushforwardInstance(
                member=N_g.label,
                average=N.label,
                point=p,
                vector=X,
                kind=kind,
                epsilon=epsilon,
                L=L,
                E=self.kernel.distance(p, decomposition.image),
                deviation=deviation,
            )
            note = f"trial {index}: L = {L:.4f}, E = {instance.E:.3e}"
            bound = self.pushforward_bound(kind, epsilon, L)
            return [upper_bound_check(f"|phi_* X - X| ({kind})", deviation, bound, self.noise, note)], instance

        return self._run_trials(report, trials, trial)

    # ------------------------------------------------------------------
    # Growth of normal sections along curves in N
    # ------------------------------------------------------------------

    def _normal_connection(self, sub: ParamSubmanifold, s: np.ndarray) -> np.ndarray:
        """conn[a][i, j] = g(nabla_a nu_j, nu_i) for the normal frame of sub."""
        h = self.config.fd_step
        p = sub.evaluate(s)
        nu = self.submanifolds.normal_frame(sub, s)
        g = self.kernel.metric(p)
        jac = sub.jacobian(s)
        gamma = self.kernel.christoffel(p)
        out = np.zeros((sub.dim, nu.shape[1], nu.shape[1]))
        for a in range(sub.dim):
            e = np.zeros(sub.dim)
            e[a] = h
            d_nu = (self.submanifolds.normal_frame(sub, s + e) - self.submanifolds.normal_frame(sub, s - e)) / (2.0 * h)
            out[a] = nu.T @ g @ (d_nu + np.einsum("kij,i,jl->kl", gamma, jac[:, a], nu))
        return out

    def _normal_coefficients(self, sub: ParamSubmanifold, s: np.ndarray, vector: np.ndarray) -> np.ndarray:
        p = sub.evaluate(s)
        return self.submanifolds.normal_frame(sub, s).T @ self.kernel.metric(p) @ vector

    def verify_curve_growth(
        self,
        N_g: ParamSubmanifold,
        N: ParamSubmanifold,
        epsilon: float,
        s_C: np.ndarray,
        s_A: np.ndarray,
        samples: int = 33,
    ) -> VerifierReport:
        """Growth of exp^{-1}_{N_g} along the geodesic gamma from C to A and along the lifted curve c.

        Raises DomainError when eps >= 1/20000 or L(gamma) >= 0.1.
        """
        report = VerifierReport(name="curve_growth")
        C, A = N.evaluate(s_C), N.evaluate(s_A)
        velocity = self.kernel.log_map(C, A)
        length = self.kernel.norm(C, velocity)
        if epsilon >= constants_service.EPSILON_AVERAGE:
            raise DomainError(f"curve growth bounds need eps < 1/20000, got {epsilon:.3e}")
        if not 0.0 < length < constants_service.MAX_CURVE_LENGTH:
            raise DomainError(f"curve growth bounds need 0 < L(gamma) < 0.1, got {length:.4f}")
        r = constants_service.radius_r(epsilon, length)
        f = constants_service.f_of_r(r)
        growth = r + (r + 1.5) / f

        path = self.kernel.geodesic(C, velocity, n_steps=samples - 1)
        taus = path.times * length
        feet = [self.submanifolds.closest_point(N_g, x) for x in path.points]
        params = [feet[0].parameter]
        for foot in feet[1:]:
            params.append(params[-1] + N_g.parameter_difference(params[-1], foot.parameter))
        params = np.array(params)
        gamma_tilde = np.array(
            [self._normal_coefficients(N_g, foot.parameter, foot.normal_vector) for foot in feet]
        )
        lifts, start, jacobian = [], None, None
        for foot in feet:
            lift = self.slices.lift_to_section(N_g, N, foot.foot, foot.parameter, start=start, jacobian=jacobian)
            start, jacobian = lift.parameter, lift.jacobian
            lifts.append(lift.point)
        lifts = np.array(lifts)
        c_tilde = np.array(
            [
                self._normal_coefficients(N_g, foot.parameter, self.kernel.log_map(foot.foot, q))
                if np.any(self.model.chart_difference(foot.foot, q))
                else np.zeros(gamma_tilde.shape[1])
                for foot, q in zip(feet, lifts)
            ]
        )

        # normal connection along pi and backward transport to pi(0)
        s_dot = np.gradient(params, taus, axis=0, edge_order=2)
        omegas = np.array(
            [np.einsum("a,aij->ij", rate, self._normal_connection(N_g, foot.parameter)) for rate, foot in zip(s_dot, feet)]
        )
        backward = [np.eye(gamma_tilde.shape[1])]
        for k in range(len(taus) - 1):
            middle = 0.5 * (omegas[k] + omegas[k + 1])
            backward.append(backward[-1] @ linalg.expm(middle * (taus[k + 1] - taus[k])))

        def covariant(coeffs: np.ndarray) -> np.ndarray:
            return np.gradient(coeffs, taus, axis=0, edge_order=2) + np.einsum("kij,kj->ki", omegas, coeffs)

        D_gamma = covariant(gamma_tilde)
        D_c = covariant(c_tilde)
        chart_speed = np.gradient(lifts, taus, axis=0, edge_order=2)
        c_speed = np.array([self.kernel.norm(q, v) for q, v in zip(lifts, chart_speed)])

        gap = float(np.linalg.norm(gamma_tilde[0] - backward[-1] @ gamma_tilde[-1]))
        splitting = self.slices.bundle_splitting(N_g, C)
        alpha = math.pi / 2 - self._angle_to_subspace(C, velocity, splitting.vert)
        note = f"L(gamma) = {length:.4f}"
        report.values.update(length=length, r=r, f_r=f, alpha=alpha, gap=gap)
        report.checks.append(
            upper_bound_check("|exp^-1 C - P exp^-1 A| <= L 3150 eps / f(r)", gap, length * 3150.0 * epsilon / f, self.noise, note)
        )
        lower = length * (
            0.99 * math.sin(alpha - 0.25 * epsilon) - 500.0 * epsilon - 3.0 * r - (8.0 / 3.0) * length * growth
        )
        report.checks.append(lower_bound_check("|exp^-1 C - P exp^-1 A| >= lower growth bound", gap, lower, self.noise, note))
        report.checks.append(
            upper_bound_check("alpha < delta(eps, L)", alpha, constants_service.delta(epsilon, length), self.noise, note)
        )
        moving = c_speed > self.MEMBERSHIP_TOLERANCE
        if moving.any():
            rates = np.linalg.norm(D_c[moving], axis=1) / c_speed[moving]
            report.values["c_growth_sup"] = float(rates.max())
            report.checks.append(upper_bound_check("|nabla c~ / ds| <= 2702 eps", float(rates.max()), 2702.0 * epsilon, self.noise, note))
        drift = [
            (float(np.linalg.norm(D_gamma[0] - P @ D)), 3.0 * (100.0 * epsilon + r) + (8.0 / 3.0) * tau * growth)
            for P, D, tau in zip(backward, D_gamma, taus)
        ]
        value, bound = min(drift, key=lambda pair: pair[1] - pair[0])
        report.checks.append(upper_bound_check("|nabla gamma~(0) - P nabla gamma~(t)| <= 3(100 eps + r) + 8t/3 (...)", value, bound, self.noise, note))
        lc_checks = []
        for x, foot in zip(path.points, feet):
            if N_g.dim == 0 or not self.MEMBERSHIP_TOLERANCE < foot.distance < self.PUSHFORWARD_MAX_L:
                continue
            split = self.slices.bundle_splitting(N_g, x, with_lc=True)
            lc_checks.append(
                upper_bound_check(
                    "d(aHor, LC) <= arcsin(9L/5)",
                    self.kernel.subspace_distance(split.ahor, split.lc),
                    math.asin(1.8 * foot.distance),
                    self.noise,
                    note,
                )
            )
        if lc_checks:
            report.checks.append(min(lc_checks, key=lambda c: c.margin))
        else:
            report.notes.append("gamma stays on N_g; aHor/LC comparison skipped")
        report.trials = 1
        return report

    def curve_growth_suite(
        self, N_g: ParamSubmanifold, N: ParamSubmanifold, epsilon: float, pairs: int = 20, samples: int = 33
    ) -> VerifierReport:
        """verify_curve_growth on random parameter pairs of N less than 0.1 apart."""
        report = VerifierReport(name="curve_growth")
        if N.dim == 0 or epsilon >= constants_service.EPSILON_AVERAGE:
            report.rejections = pairs
            report.notes.append(f"no admissible curves: dim N = {N.dim}, eps = {epsilon:.3e}")
            return report
        lower, upper = np.asarray(N.lower, dtype=float), np.asarray(N.upper, dtype=float)

        def trial(index: int):
            rng = self._rng(_CURVES, index)
            for _ in range(self.MAX_ATTEMPTS_PER_TRIAL):
                s_C = rng.uniform(lower, upper)
                u = rng.standard_normal(N.dim)
                u /= np.linalg.norm(u)
                speed = self.kernel.norm(N.evaluate(s_C), N.jacobian(s_C) @ u)
                if speed == 0.0:
                    continue
                step = rng.uniform(0.2, 0.9) * constants_service.MAX_CURVE_LENGTH / speed
                s_A = N.wrap(s_C + step * u)
                try:
                    return self.verify_curve_growth(N_g, N, epsilon, s_C, s_A, samples)
                except DomainError:
                    continue
                except (GeometryError, np.linalg.LinAlgError) as e:
                    logger.debug(f"curve pair {index} failed: {e}")
                    continue
            return None

        for outcome in ordered_map(trial, range(pairs), self.config.threads):
            if outcome is None:
                report.rejections += 1
            else:
                report.merge(outcome)
        if report.trials < pairs:
            report.notes.append(f"{pairs - report.trials} curve pairs found no admissible endpoints")
        return report

    # ------------------------------------------------------------------
    # Forms of the Moser construction
    # ------------------------------------------------------------------

    def verify_form_bounds(
        self,
        family: WeightedFamily,
        N: ParamSubmanifold,
        primitive: PrimitiveData,
        epsilon: float,
        samples: int = 8,
    ) -> VerifierReport:
        """Closeness of omega_g to omega, nondegeneracy and inverse norm of omega_t, speed of v_t, sups of beta and alpha."""
        report = VerifierReport(name="form_bounds")
        tube = constants_service.L_eps(epsilon)
        if epsilon >= constants_service.EPSILON_AVERAGE or tube <= 0:
            report.rejections = samples
            report.notes.append(f"eps = {epsilon:.3e} outside the range of the form estimates")
            return report
        op_bound = constants_service.op_norm_bound(epsilon)
        report.values.update(epsilon=float(epsilon), L_eps=tube, op_norm_bound=op_bound)
        report.checks.extend(primitive.beta_checks(epsilon))
        times = (0.0, 0.25, 0.5, 0.75, 1.0)

        def trial(index: int):
            rng = self._rng(_FORMS, index)
            x = N.grid_points[int(rng.integers(N.node_count))]
            try:
                q = self.kernel.exp_map(x, rng.uniform(0.0, 0.5) * tube * self._random_unit(x, rng))
                point = primitive.evaluate(q)
                frame = orthonormal_basis(self.kernel.metric(q))
                note = f"trial {index}"
                checks = []
                heights = []
                for member, term in zip(family.members, point.members):
                    height = self.slices.vertical_radius(member.submanifold, N, q)
                    heights.append(height)
                    closeness = float(np.linalg.norm(frame.T @ (term.omega_g - point.omega) @ frame, 2))
                    checks.append(
                        upper_bound_check(
                            "|omega_g - omega| <= form bound (2L + 100 eps term)",
                            closeness,
                            constants_service.form_bound(epsilon, height),
                            self.noise,
                            f"{note}: {member.label}, L = {height:.4e}",
                        )
                    )
                floor = 1.0 - constants_service.form_bound(epsilon, max(heights))
                certificate = self.slices.nondegeneracy_certificate(family, N, q, rng=rng, average=point.omega_avg)
                checks.append(lower_bound_check("omega_t(X, IX) >= 1 - form bound", certificate, floor, self.noise, note))
                distance = self.submanifolds.closest_point(N, q).distance
                inverse_norm = max(float(np.linalg.norm(np.linalg.inv(frame.T @ point.omega_t(t) @ frame), 2)) for t in times)
                checks.append(upper_bound_check("|omega_t^-1| <= 1 / (1 - form bound) <= 1.53", inverse_norm, op_bound, self.noise, note))
                speed = max(self.kernel.norm(q, point.velocity(t)) for t in times)
                checks.append(
                    upper_bound_check("|v_t| <= 1.45 d + 374 eps", speed, constants_service.speed_bound(epsilon, distance), self.noise, note)
                )
                alpha_norm = float(np.sqrt(max(point.alpha @ np.linalg.inv(self.kernel.metric(q)) @ point.alpha, 0.0)))
                checks.append(
                    upper_bound_check(
                        "|alpha| <= alpha bound", alpha_norm, constants_service.alpha_bound(epsilon, tube, distance), self.noise, note
                    )
                )
            except (GeometryError, np.linalg.LinAlgError) as e:
                return None, f"trial {index}: {e}"
            return checks, None

        return self._run_trials(report, samples, trial)

    # ------------------------------------------------------------------
    # Moment map
    # ------------------------------------------------------------------

    def generator_sup(self, action, sub: ParamSubmanifold, radius: float, directions: int = 16) -> float:
        """Dense scan of |v_M| over the radius-tube around the nodes of sub."""
        rng = self._rng(_MOMENT, 0)
        worst = 0.0
        for x in sub.refined().grid_points:
            worst = max(worst, self.kernel.norm(x, action.generator(x)))
            for _ in range(directions if radius > 0 else 0):
                try:
                    y = self.kernel.exp_map(x, radius * self._random_unit(x, rng))
                except GeometryError:
                    continue
                worst = max(worst, self.kernel.norm(y, action.generator(y)))
        return worst

    def moment_map_spread(
        self,
        action,
        L_sub: ParamSubmanifold,
        epsilon: Optional[float] = None,
        average: Optional[ParamSubmanifold] = None,
        mu_guess: Optional[float] = None,
        group_samples: int = 6,
        directions: int = 16,
    ) -> VerifierReport:
        """sup over L of |J - mu| against 1000 eps C with C = sup |v_M| near L.

        mu is the mean of J over the averaged submanifold when one is given,
        otherwise mu_guess, otherwise the midrange of J over L.
        """
        report = VerifierReport(name="moment_map_spread")
        if epsilon is None:
            epsilon = 0.0
            for name, element in action.sample(group_samples)[1:]:
                d1, _ = self.submanifolds.c1_distance(L_sub, L_sub.transformed(element, label=name))
                epsilon = max(epsilon, d1)
        values = np.array([action.moment(x) for x in L_sub.grid_points])
        if average is not None:
            mu = float(np.mean([action.moment(x) for x in average.grid_points]))
            report.notes.append(f"mu from J on {average.label}")
        elif mu_guess is not None:
            mu = float(mu_guess)
        else:
            mu = 0.5 * float(values.max() + values.min())
        spread = float(np.max(np.abs(values - mu)))
        radius = 1000.0 * epsilon
        C = self.generator_sup(action, L_sub, radius, directions)
        report.values.update(epsilon=float(epsilon), C=C, mu=mu, spread=spread)
        report.trials = 1
        if epsilon >= constants_service.EPSILON_ISOTROPIC:
            report.rejections = 1
            report.trials = 0
            report.notes.append(f"eps = {epsilon:.3e} is not below 1/70000; spread bound not asserted")
            return report
        bound = max(1000.0 * epsilon * C, self.INVARIANT_SPREAD)
        report.checks.append(upper_bound_check("sup |J - mu| <= 1000 eps C", spread, bound, self.noise))
        logger.info(f"moment map spread {spread:.3e} against 1000 eps C = {1000.0 * epsilon * C:.3e}")
        return report
