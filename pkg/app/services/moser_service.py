# app/services/moser_service.py - Canonical primitive and Moser flow towards the isotropic average

import logging
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from app.core.exceptions import LeftTube
from app.models.checks import BoundCheck, upper_bound_check
from app.models.family import WeightedFamily
from app.models.submanifold import GridField, ParamSubmanifold, SectionParametrization, section_submanifold
from app.services import constants_service
from app.services.normal_slice_service import NormalSliceService, PhiDecomposition
from app.utils.numerics import gauss_legendre_unit
from app.utils.parallel import ordered_map

logger = logging.getLogger(__name__)

TwoForm = Callable[[np.ndarray], np.ndarray]
Fiber = Tuple[np.ndarray, np.ndarray]  # (base point, fiber vector) with p = exp_base(vector)


class NormalBundle:
    """Tube around sub fibred by its normal slices."""

    def __init__(self, slices: NormalSliceService, sub: ParamSubmanifold):
        self.submanifolds = slices.submanifolds
        self.sub = sub

    def decompose(self, p: np.ndarray) -> Fiber:
        foot = self.submanifolds.closest_point(self.sub, p)
        return foot.foot, foot.normal_vector


class VertBundle:
    """Tube around N fibred by the images under phi_g of the normal slices of N_g."""

    def __init__(self, slices: NormalSliceService, N_g: ParamSubmanifold, N: ParamSubmanifold):
        self.slices = slices
        self.N_g = N_g
        self.N = N

    def decompose(self, q: np.ndarray) -> Fiber:
        decomposition, _ = self.slices.invert(self.N_g, self.N, q)
        return decomposition.lift_point, decomposition.transported


@dataclass
class MemberTerms:
    label: str
    weight: float
    preimage: np.ndarray  # phi_g^{-1}(q)
    jacobian: np.ndarray  # D phi_g at the preimage
    omega_g: np.ndarray
    alpha_g: np.ndarray


@dataclass
class PrimitivePoint:
    """All forms of the Moser construction evaluated at one point"""

    point: np.ndarray
    omega: np.ndarray
    omega_avg: np.ndarray
    alpha: np.ndarray
    members: List[MemberTerms]

    def omega_t(self, t: float) -> np.ndarray:
        return self.omega + t * (self.omega_avg - self.omega)

    def velocity(self, t: float) -> np.ndarray:
        """v_t with omega_t(v_t, .) = -alpha."""
        return np.linalg.solve(self.omega_t(t).T, -self.alpha)


@dataclass
class FlowReport:
    max_displacement: float
    tube_limit: float
    isotropy_defect: float
    d0_to_members: Dict[str, float]
    steps_used: int
    step_halvings: int
    containment_checked: bool
    containment_overridden: bool = False
    nondegeneracy_min: Optional[float] = None
    bound_checks: List[BoundCheck] = field(default_factory=list)
    notes: List[str] = field(default_factory=list)


class MoserService:
    """Homotopy-operator primitives of omega_avg - omega and the flow that makes N isotropic"""

    ISOTROPY_FLOOR = 1e-7

    def __init__(self, slices: NormalSliceService):
        self.slices = slices
        self.submanifolds = slices.submanifolds
        self.kernel = slices.kernel
        self.model = slices.model
        self.config = slices.config

    # ------------------------------------------------------------------
    # Homotopy operator
    # ------------------------------------------------------------------

    def _radial(self, fiber: Fiber, t: float) -> Tuple[np.ndarray, np.ndarray]:
        """rho_t(p) = exp_base(t v) and its velocity in t."""
        base, vector = fiber
        if self.model.flat:
            return self.kernel.exp_map(base, t * vector), vector.copy()
        path = self.kernel.geodesic(base, t * vector)
        return path.end, path.velocities[-1] / t

    def _scaled(self, fiber: Fiber, t: float, n_steps: Optional[int] = None) -> np.ndarray:
        base, vector = fiber
        return self.kernel.exp_map(base, t * vector, n_steps)

    def _homotopy_covector(
        self, center: Fiber, neighbours: Sequence[Tuple[Fiber, Fiber]], step: float, two_form: TwoForm
    ) -> np.ndarray:
        """Quadrature of f(w_t, rho_t* .) over t in [0, 1] as a chart covector.

        neighbours[i] holds the fibres of p + step e_i and p - step e_i.
        """
        nodes, weights = gauss_legendre_unit(self.config.quadrature_nodes)
        covector = np.zeros(self.kernel.dim)
        if not np.any(center[1]):
            return covector
        for t, weight in zip(nodes, weights):
            x, velocity = self._radial(center, t)
            # one step count for all neighbours keeps the differences smooth
            steps = self.kernel.step_count(center[0], t * center[1]) + 1
            columns = [
                self.model.chart_difference(self._scaled(minus, t, steps), self._scaled(plus, t, steps)) / (2.0 * step)
                for plus, minus in neighbours
            ]
            push = np.stack(columns, axis=-1)
            covector += weight * (push.T @ (two_form(x).T @ velocity))
        return covector

    def homotopy_Q(
        self, bundle, two_form: TwoForm, p: np.ndarray, X: Optional[np.ndarray] = None, step: Optional[float] = None
    ):
        """(Q f)_p as a covector, or its value on X."""
        p = np.asarray(p, dtype=float)
        step = self.config.homotopy_step if step is None else step
        center = bundle.decompose(p)
        neighbours = []
        for i in range(self.kernel.dim):
            e = np.zeros(self.kernel.dim)
            e[i] = step
            neighbours.append((bundle.decompose(p + e), bundle.decompose(p - e)))
        covector = self._homotopy_covector(center, neighbours, step, two_form)
        if X is None:
            return covector
        return float(covector @ np.asarray(X, dtype=float))

    # ------------------------------------------------------------------
    # Primitive
    # ------------------------------------------------------------------

    def _beta_at(self, bundle: NormalBundle, x: np.ndarray) -> np.ndarray:
        return self.homotopy_Q(bundle, self.kernel.omega, x)

    def build_primitive(self, family: WeightedFamily, N: ParamSubmanifold) -> "PrimitiveData":
        """beta^g = i_N^*(Q_{N_g} omega) on N's grid for every member."""
        beta_fields: Dict[str, GridField] = {}
        beta_sup: Dict[str, float] = {}
        for member in family.members:
            bundle = NormalBundle(self.slices, member.submanifold)
            values = np.array(
                ordered_map(lambda x: self._beta_at(bundle, x), N.grid_points, self.config.threads)
            )
            beta_fields[member.label] = GridField(N, values)
            worst = 0.0
            if N.dim > 0:
                for s, beta in zip(N.grid_parameters, values):
                    frame, _ = self.submanifolds.tangent_frame(N, s)
                    worst = max(worst, float(np.linalg.norm(frame.T @ beta)))
            beta_sup[member.label] = worst
            logger.info(f"beta for {member.label}: sup on N = {worst:.3e}")
        return PrimitiveData(self, family, N, beta_fields, beta_sup)

    def member_terms(
        self,
        member,
        N: ParamSubmanifold,
        q: np.ndarray,
        beta_field: GridField,
        guess: Optional[np.ndarray] = None,
        jacobian: Optional[np.ndarray] = None,
    ) -> MemberTerms:
        """omega_g and alpha^g = Q_N^g(omega_g - omega) - (pi_N^g)^* beta^g at q.

        Both homotopy terms are evaluated at p = phi_g^{-1}(q), where the
        vertical fibration is the image of the normal one:
        Q_N^g(omega_g)_q = D^{-T} (Q_{N_g} omega)_p and
        Q_N^g(omega)_q = D^{-T} (Q_{N_g} phi_g^* omega)_p with D = D phi_g(p).
        """
        N_g = member.submanifold
        step = self.config.homotopy_step
        center, _ = self.slices.invert(N_g, N, q, guess=guess, jacobian=jacobian)
        pairs = self.slices.neighbour_decompositions(N_g, N, center, step)
        jac = np.stack(
            [self.model.chart_difference(minus.image, plus.image) / (2.0 * step) for plus, minus in pairs], axis=-1
        )
        lift_jac = np.stack(
            [self.model.chart_difference(minus.lift_point, plus.lift_point) / (2.0 * step) for plus, minus in pairs],
            axis=-1,
        )

        def normal(d: PhiDecomposition) -> Fiber:
            return d.base_point, d.normal_vector

        def vertical(d: PhiDecomposition) -> Fiber:
            return d.lift_point, d.transported

        omega = self.kernel.omega
        normal_term = self._homotopy_covector(
            normal(center), [(normal(a), normal(b)) for a, b in pairs], step, omega
        )
        vertical_term = self._homotopy_covector(
            vertical(center), [(vertical(a), vertical(b)) for a, b in pairs], step, omega
        )
        beta = beta_field(center.lift_parameter)
        inverse = np.linalg.inv(jac)
        alpha_g = inverse.T @ (normal_term - vertical_term - lift_jac.T @ beta)
        form = inverse.T @ omega(center.point) @ inverse
        return MemberTerms(
            label=member.label,
            weight=member.weight,
            preimage=center.point,
            jacobian=jac,
            omega_g=0.5 * (form - form.T),
            alpha_g=alpha_g,
        )

    # ------------------------------------------------------------------
    # Moser flow
    # ------------------------------------------------------------------

    def _tube_limit(
        self, N: ParamSubmanifold, epsilon: Optional[float], allow_override: bool, report: FlowReport
    ) -> float:
        if epsilon is None:
            report.notes.append("epsilon not given; trajectories bounded by the tube radius of N only")
            return N.tube_radius
        report.containment_checked = True
        if constants_service.check_containment(epsilon):
            return constants_service.R_bound(epsilon, constants_service.L_eps(epsilon))
        message = (
            f"842 eps = {842.0 * epsilon:.4e} does not stay below R(eps, L_eps) at eps = {epsilon:.4e}"
        )
        if not allow_override:
            raise LeftTube(message, constant="842eps<R_eps_L_eps")
        report.containment_overridden = True
        report.notes.append(message + "; overridden, trajectories bounded by the tube radius of N")
        logger.warning(message)
        return N.tube_radius

    def _trajectory(
        self, primitive: "PrimitiveData", start: np.ndarray, steps: int, limit: float
    ) -> Tuple[np.ndarray, int, int]:
        """Time-1 flow of -v_{1-s} from a node of N, RK4 with step halving."""
        x = np.array(start, dtype=float)
        s, h = 0.0, 1.0 / steps
        taken = halvings = 0
        cache: Dict[str, PrimitivePoint] = {}

        def rhs(time: float, y: np.ndarray) -> np.ndarray:
            point = primitive.evaluate(y, previous=cache.get("last"))
            cache["last"] = point
            return -point.velocity(1.0 - time)

        while s < 1.0 - 1e-12:
            h = min(h, 1.0 - s)
            k1 = rhs(s, x)
            k2 = rhs(s + 0.5 * h, x + 0.5 * h * k1)
            k3 = rhs(s + 0.5 * h, x + 0.5 * h * k2)
            k4 = rhs(s + h, x + h * k3)
            increment = h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
            if self.kernel.norm(x, increment) > limit / 8.0 and halvings < self.config.max_step_halvings:
                h *= 0.5
                halvings += 1
                continue
            x = self.model.wrap(x + increment)
            s += h
            taken += 1
            moved = self.kernel.distance(start, x)
            if moved > limit:
                raise LeftTube(
                    f"trajectory from {np.round(start, 6)} moved {moved:.4e} beyond the tube radius {limit:.4e}"
                )
        return x, taken, halvings

    def moser_flow(
        self,
        family: WeightedFamily,
        N: ParamSubmanifold,
        primitive: "PrimitiveData",
        flow_steps: Optional[int] = None,
        epsilon: Optional[float] = None,
        allow_override: Optional[bool] = None,
    ) -> Tuple[ParamSubmanifold, FlowReport]:
        """L = rho_1^{-1}(N) as a chart-mode section over N's grid."""
        steps = flow_steps or self.config.flow_steps
        allow = self.config.allow_containment_override if allow_override is None else allow_override
        report = FlowReport(
            max_displacement=0.0,
            tube_limit=0.0,
            isotropy_defect=0.0,
            d0_to_members={},
            steps_used=0,
            step_halvings=0,
            containment_checked=False,
        )
        limit = self._tube_limit(N, epsilon, allow, report)
        report.tube_limit = limit
        certificate = np.inf
        for x in N.grid_points:
            point = primitive.evaluate(x)
            certificate = min(
                certificate,
                self.slices.nondegeneracy_certificate(family, N, x, average=point.omega_avg),
            )
        report.nondegeneracy_min = float(certificate)
        logger.info(f"Moser flow over {N.node_count} nodes, {steps} steps, tube limit {limit:.4e}")
        results = ordered_map(
            lambda y: self._trajectory(primitive, y, steps, limit), N.grid_points, self.config.threads
        )
        ends = np.array([end for end, _, _ in results])
        displacements = np.array([self.model.chart_difference(y, end) for y, end in zip(N.grid_points, ends)])
        report.steps_used = max(taken for _, taken, _ in results)
        report.step_halvings = sum(halved for _, _, halved in results)
        report.max_displacement = float(
            max(self.kernel.distance(y, end) for y, end in zip(N.grid_points, ends))
        )
        section = SectionParametrization(N, displacements, mode="chart", wrap_point=self.model.wrap)
        L = section_submanifold(N, section, name="isotropic_average", label="isotropic")
        report.isotropy_defect = self.submanifolds.isotropy_defect(L)
        for member in family.members:
            report.d0_to_members[member.label] = float(
                max(self.submanifolds.closest_point(member.submanifold, x).distance for x in L.grid_points)
            )
        self._flow_checks(report, epsilon)
        logger.info(
            f"Moser flow done: displacement {report.max_displacement:.3e}, isotropy defect {report.isotropy_defect:.2e}"
        )
        return L, report

    def _flow_checks(self, report: FlowReport, epsilon: Optional[float]) -> None:
        noise = self.config.noise_floor_factor * self.config.noise_floor
        report.bound_checks.append(
            upper_bound_check("isotropy_defect(L)", report.isotropy_defect, self.ISOTROPY_FLOOR, noise)
        )
        if epsilon is None:
            return
        if epsilon < constants_service.EPSILON_ISOTROPIC:
            for label, d0 in report.d0_to_members.items():
                report.bound_checks.append(upper_bound_check(f"d0({label}, L) < 1000 eps", d0, 1000.0 * epsilon, noise))
        if report.containment_checked and not report.containment_overridden:
            report.bound_checks.append(
                upper_bound_check(
                    "max displacement <= 374 eps (e^1.45 - 1) / 1.45",
                    report.max_displacement,
                    constants_service.displacement_bound(epsilon),
                    noise,
                )
            )


class PrimitiveData:
    """Evaluators for omega_g, omega_avg, omega_t, alpha and v_t near N"""

    def __init__(
        self,
        service: MoserService,
        family: WeightedFamily,
        N: ParamSubmanifold,
        beta_fields: Dict[str, GridField],
        beta_sup: Dict[str, float],
    ):
        self.service = service
        self.family = family
        self.N = N
        self.beta_fields = beta_fields
        self.beta_sup = beta_sup
        self.kernel = service.kernel

    def evaluate(self, q: np.ndarray, previous: Optional[PrimitivePoint] = None) -> PrimitivePoint:
        """Forms at q; previous seeds the phi_g inversions with a nearby solution."""
        q = np.asarray(q, dtype=float)
        terms = []
        for k, member in enumerate(self.family.members):
            guess = jacobian = None
            if previous is not None:
                before = previous.members[k]
                guess = before.preimage + self.service.model.chart_difference(previous.point, q)
                jacobian = before.jacobian
            terms.append(
                self.service.member_terms(
                    member, self.N, q, self.beta_fields[member.label], guess=guess, jacobian=jacobian
                )
            )
        # canonical member order keeps the sums bit-identical across runs
        omega_avg = sum(term.weight * term.omega_g for term in terms)
        alpha = sum(term.weight * term.alpha_g for term in terms)
        return PrimitivePoint(
            point=q, omega=self.kernel.omega(q), omega_avg=omega_avg, alpha=np.asarray(alpha), members=terms
        )

    def alpha(self, q: np.ndarray) -> np.ndarray:
        return self.evaluate(q).alpha

    def omega_t(self, q: np.ndarray, t: float) -> np.ndarray:
        return self.evaluate(q).omega_t(t)

    def v_t(self, q: np.ndarray, t: float) -> np.ndarray:
        return self.evaluate(q).velocity(t)

    def exterior_derivative(self, q: np.ndarray, step: Optional[float] = None) -> np.ndarray:
        """(d alpha)_ij = d_i alpha_j - d_j alpha_i by central differences."""
        q = np.asarray(q, dtype=float)
        h = self.service.config.exactness_step if step is None else step
        center = self.evaluate(q)
        m = self.kernel.dim
        partial = np.zeros((m, m))  # partial[i] = d_i alpha
        for i in range(m):
            e = np.zeros(m)
            e[i] = h
            plus = self.evaluate(q + e, previous=center).alpha
            minus = self.evaluate(q - e, previous=center).alpha
            partial[i] = (plus - minus) / (2.0 * h)
        return partial - partial.T

    def exactness_defect(self, q: np.ndarray, step: Optional[float] = None) -> float:
        """max entry of |d alpha - (omega_avg - omega)| at q"""
        point = self.evaluate(q)
        target = point.omega_avg - point.omega
        return float(np.max(np.abs(self.exterior_derivative(q, step) - target)))

    def loop_integral(
        self, center: np.ndarray, u: np.ndarray, w: np.ndarray, radius: float, samples: int = 32
    ) -> float:
        """Integral of alpha around the geodesic circle exp_center(r (cos a u + sin a w)).

        The trapezoidal rule on a periodic integrand; Stokes relates it to the
        flux of omega_avg - omega through the spanned disk.
        """
        angles = np.linspace(0.0, 2.0 * np.pi, samples, endpoint=False)
        h = 2.0 * np.pi / samples
        total = 0.0
        previous = None
        for a in angles:
            direction = np.cos(a) * u + np.sin(a) * w
            tangent = radius * (-np.sin(a) * u + np.cos(a) * w)
            point = self.kernel.exp_map(center, radius * direction)
            velocity = self.kernel.exp_differential(center, radius * direction, tangent[:, None])[:, 0]
            previous = self.evaluate(point, previous=previous)
            total += float(previous.alpha @ velocity) * h
        return total

    def check_exactness(self, points: Sequence[np.ndarray], tolerance: float = 1e-5) -> BoundCheck:
        worst = max((self.exactness_defect(q) for q in points), default=0.0)
        return upper_bound_check("|d alpha - (omega_avg - omega)|", worst, tolerance)

    def beta_checks(self, epsilon: float) -> List[BoundCheck]:
        config = self.service.config
        noise = config.noise_floor_factor * config.noise_floor
        return [
            upper_bound_check(f"|beta^{label}| < 125 eps", value, 125.0 * epsilon, noise)
            for label, value in self.beta_sup.items()
        ]

    def alpha_sup(self, points: Sequence[np.ndarray]) -> float:
        previous = None
        worst = 0.0
        for q in points:
            previous = self.evaluate(q, previous=previous)
            g_inverse = np.linalg.inv(self.kernel.metric(q))
            worst = max(worst, float(np.sqrt(max(previous.alpha @ g_inverse @ previous.alpha, 0.0))))
        return worst

