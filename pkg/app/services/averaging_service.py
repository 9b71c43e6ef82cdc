# app/services/averaging_service.py - Center of mass of a weighted family of submanifolds

import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np

from app.core.exceptions import ConfigError, LeftDomain, NoConvergence
from app.models.checks import BoundCheck, CheckStatus, upper_bound_check
from app.models.family import WeightedFamily
from app.models.submanifold import ParamSubmanifold, SectionParametrization, section_submanifold
from app.services.submanifold_service import SubmanifoldService
from app.utils.parallel import ordered_map

logger = logging.getLogger(__name__)


@dataclass
class FiberSolution:
    index: int
    coefficients: np.ndarray  # normal coordinates of the solution over the reference node
    iterations: int
    residual: float


@dataclass
class AveragingReport:
    """Outcome of a center-of-mass computation"""

    reference_index: int
    reference_label: str
    epsilon_measured: float  # max pairwise d1 inside the family
    d1_to_average: Dict[str, float]
    d0_to_average: Dict[str, float]
    iterations: List[int]
    residual_sup: float
    tolerance: float  # residual target actually used
    bound_checks: List[BoundCheck] = field(default_factory=list)
    notes: List[str] = field(default_factory=list)


class AveragingService:
    """Weinstein's averaging of C1-close submanifolds, solved fiber by fiber"""

    EPSILON_HYPOTHESIS = 1.0 / 20000.0
    D1_FACTOR = 2500.0
    D0_FACTOR = 100.0

    def __init__(self, submanifolds: SubmanifoldService):
        self.submanifolds = submanifolds
        self.kernel = submanifolds.kernel
        self.config = submanifolds.config

    # ------------------------------------------------------------------
    # Gradient fields
    # ------------------------------------------------------------------

    def grad_P(self, sub: ParamSubmanifold, x: np.ndarray) -> np.ndarray:
        """Gradient of half the squared distance to sub: -log_x(foot)."""
        foot = self.submanifolds.closest_point(sub, x)
        if foot.distance == 0.0:
            return np.zeros_like(np.asarray(x, dtype=float))
        return -self.kernel.log_map(x, foot.foot)

    def averaged_field(self, family: WeightedFamily, x: np.ndarray) -> np.ndarray:
        total = np.zeros(self.kernel.dim)
        for member in family.members:
            total = total + member.weight * self.grad_P(member.submanifold, x)
        return total

    # ------------------------------------------------------------------
    # Solver
    # ------------------------------------------------------------------

    def effective_tolerance(self, tol: Optional[float] = None) -> float:
        tol = self.config.averaging_tolerance if tol is None else tol
        if self.kernel.model.flat:
            return tol
        # shooting only resolves log to log_tolerance on curved models
        return max(tol, 10.0 * self.config.log_tolerance)

    def _solve_fiber(
        self, family: WeightedFamily, reference: ParamSubmanifold, index: int, tol: float
    ) -> FiberSolution:
        s = reference.grid_parameters[index]
        p = reference.grid_points[index]
        normals = self.submanifolds.normal_frame(reference, s)
        coeff = np.zeros(normals.shape[1])
        residual = np.inf
        try:
            for iteration in range(self.config.averaging_max_iter + 1):
                offset = normals @ coeff
                x = self.kernel.exp_map(p, offset)
                field_value = self.averaged_field(family, x)
                slice_basis = self.kernel.exp_differential(p, offset, normals)
                g = self.kernel.metric(x)
                step = np.linalg.solve(slice_basis.T @ g @ slice_basis, slice_basis.T @ g @ field_value)
                residual = self.kernel.norm(x, slice_basis @ step)
                if residual <= tol:
                    return FiberSolution(index=index, coefficients=coeff, iterations=iteration, residual=residual)
                coeff = coeff - self.config.averaging_step * step
        except (LeftDomain, np.linalg.LinAlgError) as e:
            raise NoConvergence(f"fiber {index} of {reference.label} failed: {e}", fiber_id=index) from e
        raise NoConvergence(
            f"fiber {index} of {reference.label} stalled at residual {residual:.2e} "
            f"after {self.config.averaging_max_iter} iterations",
            fiber_id=index,
        )

    def reference_index(self, family: WeightedFamily, index: Optional[int] = None) -> int:
        index = self.config.reference_index if index is None else index
        if not 0 <= index < len(family):
            raise ConfigError(f"reference index {index} is out of range for a family of {len(family)} members")
        return index

    def solve_fibers(
        self, family: WeightedFamily, reference_index: Optional[int] = None, tol: Optional[float] = None
    ) -> Tuple[ParamSubmanifold, List[FiberSolution]]:
        reference_index = self.reference_index(family, reference_index)
        reference = family.members[reference_index].submanifold
        tol = self.effective_tolerance(tol)
        solutions = ordered_map(
            lambda k: self._solve_fiber(family, reference, k, tol),
            range(reference.node_count),
            self.config.threads,
        )
        section = SectionParametrization(
            reference,
            np.array([sol.coefficients for sol in solutions]),
            mode="normal",
            frame=lambda s: self.submanifolds.normal_frame(reference, s),
            exp=self.kernel.exp_map,
        )
        average = section_submanifold(reference, section, name="weinstein_average", label="average")
        return average, solutions

    def measure_epsilon(self, family: WeightedFamily) -> float:
        """max over ordered member pairs of d1"""
        epsilon = 0.0
        subs = family.submanifolds
        for i, base in enumerate(subs):
            for j, other in enumerate(subs):
                if i != j:
                    epsilon = max(epsilon, self.submanifolds.c1_distance(base, other)[0])
        return epsilon

    def weinstein_average(
        self,
        family: WeightedFamily,
        reference_index: Optional[int] = None,
        tol: Optional[float] = None,
        epsilon: Optional[float] = None,
    ) -> Tuple[ParamSubmanifold, AveragingReport]:
        """Center-of-mass submanifold as a section over the reference member."""
        reference_index = self.reference_index(family, reference_index)
        reference = family.members[reference_index].submanifold
        logger.info(f"averaging {len(family)} members over reference {reference.label} ({reference.node_count} fibers)")
        average, solutions = self.solve_fibers(family, reference_index, tol)
        if epsilon is None:
            epsilon = self.measure_epsilon(family)
        d1_to, d0_to = {}, {}
        unstable = []
        for member in family.members:
            detail = self.submanifolds.c1_distance_detail(member.submanifold, average)
            d1_to[member.label] = detail.d1
            d0_to[member.label] = detail.d0
            if not detail.stable:
                unstable.append(member.label)
        report = AveragingReport(
            reference_index=reference_index,
            reference_label=reference.label,
            epsilon_measured=epsilon,
            d1_to_average=d1_to,
            d0_to_average=d0_to,
            iterations=[sol.iterations for sol in solutions],
            residual_sup=max(sol.residual for sol in solutions),
            tolerance=self.effective_tolerance(tol),
        )
        for label in unstable:
            report.notes.append(
                f"d1({label}, N) did not settle under grid refinement; its 2500 eps check is at best INCONCLUSIVE"
            )
        noise = self.config.noise_floor_factor * self.config.noise_floor
        if epsilon < self.EPSILON_HYPOTHESIS:
            for label in d1_to:
                check = upper_bound_check(f"d1({label}, N) < 2500 eps", d1_to[label], self.D1_FACTOR * epsilon, noise)
                if label in unstable and check.status == CheckStatus.PASS:
                    check.status = CheckStatus.INCONCLUSIVE
                    check.note = "sup over the grid moved on refinement"
                report.bound_checks.append(check)
                report.bound_checks.append(
                    upper_bound_check(f"d0({label}, N) < 100 eps", d0_to[label], self.D0_FACTOR * epsilon, noise)
                )
        else:
            report.notes.append(f"eps = {epsilon:.3e} is not below 1/20000; distance bounds not asserted")
        logger.info(
            f"average done: eps={epsilon:.3e}, residual_sup={report.residual_sup:.2e}, "
            f"max iterations={max(report.iterations)}"
        )
        return average, report

    def reference_cross_check(
        self, family: WeightedFamily, average: ParamSubmanifold, other_index: int
    ) -> float:
        """Largest distance from nodes of the average built over another reference to the given average."""
        alternative, _ = self.solve_fibers(family, other_index)
        deviation = 0.0
        for x in alternative.grid_points:
            deviation = max(deviation, self.submanifolds.closest_point(average, x).distance)
        return deviation
