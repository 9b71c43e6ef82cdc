# app/services/constants_service.py - Closed-form constant chain for the isotropic average

"""
Every quantity here is a closed-form function of the family size epsilon and a
tube length L. The functions are pure and cheap; the scenario runner prints the
table and the verifier uses it for its bounds.
"""

import logging
import math
from dataclasses import asdict, dataclass, field
from typing import Dict, Optional, Sequence

import numpy as np
import pandas as pd
from scipy.optimize import brentq

from app.core.exceptions import DomainError

logger = logging.getLogger(__name__)

EPSILON_AVERAGE = 1.0 / 20000.0  # center of mass hypothesis
EPSILON_ISOTROPIC = 1.0 / 70000.0  # isotropic average hypothesis
MAX_CURVE_LENGTH = 0.1

THRESHOLDS: Dict[str, float] = {
    "eps_average": EPSILON_AVERAGE,
    "eps_isotropic": EPSILON_ISOTROPIC,
    "d0_average": 100.0,
    "d1_average": 2500.0,
    "d0_isotropic": 1000.0,
    "displacement": 842.0,
    "speed_offset": 374.0,
    "speed_slope": 1.45,
    "op_norm": 1.53,
    "beta": 125.0,
    "pullback_beta": 200.0,
    "pushforward_tangent": 3200.0,
    "pushforward_jacobi": 3700.0,
    "pushforward_general": 4100.0,
    "curve_growth": 2702.0,
    "curve_length": 3150.0,
    "coercivity": 1950.0,
    "hessian_cross": 16.0,
}


@dataclass
class ConstantsTable:
    epsilon: float
    L: float
    r: float
    f_r: float
    delta: float
    L_eps: float  # negative once eps > 0.1 / 4100
    D: float  # D(eps, L)
    D_eps: Optional[float]  # D(eps, L_eps), identically 0.1
    R: Optional[float]  # R(eps, L); None when 2L leaves the domain of delta
    R_eps: Optional[float]  # R(eps, L_eps)
    containment_lhs: float  # 842 eps
    containment: bool
    form_bound: float
    nondegeneracy_floor: float
    op_norm_bound: Optional[float]
    displacement_bound: float
    beta_bound: float
    pullback_beta_bound: Optional[float]
    rho_bound: float = 1.25
    thresholds: Dict[str, float] = field(default_factory=lambda: dict(THRESHOLDS))

    def as_dict(self) -> dict:
        return asdict(self)


def radius_r(epsilon: float, length: float) -> float:
    return 100.0 * epsilon + 0.5 * length


def f_of_r(r: float) -> float:
    return math.cos(r) - 1.5 * math.sin(r)


def delta(epsilon: float, length: float) -> float:
    """Angle bound for a curve of the given length; needs length <= 0.1."""
    if epsilon < 0:
        raise DomainError(f"epsilon must be nonnegative, got {epsilon}")
    if length > MAX_CURVE_LENGTH:
        raise DomainError(f"delta needs L <= {MAX_CURVE_LENGTH}, got {length:.6g}")
    r = radius_r(epsilon, length)
    f = f_of_r(r)
    if f <= 0:
        raise DomainError(f"f(r) = {f:.4g} is not positive at r = {r:.4g}")
    argument = (100.0 / 99.0) * (
        3150.0 * epsilon / f + 500.0 * epsilon + 3.0 * r + (8.0 / 3.0) * length * (r + (r + 1.5) / f)
    )
    if argument > 1.0:
        raise DomainError(f"arcsin argument {argument:.6g} exceeds 1 (eps={epsilon:.3g}, L={length:.4g})")
    return 0.25 * epsilon + math.asin(argument)


def L_eps(epsilon: float) -> float:
    return (0.1 - 4100.0 * epsilon) / 4.0


def D_bound(epsilon: float, length: float) -> float:
    return 4.0 * length + 4100.0 * epsilon


def R_bound(epsilon: float, length: float) -> float:
    """Radius of the normal tube around N contained in every vertical tube of length L."""
    if length <= 0:
        raise DomainError(f"tube length must be positive, got {length:.6g}")
    return math.sin(length) * math.cos(delta(epsilon, 2.0 * length) + 2.0 * length**2)


def form_bound(epsilon: float, length: float) -> float:
    """Bound on |(omega_g - omega)(X, Y)| for unit X, Y in the vertical tube of length L."""
    D = D_bound(epsilon, length)
    if D >= 1.0:
        raise DomainError(f"D = {D:.4g} must stay below 1")
    ratio = D / (1.0 - D)
    return ratio * (ratio + 2.0) + 2.0 * length + 100.0 * epsilon


def op_norm_bound(epsilon: float) -> float:
    floor = 1.0 - form_bound(epsilon, L_eps(epsilon))
    if floor <= 0:
        raise DomainError(f"omega_t may degenerate: 1 - form bound = {floor:.4g}")
    return 1.0 / floor


def alpha_bound(epsilon: float, length: float, distance: float) -> float:
    D = D_bound(epsilon, length)
    growth = (1.0 + D) / (1.0 - D)
    return 1.5 * growth * 1.5 * distance * form_bound(epsilon, length) + 200.0 * epsilon * growth


def speed_bound(epsilon: float, distance: float) -> float:
    return THRESHOLDS["speed_slope"] * distance + THRESHOLDS["speed_offset"] * epsilon


def displacement_bound(epsilon: float) -> float:
    slope = THRESHOLDS["speed_slope"]
    return THRESHOLDS["speed_offset"] * epsilon / slope * (math.exp(slope) - 1.0)


def check_containment(epsilon: float) -> bool:
    """842 eps < R(eps, L_eps); False outside the domain of the chain."""
    try:
        return THRESHOLDS["displacement"] * epsilon < R_bound(epsilon, L_eps(epsilon))
    except DomainError:
        return False


def containment_gap(epsilon: float) -> float:
    return R_bound(epsilon, L_eps(epsilon)) - THRESHOLDS["displacement"] * epsilon


def containment_crossing(upper: float = 2e-5, xtol: float = 1e-15) -> float:
    """epsilon where 842 eps meets R(eps, L_eps), by Brent's method on [0, upper]."""
    crossing = brentq(containment_gap, 0.0, upper, xtol=xtol)
    logger.debug(f"containment crossing at eps* = {crossing:.6e}")
    return float(crossing)


def constants(epsilon: float, length: Optional[float] = None) -> ConstantsTable:
    """Full table at (epsilon, L); L defaults to L_eps.

    Entries that depend on L_eps are None once L_eps is no longer positive.
    """
    if epsilon < 0:
        raise DomainError(f"epsilon must be nonnegative, got {epsilon}")
    tube = L_eps(epsilon)
    if length is None:
        if tube <= 0:
            raise DomainError(f"L_eps = {tube:.4g} is not positive for eps = {epsilon:.4g}")
        length = tube
    length = float(length)
    r = radius_r(epsilon, length)
    try:
        R_at_length: Optional[float] = R_bound(epsilon, length)
    except DomainError as e:
        logger.debug(f"R({epsilon:.3g}, {length:.4g}) undefined: {e}")
        R_at_length = None
    D_eps = R_eps = op_norm = pullback = None
    if tube > 0:
        D_eps = D_bound(epsilon, tube)
        pullback = THRESHOLDS["pullback_beta"] * epsilon * (1.0 + D_eps) / (1.0 - D_eps)
        try:
            R_eps = R_bound(epsilon, tube)
            op_norm = op_norm_bound(epsilon)
        except DomainError as e:
            logger.debug(f"tube constants undefined at eps={epsilon:.3g}: {e}")
    bound = form_bound(epsilon, length)
    return ConstantsTable(
        epsilon=epsilon,
        L=length,
        r=r,
        f_r=f_of_r(r),
        delta=delta(epsilon, length),
        L_eps=tube,
        D=D_bound(epsilon, length),
        D_eps=D_eps,
        R=R_at_length,
        R_eps=R_eps,
        containment_lhs=THRESHOLDS["displacement"] * epsilon,
        containment=check_containment(epsilon),
        form_bound=bound,
        nondegeneracy_floor=1.0 - bound,
        op_norm_bound=op_norm,
        displacement_bound=displacement_bound(epsilon),
        beta_bound=THRESHOLDS["beta"] * epsilon,
        pullback_beta_bound=pullback,
    )


def sweep(epsilons: Optional[Sequence[float]] = None, count: int = 201, upper: float = 2e-5) -> pd.DataFrame:
    """842 eps against R(eps, L_eps) on a grid of epsilons."""
    values = np.linspace(0.0, upper, count) if epsilons is None else np.asarray(epsilons, dtype=float)
    rows = []
    for epsilon in values:
        try:
            radius = R_bound(float(epsilon), L_eps(float(epsilon)))
        except DomainError:
            radius = float("nan")
        rows.append(
            {
                "epsilon": float(epsilon),
                "lhs_842_eps": THRESHOLDS["displacement"] * float(epsilon),
                "R_eps_L_eps": radius,
                "contained": check_containment(float(epsilon)),
            }
        )
    return pd.DataFrame(rows, columns=["epsilon", "lhs_842_eps", "R_eps_L_eps", "contained"])
