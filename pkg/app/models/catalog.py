# app/models/catalog.py - Catalog of model manifolds, submanifolds and isometries

"""
Every object a scenario can name lives here, built from plain numeric parameters.

Coordinates on even-dimensional models are (x1..xn, y1..yn) with the standard
form dx∧dy, except the sphere product which uses (a1, b1, a2, b2).
"""

from typing import Callable, Dict, Optional, Sequence

import numpy as np

from app.models.manifold import AlmostKaehlerModel, canonical_compatible_metric
from app.models.submanifold import ParamSubmanifold
from app.utils.numerics import central_jacobian, standard_symplectic

ChartMap = Callable[[np.ndarray], np.ndarray]


# ---------------------------------------------------------------------------
# Model manifolds
# ---------------------------------------------------------------------------


def _euclidean_distance(model_wrap: Optional[np.ndarray]):
    def distance(p: np.ndarray, points: np.ndarray) -> np.ndarray:
        diff = np.atleast_2d(points) - p
        if model_wrap is not None:
            diff = diff - model_wrap * np.round(diff / model_wrap)
        return np.linalg.norm(diff, axis=-1)

    return distance


def flat(dim: int = 2, half_width: float = 100.0) -> AlmostKaehlerModel:
    if dim < 2 or dim % 2:
        raise ValueError(f"flat model needs an even dimension, got {dim}")
    omega = standard_symplectic(dim)
    identity = np.eye(dim)
    return AlmostKaehlerModel(
        name="flat",
        dim=dim,
        metric_field=lambda p: identity,
        symplectic_field=lambda p: omega,
        lower=-half_width * np.ones(dim),
        upper=half_width * np.ones(dim),
        flat=True,
        distance_field=_euclidean_distance(None),
        params={"dim": dim},
    )


def torus2() -> AlmostKaehlerModel:
    omega = standard_symplectic(2)
    span = 2.0 * np.pi * np.ones(2)
    return AlmostKaehlerModel(
        name="torus2",
        dim=2,
        metric_field=lambda p: np.eye(2),
        symplectic_field=lambda p: omega,
        lower=np.zeros(2),
        upper=span.copy(),
        injectivity_radius=np.pi,
        log_guard=np.pi,
        flat=True,
        periodic=True,
        distance_field=_euclidean_distance(span),
    )


def _conformal_factor(u: np.ndarray, radius: float) -> float:
    return 4.0 * radius**2 / (1.0 + u @ u) ** 2


def _sphere_christoffel(u: np.ndarray) -> np.ndarray:
    # g = exp(2 sigma) Id with d sigma = -2u / (1 + |u|^2)
    grad = -2.0 * u / (1.0 + u @ u)
    delta = np.eye(u.size)
    return (
        np.einsum("ki,j->kij", delta, grad)
        + np.einsum("kj,i->kij", delta, grad)
        - np.einsum("ij,k->kij", delta, grad)
    )


def sphere_embedding(u: np.ndarray, radius: float = 1.0) -> np.ndarray:
    """Stereographic chart (projection from the south pole) to R^3; u = 0 is the north pole."""
    u = np.atleast_2d(u)
    sq = np.sum(u * u, axis=-1, keepdims=True)
    return radius * np.concatenate([2.0 * u, 1.0 - sq], axis=-1) / (1.0 + sq)


def sphere_chart(x: np.ndarray, radius: float = 1.0) -> np.ndarray:
    x = np.atleast_2d(x)
    return x[:, :2] / (radius + x[:, 2:3])


def _sphere_distance(radius: float):
    def distance(p: np.ndarray, points: np.ndarray) -> np.ndarray:
        x = sphere_embedding(p, radius)[0]
        y = sphere_embedding(points, radius)
        cross = np.linalg.norm(np.cross(x, y), axis=-1)
        return radius * np.arctan2(cross, y @ x)

    return distance


def _sphere_log(radius: float):
    def log(p: np.ndarray, q: np.ndarray) -> np.ndarray:
        x = sphere_embedding(p, radius)[0]
        y = sphere_embedding(q, radius)[0]
        tangent = y - (x @ y) / radius**2 * x
        size = np.linalg.norm(tangent)
        if size < 1e-15:
            return np.asarray(q, dtype=float) - p
        angle = np.arctan2(np.linalg.norm(np.cross(x, y)), x @ y)
        ambient = tangent / size * radius * angle
        jac = central_jacobian(lambda u: sphere_embedding(u, radius)[0], p, 1e-6)
        return jac.T @ ambient / _conformal_factor(p, radius)

    return log


def sphere2(radius: float = 1.0, box: float = 4.0) -> AlmostKaehlerModel:
    base = standard_symplectic(2)
    return AlmostKaehlerModel(
        name="sphere2",
        dim=2,
        metric_field=lambda u: _conformal_factor(u, radius) * np.eye(2),
        symplectic_field=lambda u: _conformal_factor(u, radius) * base,
        lower=-box * np.ones(2),
        upper=box * np.ones(2),
        curvature_bound_hint=1.0 / radius**2,
        injectivity_radius=np.pi * radius,
        log_guard=np.pi * radius - 0.05,
        christoffel_field=_sphere_christoffel,
        distance_field=_sphere_distance(radius),
        log_field=_sphere_log(radius),
        params={"radius": radius},
    )


def sphere_product(r1: float = 1.0, r2: float = 1.0, box: float = 4.0) -> AlmostKaehlerModel:
    """S^2(r1) x S^2(r2) in coordinates (a1, b1, a2, b2), both factors stereographic."""
    base = standard_symplectic(2)
    first, second = _sphere_distance(r1), _sphere_distance(r2)
    first_log, second_log = _sphere_log(r1), _sphere_log(r2)

    def metric(p: np.ndarray) -> np.ndarray:
        out = np.zeros((4, 4))
        out[:2, :2] = _conformal_factor(p[:2], r1) * np.eye(2)
        out[2:, 2:] = _conformal_factor(p[2:], r2) * np.eye(2)
        return out

    def omega(p: np.ndarray) -> np.ndarray:
        out = np.zeros((4, 4))
        out[:2, :2] = _conformal_factor(p[:2], r1) * base
        out[2:, 2:] = _conformal_factor(p[2:], r2) * base
        return out

    def christoffel(p: np.ndarray) -> np.ndarray:
        out = np.zeros((4, 4, 4))
        out[:2, :2, :2] = _sphere_christoffel(p[:2])
        out[2:, 2:, 2:] = _sphere_christoffel(p[2:])
        return out

    def distance(p: np.ndarray, points: np.ndarray) -> np.ndarray:
        points = np.atleast_2d(points)
        return np.hypot(first(p[:2], points[:, :2]), second(p[2:], points[:, 2:]))

    return AlmostKaehlerModel(
        name="sphere_product",
        dim=4,
        metric_field=metric,
        symplectic_field=omega,
        lower=-box * np.ones(4),
        upper=box * np.ones(4),
        curvature_bound_hint=max(1.0 / r1**2, 1.0 / r2**2),
        injectivity_radius=np.pi * min(r1, r2),
        log_guard=np.pi * min(r1, r2) - 0.05,
        christoffel_field=christoffel,
        distance_field=distance,
        log_field=lambda p, q: np.concatenate([first_log(p[:2], q[:2]), second_log(p[2:], q[2:])]),
        params={"r1": r1, "r2": r2},
    )


_BUMP_DIRECTION = np.array(
    [
        [1.0, 0.5, 0.0, 0.3],
        [0.5, -0.5, 0.2, 0.0],
        [0.0, 0.2, 0.8, -0.4],
        [0.3, 0.0, -0.4, -0.6],
    ]
)


def perturbed_r4(amplitude: float = 0.1) -> AlmostKaehlerModel:
    """R^4 with a Gaussian bump on the reference metric, made compatible with dx∧dy."""
    if not 0.0 <= amplitude < 0.5:
        raise ValueError(f"amplitude {amplitude} outside [0, 0.5)")
    omega = standard_symplectic(4)
    bump = _BUMP_DIRECTION / np.linalg.norm(_BUMP_DIRECTION, 2)

    def gtilde(p: np.ndarray) -> np.ndarray:
        return np.eye(4) + amplitude * np.exp(-0.5 * (p @ p)) * bump

    return AlmostKaehlerModel(
        name="perturbed_r4",
        dim=4,
        metric_field=canonical_compatible_metric(lambda p: omega, gtilde),
        symplectic_field=lambda p: omega,
        lower=-3.0 * np.ones(4),
        upper=3.0 * np.ones(4),
        curvature_bound_hint=3.0 * amplitude,
        nabla_omega_hint=amplitude,
        injectivity_radius=2.0,
        log_guard=2.0,
        params={"amplitude": amplitude},
    )


MANIFOLDS: Dict[str, Callable[..., AlmostKaehlerModel]] = {
    "flat": flat,
    "sphere2": sphere2,
    "torus2": torus2,
    "perturbed_r4": perturbed_r4,
    "sphere_product": sphere_product,
}


def build_manifold(catalog_id: str, params: Optional[dict] = None) -> AlmostKaehlerModel:
    if catalog_id not in MANIFOLDS:
        raise KeyError(f"unknown manifold '{catalog_id}'")
    return MANIFOLDS[catalog_id](**(params or {}))


# ---------------------------------------------------------------------------
# Submanifolds
# ---------------------------------------------------------------------------


def linear_graph(
    matrix: Sequence[Sequence[float]],
    offset: Optional[Sequence[float]] = None,
    half_width: float = 1.0,
    resolution: int = 5,
    tube_radius: float = 1.0,
    label: str = "",
) -> ParamSubmanifold:
    """Graph y = A x + b over the box |x_i| <= half_width in R^{2n}."""
    a = np.atleast_2d(np.asarray(matrix, dtype=float))
    n = a.shape[1]
    b = np.zeros(n) if offset is None else np.asarray(offset, dtype=float)
    return ParamSubmanifold(
        name="linear_graph",
        dim=n,
        ambient_dim=2 * n,
        param=lambda s: np.concatenate([s, a @ s + b]),
        lower=-half_width * np.ones(n),
        upper=half_width * np.ones(n),
        resolution=(resolution,) * n,
        tube_radius=tube_radius,
        label=label,
        params={"matrix": a.tolist(), "offset": b.tolist()},
    )


def line(
    direction: Sequence[float],
    origin: Optional[Sequence[float]] = None,
    half_width: float = 1.0,
    resolution: int = 9,
    tube_radius: float = 1.0,
    label: str = "",
) -> ParamSubmanifold:
    """Straight segment origin + s direction, |s| <= half_width."""
    u = np.asarray(direction, dtype=float)
    u = u / np.linalg.norm(u)
    o = np.zeros_like(u) if origin is None else np.asarray(origin, dtype=float)
    return ParamSubmanifold(
        name="line",
        dim=1,
        ambient_dim=u.size,
        param=lambda s: o + s[0] * u,
        lower=[-half_width],
        upper=[half_width],
        resolution=(resolution,),
        tube_radius=tube_radius,
        label=label,
        params={"direction": u.tolist(), "origin": o.tolist()},
    )


def affine_lagrangian(
    c: float,
    n: int = 2,
    direction: int = 0,
    half_width: float = 1.0,
    resolution: int = 5,
    tube_radius: float = 1.0,
    label: str = "",
) -> ParamSubmanifold:
    """The plane y = c e_direction in R^{2n}."""
    offset = np.zeros(n)
    offset[direction] = c
    sub = linear_graph(np.zeros((n, n)), offset, half_width, resolution, tube_radius, label or f"plane_{c:+.3e}")
    sub.name = "affine_lagrangian"
    return sub


def circle_flat(
    radius: float,
    center: Sequence[float] = (0.0, 0.0),
    resolution: int = 32,
    tube_radius: Optional[float] = None,
    label: str = "",
) -> ParamSubmanifold:
    c = np.asarray(center, dtype=float)
    return ParamSubmanifold(
        name="circle_flat",
        dim=1,
        ambient_dim=2,
        param=lambda s: c + radius * np.array([np.cos(s[0]), np.sin(s[0])]),
        lower=[0.0],
        upper=[2.0 * np.pi],
        resolution=(resolution,),
        periodic=(True,),
        tube_radius=tube_radius if tube_radius is not None else 0.9 * radius,
        label=label,
        params={"radius": radius, "center": c.tolist()},
    )


def sphere_cap_curve(
    polar_angle: float,
    resolution: int = 32,
    tube_radius: float = 1.0,
    label: str = "",
) -> ParamSubmanifold:
    """Latitude circle at the given angle from the north pole, in stereographic coordinates."""
    rho = np.tan(0.5 * polar_angle)
    return ParamSubmanifold(
        name="sphere_cap_curve",
        dim=1,
        ambient_dim=2,
        param=lambda s: rho * np.array([np.cos(s[0]), np.sin(s[0])]),
        lower=[0.0],
        upper=[2.0 * np.pi],
        resolution=(resolution,),
        periodic=(True,),
        tube_radius=tube_radius,
        label=label,
        params={"polar_angle": polar_angle},
    )


def product_circles(
    theta1: float,
    theta2: float,
    resolution: int = 12,
    tube_radius: float = 1.0,
    label: str = "",
) -> ParamSubmanifold:
    """Product of latitude circles in S^2 x S^2; a Lagrangian torus."""
    rho1, rho2 = np.tan(0.5 * theta1), np.tan(0.5 * theta2)
    return ParamSubmanifold(
        name="product_circles",
        dim=2,
        ambient_dim=4,
        param=lambda s: np.array(
            [rho1 * np.cos(s[0]), rho1 * np.sin(s[0]), rho2 * np.cos(s[1]), rho2 * np.sin(s[1])]
        ),
        lower=[0.0, 0.0],
        upper=[2.0 * np.pi, 2.0 * np.pi],
        resolution=(resolution, resolution),
        periodic=(True, True),
        tube_radius=tube_radius,
        label=label,
        params={"theta1": theta1, "theta2": theta2},
    )


def perturbed_torus(
    r1: float = 1.0,
    r2: float = 1.0,
    a1: float = 0.0,
    a2: float = 0.0,
    k1: int = 2,
    k2: int = 3,
    resolution: int = 12,
    tube_radius: float = 0.5,
    label: str = "",
) -> ParamSubmanifold:
    """Product of the curves rho_k(s) e^{i s} in each complex line; Lagrangian for any amplitudes."""

    def param(s: np.ndarray) -> np.ndarray:
        rho1 = r1 + a1 * np.cos(k1 * s[0])
        rho2 = r2 + a2 * np.cos(k2 * s[1])
        return np.array(
            [rho1 * np.cos(s[0]), rho2 * np.cos(s[1]), rho1 * np.sin(s[0]), rho2 * np.sin(s[1])]
        )

    return ParamSubmanifold(
        name="perturbed_torus",
        dim=2,
        ambient_dim=4,
        param=param,
        lower=[0.0, 0.0],
        upper=[2.0 * np.pi, 2.0 * np.pi],
        resolution=(resolution, resolution),
        periodic=(True, True),
        tube_radius=tube_radius,
        label=label,
        params={"r1": r1, "r2": r2, "a1": a1, "a2": a2, "k1": k1, "k2": k2},
    )


def lagrangian_torus_r4(r1: float = 1.0, r2: float = 1.0, resolution: int = 12, tube_radius: float = 0.5, label: str = "") -> ParamSubmanifold:
    sub = perturbed_torus(r1, r2, 0.0, 0.0, resolution=resolution, tube_radius=tube_radius, label=label)
    sub.name = "lagrangian_torus_r4"
    sub.params = {"r1": r1, "r2": r2}
    if not label:
        sub.label = "lagrangian_torus_r4"
    return sub


def point(coords: Sequence[float], tube_radius: float = 1.0, label: str = "") -> ParamSubmanifold:
    p = np.asarray(coords, dtype=float)
    return ParamSubmanifold(
        name="point",
        dim=0,
        ambient_dim=p.size,
        param=lambda s: p.copy(),
        lower=[],
        upper=[],
        resolution=(),
        tube_radius=tube_radius,
        label=label,
        params={"coords": p.tolist()},
    )


SUBMANIFOLDS: Dict[str, Callable[..., ParamSubmanifold]] = {
    "linear_graph": linear_graph,
    "line": line,
    "affine_lagrangian": affine_lagrangian,
    "circle_flat": circle_flat,
    "sphere_cap_curve": sphere_cap_curve,
    "lagrangian_torus_r4": lagrangian_torus_r4,
    "perturbed_torus": perturbed_torus,
    "product_circles": product_circles,
    "point": point,
}


def build_submanifold(catalog_id: str, params: Optional[dict] = None) -> ParamSubmanifold:
    if catalog_id not in SUBMANIFOLDS:
        raise KeyError(f"unknown submanifold '{catalog_id}'")
    return SUBMANIFOLDS[catalog_id](**(params or {}))


# ---------------------------------------------------------------------------
# Isometric symplectomorphisms
# ---------------------------------------------------------------------------


def _plane_rotation(angle: float) -> np.ndarray:
    c, s = np.cos(angle), np.sin(angle)
    return np.array([[c, -s], [s, c]])


def translation(vector: Sequence[float]) -> ChartMap:
    v = np.asarray(vector, dtype=float)
    return lambda p: np.asarray(p) + v


def unitary_r4(a: float = 0.0, b: float = 0.0) -> ChartMap:
    """(z1, z2) -> (e^{ia} z1, e^{ib} z2) with z_k = x_k + i y_k."""
    matrix = np.eye(4)
    for k, angle in ((0, a), (1, b)):
        rot = _plane_rotation(angle)
        idx = [k, k + 2]
        matrix[np.ix_(idx, idx)] = rot
    return lambda p: matrix @ np.asarray(p)


def u2_mix(theta: float = 0.0) -> ChartMap:
    """Real rotation mixing z1 and z2, applied to x and y alike."""
    rot = _plane_rotation(theta)
    matrix = np.zeros((4, 4))
    matrix[:2, :2] = rot
    matrix[2:, 2:] = rot
    return lambda p: matrix @ np.asarray(p)


def diagonal_rotation(theta: float = 0.0) -> ChartMap:
    """Element e^{i theta} of the diagonal circle action, z -> e^{-i theta} z."""
    return unitary_r4(-theta, -theta)


def sphere_z_rotation(angle: float = 0.0) -> ChartMap:
    """Rotation about the polar axis; acts on every stereographic factor of the chart."""
    rot = _plane_rotation(angle)

    def apply(p: np.ndarray) -> np.ndarray:
        p = np.asarray(p, dtype=float)
        return (p.reshape(-1, 2) @ rot.T).reshape(p.shape)

    return apply


def sphere_rotation(alpha: float = 0.0, beta: float = 0.0, radius: float = 1.0) -> ChartMap:
    """Rotation about the x axis by beta followed by the z axis by alpha, in the stereographic chart."""
    rx = np.array([[1.0, 0.0, 0.0], [0.0, np.cos(beta), -np.sin(beta)], [0.0, np.sin(beta), np.cos(beta)]])
    rz = np.eye(3)
    rz[:2, :2] = _plane_rotation(alpha)
    rotation = rz @ rx

    def apply(u: np.ndarray) -> np.ndarray:
        x = sphere_embedding(u, radius) @ rotation.T
        return sphere_chart(x, radius)[0]

    return apply


ISOMETRIES: Dict[str, Callable[..., ChartMap]] = {
    "translation": translation,
    "unitary_r4": unitary_r4,
    "u2_mix": u2_mix,
    "diagonal_rotation": diagonal_rotation,
    "sphere_z_rotation": sphere_z_rotation,
    "sphere_rotation": sphere_rotation,
}


def build_isometry(catalog_id: str, params: Optional[dict] = None) -> ChartMap:
    if catalog_id not in ISOMETRIES:
        raise KeyError(f"unknown isometry '{catalog_id}'")
    return ISOMETRIES[catalog_id](**(params or {}))


# ---------------------------------------------------------------------------
# Hamiltonian actions
# ---------------------------------------------------------------------------


class DiagonalCircleAction:
    """S^1 acting on C^2 = R^4 by z -> e^{-i theta} z with moment map J = |p|^2 / 2."""

    name = "diagonal_circle"

    def generator(self, p: np.ndarray) -> np.ndarray:
        n = p.size // 2
        return np.concatenate([p[n:], -p[:n]])

    def moment(self, p: np.ndarray) -> float:
        return 0.5 * float(p @ p)

    def element(self, theta: float) -> ChartMap:
        return diagonal_rotation(theta)

    def sample(self, count: int) -> list[tuple[str, ChartMap]]:
        return [(f"theta_{k}", self.element(2.0 * np.pi * k / count)) for k in range(count)]


ACTIONS = {"diagonal_circle": DiagonalCircleAction}
