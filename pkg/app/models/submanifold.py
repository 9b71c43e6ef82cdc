# app/models/submanifold.py - Parametrized submanifolds over regular grids

from dataclasses import dataclass, field, replace
from functools import cached_property
from typing import Callable, Optional, Tuple

import numpy as np
from scipy.interpolate import CubicSpline


@dataclass(eq=False)
class ParamSubmanifold:
    """Immersed submanifold given by a map from a parameter box into the chart.

    Periodic axes use grids without the duplicated endpoint. A dimension-0
    submanifold is a single point with an empty parameter vector.
    """

    name: str
    dim: int
    ambient_dim: int
    param: Callable[[np.ndarray], np.ndarray]
    lower: np.ndarray
    upper: np.ndarray
    resolution: Tuple[int, ...]
    periodic: Tuple[bool, ...] = ()
    tube_radius: float = 1.0
    label: str = ""
    params: dict = field(default_factory=dict)
    jacobian_step: float = 1e-6

    def __post_init__(self):
        self.lower = np.asarray(self.lower, dtype=float).reshape(self.dim)
        self.upper = np.asarray(self.upper, dtype=float).reshape(self.dim)
        self.resolution = tuple(int(r) for r in self.resolution)
        if not self.periodic:
            self.periodic = (False,) * self.dim
        if not self.label:
            self.label = self.name

    # -- grid -------------------------------------------------------------

    def grid_axes(self) -> list[np.ndarray]:
        axes = []
        for lo, hi, count, wraps in zip(self.lower, self.upper, self.resolution, self.periodic):
            axes.append(np.linspace(lo, hi, count, endpoint=not wraps))
        return axes

    @property
    def grid_shape(self) -> Tuple[int, ...]:
        return tuple(self.resolution) if self.dim else (1,)

    @cached_property
    def grid_parameters(self) -> np.ndarray:
        if self.dim == 0:
            return np.zeros((1, 0))
        mesh = np.meshgrid(*self.grid_axes(), indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=-1)

    @cached_property
    def grid_points(self) -> np.ndarray:
        return np.array([self.evaluate(s) for s in self.grid_parameters])

    @property
    def node_count(self) -> int:
        return self.grid_parameters.shape[0]

    # -- evaluation -------------------------------------------------------

    def evaluate(self, s: np.ndarray) -> np.ndarray:
        return np.asarray(self.param(np.asarray(s, dtype=float)), dtype=float)

    def jacobian(self, s: np.ndarray) -> np.ndarray:
        """Chart Jacobian (ambient_dim x dim) by central differences."""
        s = np.asarray(s, dtype=float)
        h = self.jacobian_step
        columns = []
        for a in range(self.dim):
            e = np.zeros(self.dim)
            e[a] = h
            columns.append((self.evaluate(s + e) - self.evaluate(s - e)) / (2.0 * h))
        if not columns:
            return np.zeros((self.ambient_dim, 0))
        return np.stack(columns, axis=-1)

    def hessian(self, s: np.ndarray, step: float = 1e-4) -> np.ndarray:
        """Second chart derivatives, shape (ambient_dim, dim, dim)."""
        s = np.asarray(s, dtype=float)
        out = np.zeros((self.ambient_dim, self.dim, self.dim))
        center = self.evaluate(s)
        for a in range(self.dim):
            ea = np.zeros(self.dim)
            ea[a] = step
            out[:, a, a] = (self.evaluate(s + ea) - 2.0 * center + self.evaluate(s - ea)) / step**2
            for b in range(a + 1, self.dim):
                eb = np.zeros(self.dim)
                eb[b] = step
                mixed = (
                    self.evaluate(s + ea + eb)
                    - self.evaluate(s + ea - eb)
                    - self.evaluate(s - ea + eb)
                    + self.evaluate(s - ea - eb)
                ) / (4.0 * step**2)
                out[:, a, b] = mixed
                out[:, b, a] = mixed
        return out

    def wrap(self, s: np.ndarray, clip: bool = True) -> np.ndarray:
        """Wrap periodic coordinates into the box and optionally clip the rest."""
        s = np.array(s, dtype=float)
        for a in range(self.dim):
            if self.periodic[a]:
                span = self.upper[a] - self.lower[a]
                s[a] = self.lower[a] + np.remainder(s[a] - self.lower[a], span)
            elif clip:
                s[a] = np.clip(s[a], self.lower[a], self.upper[a])
        return s

    def parameter_difference(self, s: np.ndarray, t: np.ndarray) -> np.ndarray:
        """t - s with periodic axes taken the short way round."""
        diff = np.asarray(t, dtype=float) - np.asarray(s, dtype=float)
        for a in range(self.dim):
            if self.periodic[a]:
                span = self.upper[a] - self.lower[a]
                diff[a] -= span * np.round(diff[a] / span)
        return diff

    def refined(self, factor: int = 2) -> "ParamSubmanifold":
        resolution = tuple(
            r * factor if wraps else (r - 1) * factor + 1
            for r, wraps in zip(self.resolution, self.periodic)
        )
        return replace(self, resolution=resolution)

    def with_resolution(self, resolution: Tuple[int, ...]) -> "ParamSubmanifold":
        return replace(self, resolution=tuple(resolution))

    def transformed(self, chart_map: Callable[[np.ndarray], np.ndarray], label: Optional[str] = None) -> "ParamSubmanifold":
        """Image under a chart map, keeping the parametrization domain."""
        inner = self.param
        return replace(self, param=lambda s: chart_map(inner(s)), label=label or self.label)


class GridField:
    """Vector-valued node data over a submanifold grid, interpolated by tensor-product cubic splines.

    Periodic axes use periodic splines, so the interpolant stays C2 across the
    seam; the other axes use not-a-knot splines that extrapolate past the box.
    """

    def __init__(self, base: ParamSubmanifold, values: np.ndarray):
        self.base = base
        self.values = np.asarray(values, dtype=float)
        width = self.values.shape[-1]
        if base.dim == 0:
            self._constant = self.values.reshape(width)
            self._leading = None
            return
        self._axes = base.grid_axes()
        self._grid = self.values.reshape(tuple(base.resolution) + (width,))
        self._leading = self._spline(0, self._grid)

    def _spline(self, a: int, data: np.ndarray) -> Optional[CubicSpline]:
        """Spline along the first array axis of data, which holds grid axis a."""
        axis = self._axes[a]
        if axis.size == 1:
            return None
        if self.base.periodic[a]:
            span = self.base.upper[a] - self.base.lower[a]
            closed = np.append(axis, axis[0] + span)
            return CubicSpline(closed, np.concatenate([data, data[:1]], axis=0), axis=0, bc_type="periodic")
        return CubicSpline(axis, data, axis=0, bc_type="not-a-knot")

    def _along(self, a: int, data: np.ndarray, t: float) -> np.ndarray:
        spline = self._leading if a == 0 else self._spline(a, data)
        return data[0] if spline is None else spline(t)

    def __call__(self, s: np.ndarray) -> np.ndarray:
        if self.base.dim == 0:
            return self._constant
        s = self.base.wrap(s, clip=False)
        data = self._grid
        for a in range(self.base.dim):
            data = self._along(a, data, s[a])
        return data


class SectionParametrization:
    """Submanifold built as a section over the grid of a base submanifold.

    In "normal" mode a node value c gives the point exp_{base(s)}(frame(s) c);
    in "chart" mode it is a displacement added to base(s) in chart coordinates.
    """

    def __init__(
        self,
        base: ParamSubmanifold,
        values: np.ndarray,
        mode: str = "normal",
        frame: Optional[Callable[[np.ndarray], np.ndarray]] = None,
        exp: Optional[Callable[[np.ndarray, np.ndarray], np.ndarray]] = None,
        wrap_point: Optional[Callable[[np.ndarray], np.ndarray]] = None,
    ):
        if mode not in ("normal", "chart"):
            raise ValueError(f"unknown section mode {mode}")
        if mode == "normal" and (frame is None or exp is None):
            raise ValueError("normal sections need a frame and an exponential map")
        self.base = base
        self.mode = mode
        self.frame = frame
        self.exp = exp
        self.wrap_point = wrap_point
        self.field = GridField(base, values)

    @property
    def values(self) -> np.ndarray:
        return self.field.values

    def coefficients(self, s: np.ndarray) -> np.ndarray:
        return self.field(s)

    def __call__(self, s: np.ndarray) -> np.ndarray:
        s = np.asarray(s, dtype=float)
        origin = self.base.evaluate(s)
        coeff = self.coefficients(s)
        if self.mode == "chart":
            point = origin + coeff
            return self.wrap_point(point) if self.wrap_point else point
        return self.exp(origin, self.frame(s) @ coeff)


def section_submanifold(
    base: ParamSubmanifold, section: SectionParametrization, name: str, label: Optional[str] = None
) -> ParamSubmanifold:
    return replace(base, name=name, param=section, label=label or name, params={"section_of": base.label})


def is_normal_section_over(sub: ParamSubmanifold, base: ParamSubmanifold) -> bool:
    """True when sub was built in normal mode over exactly this base object."""
    section = sub.param
    return isinstance(section, SectionParametrization) and section.mode == "normal" and section.base is base
