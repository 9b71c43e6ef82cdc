# app/models/geometry.py - Value types shared by the geometry services

from dataclasses import dataclass

import numpy as np


@dataclass
class GeodesicPath:
    """Sampled geodesic t -> exp_p(t v), t in [0, 1]"""

    times: np.ndarray  # (k+1,)
    points: np.ndarray  # (k+1, m)
    velocities: np.ndarray  # (k+1, m)
    length: float  # |v|_g

    @property
    def start(self) -> np.ndarray:
        return self.points[0]

    @property
    def end(self) -> np.ndarray:
        return self.points[-1]

    @property
    def initial_velocity(self) -> np.ndarray:
        return self.velocities[0]


@dataclass
class SubspaceBasis:
    """Metric-orthonormal vectors (columns) spanning a subspace of T_base M"""

    base: np.ndarray
    vectors: np.ndarray  # (m, k)

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]
