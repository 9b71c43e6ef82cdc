# app/models/family.py - Finite weighted families of submanifolds

from dataclasses import dataclass
from typing import Callable, List, Sequence

import numpy as np

from app.models.submanifold import ParamSubmanifold


@dataclass
class FamilyMember:
    weight: float
    submanifold: ParamSubmanifold

    @property
    def label(self) -> str:
        return self.submanifold.label


class WeightedFamily:
    """Discretized probability space of submanifolds {(w_g, N_g)}.

    Members are stored in canonical order (label, weight), so permuting the
    input changes nothing downstream.
    """

    WEIGHT_TOLERANCE = 1e-12

    def __init__(self, members: Sequence[FamilyMember]):
        if not members:
            raise ValueError("a family needs at least one member")
        total = sum(m.weight for m in members)
        if abs(total - 1.0) > self.WEIGHT_TOLERANCE:
            raise ValueError(f"weights sum to {total}, expected 1")
        if any(m.weight <= 0 for m in members):
            raise ValueError("weights must be positive")
        dims = {m.submanifold.dim for m in members}
        if len(dims) != 1:
            raise ValueError(f"members have different dimensions {sorted(dims)}")
        self.members: List[FamilyMember] = sorted(members, key=lambda m: (m.label, m.weight))

    @classmethod
    def from_pairs(cls, pairs: Sequence[tuple[float, ParamSubmanifold]]) -> "WeightedFamily":
        return cls([FamilyMember(weight=float(w), submanifold=s) for w, s in pairs])

    @classmethod
    def from_group(
        cls, base: ParamSubmanifold, elements: Sequence[tuple[str, Callable[[np.ndarray], np.ndarray]]]
    ) -> "WeightedFamily":
        """Orbit of a base submanifold under finitely many isometries, equal weights."""
        weight = 1.0 / len(elements)
        members = [
            FamilyMember(weight=weight, submanifold=base.transformed(g, label=f"{index:03d}:{name}"))
            for index, (name, g) in enumerate(elements)
        ]
        return cls(members)

    def __len__(self) -> int:
        return len(self.members)

    def __iter__(self):
        return iter(self.members)

    @property
    def dim(self) -> int:
        return self.members[0].submanifold.dim

    @property
    def weights(self) -> np.ndarray:
        return np.array([m.weight for m in self.members])

    @property
    def submanifolds(self) -> List[ParamSubmanifold]:
        return [m.submanifold for m in self.members]

    def transformed(self, chart_map: Callable[[np.ndarray], np.ndarray]) -> "WeightedFamily":
        return WeightedFamily(
            [FamilyMember(m.weight, m.submanifold.transformed(chart_map)) for m in self.members]
        )
