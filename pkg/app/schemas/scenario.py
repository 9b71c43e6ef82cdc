# app/schemas/scenario.py
from typing import Any, Dict, List, Literal, Optional

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from app.core.config import Settings

CheckName = Literal[
    "tube_shape_operator",
    "hessian_cross",
    "triangle_bound",
    "pushforward_bounds",
    "curve_growth",
    "form_bounds",
    "exactness",
    "moment_map_spread",
]


class CatalogEntry(BaseModel):
    """Catalog id plus keyword parameters"""

    model_config = ConfigDict(extra="forbid")

    id: str = Field(..., min_length=1, description="Catalog identifier")
    params: Dict[str, Any] = Field(default_factory=dict, description="Keyword arguments of the catalog builder")


class MemberSpec(BaseModel):
    model_config = ConfigDict(extra="forbid")

    submanifold: CatalogEntry
    weight: float = Field(..., gt=0, description="Probability weight of the member")


class GroupSpec(BaseModel):
    """Orbit of one submanifold under finitely many isometric symplectomorphisms"""

    model_config = ConfigDict(extra="forbid")

    base: CatalogEntry
    elements: List[CatalogEntry] = Field(..., min_length=1, description="Isometry catalog entries")


class FamilySpec(BaseModel):
    model_config = ConfigDict(extra="forbid")

    members: Optional[List[MemberSpec]] = Field(None, min_length=1)
    group: Optional[GroupSpec] = None

    @model_validator(mode="after")
    def one_source(self) -> "FamilySpec":
        if (self.members is None) == (self.group is None):
            raise ValueError("family needs exactly one of 'members' or 'group'")
        if self.members is not None:
            total = sum(m.weight for m in self.members)
            if abs(total - 1.0) > 1e-12:
                raise ValueError(f"member weights sum to {total}, expected 1")
        return self


class CheckSpec(BaseModel):
    model_config = ConfigDict(extra="forbid")

    name: CheckName
    trials: int = Field(200, ge=1, description="Trials, samples or curve pairs")
    params: Dict[str, Any] = Field(default_factory=dict, description="Verifier-specific parameters")


class Scenario(BaseModel):
    """One averaging run: manifold, family, solver overrides, requested checks"""

    model_config = ConfigDict(extra="forbid", populate_by_name=True)

    schema_version: Literal[1] = Field(..., alias="schema", description="Scenario format version")
    name: str = Field(..., min_length=1, pattern=r"^[A-Za-z0-9_.-]+$")
    description: str = ""
    manifold: CatalogEntry
    family: FamilySpec
    solver: Dict[str, Any] = Field(default_factory=dict, description="Overrides of Settings fields")
    isotropic: bool = Field(True, description="Run the primitive and Moser flow stages")
    reference_cross_check: Optional[int] = Field(None, ge=0, description="Second reference member index")
    checks: List[CheckSpec] = Field(default_factory=list)
    output: Optional[str] = Field(None, description="Output directory")

    @field_validator("solver")
    @classmethod
    def known_settings(cls, value: Dict[str, Any]) -> Dict[str, Any]:
        unknown = sorted(set(value) - set(Settings.model_fields))
        if unknown:
            raise ValueError(f"unknown solver settings: {', '.join(unknown)}")
        return value

