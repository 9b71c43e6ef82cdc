from .manifold import AlmostKaehlerModel
from .geometry import GeodesicPath, SubspaceBasis
from .submanifold import GridField, ParamSubmanifold, SectionParametrization
from .family import FamilyMember, WeightedFamily
from .checks import BoundCheck, CheckStatus


__all__ = [
    "AlmostKaehlerModel",
    "GeodesicPath",
    "SubspaceBasis",
    "ParamSubmanifold",
    "GridField",
    "SectionParametrization",
    "FamilyMember",
    "WeightedFamily",
    "BoundCheck",
    "CheckStatus",
]
