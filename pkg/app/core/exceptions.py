# app/core/exceptions.py - Error types raised by the geometry services

from typing import Optional


class GeometryError(Exception):
    """Base class for numeric failures in the averaging pipeline"""


class NotCompatible(GeometryError):
    """g and omega do not define an almost complex structure"""


class Degenerate(GeometryError):
    """A form, frame or metric lost rank"""


class LeftDomain(GeometryError):
    """An integration path exited the chart box"""


class NoConvergence(GeometryError):
    """An iterative solve hit its iteration cap"""

    def __init__(self, message: str, fiber_id: Optional[int] = None):
        super().__init__(message)
        self.fiber_id = fiber_id


class DimensionMismatch(GeometryError):
    pass


class OutsideTube(GeometryError):
    """Query point is farther from the submanifold than its tube radius"""


class MultipleLifts(GeometryError):
    """Two seeds of the section lift converged to different points"""


class DomainError(GeometryError):
    """A closed-form constant was evaluated outside its domain"""


class LeftTube(GeometryError):
    """A Moser trajectory left the tube where the estimates hold"""

    def __init__(self, message: str, constant: str = "R_eps_L"):
        super().__init__(message)
        self.constant = constant


class ScenarioError(Exception):
    """Invalid scenario file or override"""


class ConfigError(ScenarioError):
    """A solver setting does not fit the family it is applied to"""
