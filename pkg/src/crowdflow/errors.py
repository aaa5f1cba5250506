"""Exception types raised across the package."""


class CrowdflowError(Exception):
    """Base class for package errors."""


class GridError(CrowdflowError, ValueError):
    pass


class CflViolation(CrowdflowError):
    """Raised when dt * max cell speed exceeds the cell size."""

    def __init__(self, message, max_speed=None, dt=None, h=None):
        super().__init__(message)
        self.max_speed = max_speed
        self.dt = dt
        self.h = h


class NoVisibleTarget(CrowdflowError):
    """Neither the target nor any waypoint can be seen from a point."""


class NonConvergence(CrowdflowError):
    """Iterative solver hit its iteration cap above tolerance."""


class SupportEscape(CrowdflowError):
    """Mass would leave the unit square."""


class ParseError(CrowdflowError):
    """Malformed scenario file. Carries the offending key and line when known."""

    def __init__(self, message, key=None, line=None):
        where = []
        if key is not None:
            where.append(f"key '{key}'")
        if line is not None:
            where.append(f"line {line}")
        if where:
            message = f"{message} ({', '.join(where)})"
        super().__init__(message)
        self.key = key
        self.line = line


class ValidationError(CrowdflowError, ValueError):
    """A scenario value violates a model invariant."""
