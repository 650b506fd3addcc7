"""Exception hierarchy shared across the package."""


class GoalGraphError(Exception):
    """Base class for all package-specific errors."""


class InvalidInputError(GoalGraphError):
    """Non-finite or otherwise malformed numeric input."""


class ConfigError(GoalGraphError):
    """Invalid configuration value or unknown category."""


class ShapeError(GoalGraphError):
    """Tensor shape mismatch. Message names both shapes."""


class DataError(GoalGraphError):
    """Missing or malformed data files / scenes."""


class StructuralError(GoalGraphError):
    """Graph construction reached an impossible state (e.g. empty candidate set)."""


class NumericError(GoalGraphError):
    """Non-finite loss or other numeric failure during optimization."""
