"""Exception hierarchy shared across the package."""


class PrevivorError(Exception):
    """Base class for all package errors."""


class DimensionError(PrevivorError, ValueError):
    """Shapes of related planes, masks, or grids do not line up."""


class EmptyInputError(PrevivorError, ValueError):
    """An operation that needs at least one element received none."""


class ConfigError(PrevivorError, ValueError):
    """A configuration value is out of range, missing, or unknown."""


class StateError(PrevivorError, RuntimeError):
    """An object is in the wrong state for the requested operation."""


class SilkEstimationError(PrevivorError, RuntimeError):
    """No silk candidates survived filtering; no background color found."""


class ManifestError(PrevivorError, ValueError):
    """A corpus manifest is missing, malformed, or inconsistent."""


class CheckpointError(PrevivorError, RuntimeError):
    """A parameter archive is missing, corrupt, or incompatible."""
