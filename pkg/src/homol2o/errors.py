"""Exception hierarchy shared across the package."""


class Homol2oError(Exception):
    """Base class for all package errors."""


class ConfigError(Homol2oError):
    """Invalid or inconsistent configuration."""


class DataError(Homol2oError):
    """Missing, malformed, or mismatched data files."""


class DimensionError(Homol2oError):
    """Array shape incompatible with the declared problem dimensions."""


class GraphError(Homol2oError):
    """Backward pass invoked on an unrecorded or non-scalar graph."""


class NonFiniteError(Homol2oError):
    """NaN/Inf encountered; message names the offending op, layer, or constraint."""


class DivergenceError(Homol2oError):
    """Training loss became non-finite."""

    def __init__(self, epoch, message=""):
        self.epoch = epoch
        super().__init__(message or f"training diverged at epoch {epoch}")
