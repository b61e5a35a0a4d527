"""Exception hierarchy shared by all rsblab modules."""


class RSBLabError(Exception):
    """Base class for every error raised by rsblab."""


class ConfigError(RSBLabError, ValueError):
    """Invalid model parameters or run configuration."""


class ResourceCapError(RSBLabError):
    """A dense Hilbert space or an enumeration would exceed its configured cap."""


class SchemaError(RSBLabError, ValueError):
    """A persisted document is malformed or carries an unknown version."""


class ShapeMismatchError(RSBLabError, ValueError):
    """Arrays or documents do not match the lattice they are used with."""


class ZeroTransverseField(RSBLabError, ValueError):
    """An effective transverse coefficient is exactly zero, so no temporal coupling exists."""


class InsufficientEnsemble(RSBLabError, ValueError):
    """Too few disorder realizations for the requested statistic."""


class SimulationError(RSBLabError, RuntimeError):
    """Monte Carlo produced a non-finite value."""
