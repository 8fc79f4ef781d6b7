"""Exception types shared across the package."""


class ShapeError(ValueError):
    """Array dimensions do not match what an operation expects."""


class StateError(RuntimeError):
    """An operation was called in an invalid object state."""


class NumericError(FloatingPointError):
    """A non-finite value appeared where a finite one is required."""


class ConfigError(ValueError):
    """Invalid configuration, variant name, or incompatible checkpoint."""


class ContractViolation(AssertionError):
    """A training-loop invariant (zero-sum accounting, phase freeze) failed."""
