"""Exception types shared across gcrlab."""


class GcrlabError(Exception):
    """Base class for all gcrlab errors."""


class ValidationError(GcrlabError, ValueError):
    """Bad input: wrong shape, out-of-range index, malformed file or config."""


class NumericalFailure(GcrlabError, RuntimeError):
    """A numerical routine could not deliver its contract (e.g. CG nonconvergence)."""


class GateViolation(NumericalFailure):
    """Input data violates the compatibility gate required before realization."""
