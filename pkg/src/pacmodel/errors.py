"""Exception types shared across the package."""


class PacModelError(Exception):
    """Base class for all package-specific errors."""


class ModelFormatError(PacModelError):
    """A model file is missing, malformed, or violates the layer-chain invariants."""


class OracleProtocolError(PacModelError):
    """An external oracle replied with something other than the wire protocol allows."""


class VacuousGuaranteeError(PacModelError):
    """Raised when a requested statistical guarantee cannot be met at all."""
