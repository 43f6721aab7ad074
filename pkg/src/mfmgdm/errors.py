"""Exception hierarchy shared by all modules."""


class MgdmError(Exception):
    """Base class for all errors raised by this package."""


class ConfigurationError(MgdmError, ValueError):
    """Invalid parameters or configuration (e.g. a lag that does not fit the path)."""


class DimensionError(MgdmError, ValueError):
    """Array shapes that do not agree with the energy or model dimensions."""


class ModelError(MgdmError, ValueError):
    """Invalid target-model or initial-distribution parameters."""


class DomainError(MgdmError, ValueError):
    """Argument outside the support of a density."""


class NumericalDivergenceError(MgdmError, FloatingPointError):
    """The descent produced non-finite values or a growing loss.

    ``partial`` carries whatever the driver recorded before the failure
    (records and flow trace), so a caller can still inspect the run.
    """

    def __init__(self, message, partial=None):
        super().__init__(message)
        self.partial = partial


class SingularFlowError(MgdmError, ArithmeticError):
    """A step Jacobian is (numerically) singular; ``particle`` names the culprit if known."""

    def __init__(self, message, particle=None):
        super().__init__(message)
        self.particle = particle


class OracleScaleError(MgdmError, ValueError):
    """A dense test oracle was asked to build a matrix above its size cap."""


class DataError(MgdmError, ValueError):
    """Malformed input data file."""
