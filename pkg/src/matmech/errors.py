"""Exception types shared across the package."""


class MatMechError(Exception):
    """Base class for all package-specific errors."""


class BlockError(MatMechError, ValueError):
    """Invalid building-block parameters (e.g. range width exceeding the domain)."""


class CompileError(MatMechError, ValueError):
    """Workload description does not match the declared domain."""


class SizeError(MatMechError):
    """Materialization would exceed the configured memory cap."""


class ShapeError(MatMechError, ValueError):
    """Operands have incompatible shapes."""


class SupportError(MatMechError):
    """Strategy does not support the workload (W A+ A != W)."""


class SingularGramError(MatMechError):
    """Marginal Gram matrix is not invertible (top-mask weight is zero)."""


class InvalidGramError(MatMechError):
    """Weight vector is not a valid Gram representation (negative eigenvalue)."""


class CalibrationError(MatMechError):
    """Noise calibration failed (non-bracketing bisection)."""


class OptimizationError(MatMechError):
    """Strategy optimization failed to produce a usable result."""


class IngestionError(MatMechError, ValueError):
    """A dataset record does not map into the configured domain."""


class ConfigError(MatMechError, ValueError):
    """Invalid operator configuration (e.g. empty strategy group)."""
