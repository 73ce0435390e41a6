class ContractViolation(ValueError):
    """Raised when an operation is called with inconsistent shapes or arguments."""


class OracleFailure(RuntimeError):
    """Raised when a verification oracle (e.g. the Jacobi SVD) fails to converge."""


class RunError(RuntimeError):
    """Raised when a sharded or offloaded run cannot complete."""


class FingerprintMismatch(ValueError):
    """Raised when a scene file does not belong to the given model configuration."""


class ConfigError(ValueError):
    """Raised for unknown keys or invalid values in a run configuration."""
