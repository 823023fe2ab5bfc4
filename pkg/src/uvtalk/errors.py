"""Exception types shared across modules; the CLI maps them to exit codes."""


class ConfigurationError(ValueError):
    """Invalid or inconsistent configuration (exit code 2)."""


class ContractError(ValueError):
    """An operation was called on input violating its precondition."""


class DataError(ValueError):
    """Missing or malformed on-disk data (exit code 3)."""


class CheckpointMismatchError(DataError):
    """Checkpoints or pivots that were not produced for each other."""


class NumericalFailure(RuntimeError):
    """Training diverged or produced non-finite values (exit code 4)."""
