class TriDPError(Exception):
    exit_code = 1


class InputError(TriDPError, ValueError):
    """Malformed or out-of-contract input data."""

    exit_code = 2


class ConfigurationError(TriDPError, ValueError):
    """Inconsistent graph, head or stage configuration."""

    exit_code = 2


class StageOrderError(TriDPError, RuntimeError):
    """A stage was requested before its prerequisite checkpoints exist."""

    exit_code = 3


class DivergenceError(TriDPError, RuntimeError):
    exit_code = 4


class NonFiniteError(TriDPError, FloatingPointError):
    exit_code = 4


class NotFittedError(TriDPError, AttributeError):
    pass
