"""Exception types shared across the package.

The CLI maps these onto exit codes: ConfigError -> 2, NumericError -> 3,
CapacityError -> 4.
"""


class ConfigError(ValueError):
    """Invalid configuration, model parameters, or input file."""


class TraceFormatError(ConfigError):
    """Malformed trace file; message carries the offending line number."""


class CapacityError(ValueError):
    """Problem size exceeds a documented capacity limit."""


class NumericError(RuntimeError):
    """Numerical failure: non-convergence, divergence, bracket failure."""


class DivergenceError(NumericError):
    """Q-values exceeded the divergence watchdog threshold."""


class ImpossibleObservation(NumericError):
    """An observation had zero likelihood under the current belief."""


class TraceExhausted(RuntimeError):
    """A trace-driven environment was stepped past the end of its data."""
