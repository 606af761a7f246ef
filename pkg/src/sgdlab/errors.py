"""Exception types shared across the package.

The CLI maps these onto exit codes: config/misuse errors exit with 2,
divergence with 3, failed verification checks with 4.
"""


class MisuseError(ValueError):
    """An operation was called outside its contract (wrong protocol kind,
    empty batch, out-of-range indices, non-positive-definite curvature)."""


class ConfigError(ValueError):
    """Invalid configuration or hyperparameter values."""


class CapacityError(RuntimeError):
    """A computation was requested at a size the implementation refuses to
    attempt (full per-sample gradient enumeration on a large model, too few
    samples for a requested statistical tolerance)."""


class IdxFormatError(ValueError):
    """Malformed IDX dataset file: bad magic number, truncated payload or
    inconsistent image/label counts."""


class DivergenceError(RuntimeError):
    """Training or simulation produced non-finite or runaway state."""

    def __init__(self, message: str, step: int | None = None, time: float | None = None):
        super().__init__(message)
        self.step = step
        self.time = time
