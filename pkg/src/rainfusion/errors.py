"""Exception hierarchy shared by every RainFusion module.

Each class carries the CLI exit code it maps to and the name of the module
that raised it, so the CLI can report failures without inspecting messages.
"""

from pathlib import Path


class RainFusionError(Exception):
    """Base class for all library errors."""

    exit_code = 1

    def __init__(self, message: str, module: str | None = None):
        super().__init__(message)
        self.module = module


class InvalidArgumentError(RainFusionError, ValueError):
    """Dimension mismatch, out-of-range parameter, or invalid geometry."""

    exit_code = 2


class ConfigError(InvalidArgumentError):
    """Pipeline configuration failed validation."""

    def __init__(self, message: str, field: str, module: str | None = "bench-cli"):
        super().__init__(f"{field}: {message}", module=module)
        self.field = field


class DegenerateRowError(RainFusionError, ArithmeticError):
    """A query row has no allowed key, so its softmax is undefined."""

    exit_code = 3


class UndefinedSimilarityError(RainFusionError, ArithmeticError):
    """Cosine similarity of two all-zero inputs."""

    exit_code = 3


class TensorFormatError(RainFusionError, ValueError):
    """A binary tensor or mask file does not match its format."""

    exit_code = 4

    def __init__(self, message: str, field: str, module: str | None = "tensor-core"):
        super().__init__(f"{field}: {message}", module=module)
        self.field = field


class MagicMismatchError(TensorFormatError):
    pass


class DimensionOverflowError(TensorFormatError):
    pass


class TruncatedPayloadError(TensorFormatError):
    pass


class NonFiniteValueError(TensorFormatError):
    pass


class TensorIOError(RainFusionError, OSError):
    """Reading or writing a file failed."""

    exit_code = 4

    def __init__(self, message: str, path: str | Path, module: str | None = "tensor-core"):
        super().__init__(f"{path}: {message}", module=module)
        self.path = Path(path)
