"""Constants, defaults, and shared domain types for the sparse-attention pipeline."""

import os
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

import numpy as np

from rainfusion.errors import ConfigError, InvalidArgumentError

# Project paths
PROJECT_ROOT = Path(__file__).resolve().parent.parent.parent
DATA_REPORTS = PROJECT_ROOT / "data" / "reports"
DEFAULT_REPORT = DATA_REPORTS / "report.json"
DEFAULT_SWEEP_CSV = DATA_REPORTS / "sweep.csv"

# Binary formats
TENSOR_MAGIC = b"RFT1"
MASK_MAGIC = b"RFM1"
TENSOR_HEADER = "<4sB3xQQ"   # magic, precision code, pad x3, rows, cols
MASK_HEADER = "<4sQQ"        # magic, t_q, t_k
QKV_SUFFIXES = (".q.rft", ".k.rft", ".v.rft")
MAX_PAYLOAD_BYTES = 1 << 40

# Pipeline defaults
DEFAULT_BLOCK_Q = 64
DEFAULT_BLOCK_K = 64
DEFAULT_WINDOW = (4, 8, 8)
DEFAULT_IMAGE_WINDOW = (1, 8, 8)
DEFAULT_SPARSITY = 0.8
DEFAULT_SMOOTHNESS = 0.9
DEFAULT_HEAD_DIM = 64
DEFAULT_SWEEP_SPARSITIES = (0.0, 0.8, 0.9)
DEFAULT_SWEEP_PERMUTATION = (False, True)

# Synthetic generator: Gaussian blur sigma (grid units) at smoothness 1.0
MAX_BLUR_SIGMA = 2.0

# Report diagnostics
COSINE_HISTOGRAM_BINS = 10

# Parallelism
THREADS_ENV = "RF_THREADS"


class Precision(str, Enum):
    """Element width used uniformly by one pipeline run."""

    F32 = "f32"
    F64 = "f64"

    @property
    def dtype(self) -> np.dtype:
        return np.dtype(np.float32) if self is Precision.F32 else np.dtype(np.float64)

    @property
    def code(self) -> int:
        return 0 if self is Precision.F32 else 1

    @classmethod
    def from_code(cls, code: int) -> "Precision":
        if code == 0:
            return cls.F32
        if code == 1:
            return cls.F64
        raise ValueError(f"unknown precision code {code}")

    @classmethod
    def from_dtype(cls, dtype) -> "Precision":
        return cls.F32 if np.dtype(dtype) == np.float32 else cls.F64


@dataclass(frozen=True)
class VideoLayout:
    """Latent grid (F, H, W); tokens are flattened frame-major by default."""

    f: int
    h: int
    w: int

    def __post_init__(self):
        for name in ("f", "h", "w"):
            if getattr(self, name) < 1:
                raise InvalidArgumentError(
                    f"layout {name} must be >= 1, got {getattr(self, name)}",
                    module="permutation",
                )

    @property
    def n(self) -> int:
        return self.f * self.h * self.w

    @property
    def frame_tokens(self) -> int:
        return self.h * self.w

    @property
    def is_image(self) -> bool:
        return self.f == 1


@dataclass(frozen=True)
class WindowSpec:
    """Window extents (w_f, w_h, w_w) in tokens."""

    w_f: int
    w_h: int
    w_w: int

    def check_fits(self, layout: VideoLayout) -> None:
        """Raise naming the first axis whose extent is outside [1, layout]."""
        for axis, extent, limit in (
            ("w_f", self.w_f, layout.f),
            ("w_h", self.w_h, layout.h),
            ("w_w", self.w_w, layout.w),
        ):
            if not 1 <= extent <= limit:
                raise ConfigError(
                    f"window extent {extent} outside [1, {limit}]",
                    field=axis,
                    module="permutation",
                )

    def clipped(self, layout: VideoLayout) -> "WindowSpec":
        return WindowSpec(
            max(1, min(self.w_f, layout.f)),
            max(1, min(self.w_h, layout.h)),
            max(1, min(self.w_w, layout.w)),
        )

    def as_tuple(self) -> tuple[int, int, int]:
        return (self.w_f, self.w_h, self.w_w)


@dataclass(frozen=True)
class BlockingSpec:
    """Query/key block sizes for partitioning N_q x N_k attention."""

    b_q: int
    b_k: int
    n_q: int
    n_k: int

    def __post_init__(self):
        if self.b_q < 1 or self.b_k < 1:
            raise InvalidArgumentError(
                f"block sizes must be >= 1, got b_q={self.b_q}, b_k={self.b_k}",
                module="flash-attention",
            )
        if self.n_q < 1 or self.n_k < 1:
            raise InvalidArgumentError(
                f"token counts must be >= 1, got n_q={self.n_q}, n_k={self.n_k}",
                module="flash-attention",
            )

    @classmethod
    def square(cls, block: int, n: int) -> "BlockingSpec":
        return cls(block, block, n, n)

    @property
    def t_q(self) -> int:
        return -(-self.n_q // self.b_q)

    @property
    def t_k(self) -> int:
        return -(-self.n_k // self.b_k)

    def q_range(self, i: int) -> slice:
        return slice(i * self.b_q, min((i + 1) * self.b_q, self.n_q))

    def k_range(self, j: int) -> slice:
        return slice(j * self.b_k, min((j + 1) * self.b_k, self.n_k))

    def q_sizes(self) -> np.ndarray:
        return _block_sizes(self.n_q, self.b_q)

    def k_sizes(self) -> np.ndarray:
        return _block_sizes(self.n_k, self.b_k)

    def block_areas(self) -> np.ndarray:
        """Token area of every (i, j) block pair, ragged-aware."""
        return np.outer(self.q_sizes(), self.k_sizes())


def _block_sizes(n: int, block: int) -> np.ndarray:
    sizes = np.full(-(-n // block), block, dtype=np.int64)
    sizes[-1] = n - block * (len(sizes) - 1)
    return sizes


@dataclass(frozen=True, eq=False)
class BlockMask:
    """T_q x T_k boolean mask; True means the block pair is computed."""

    bits: np.ndarray

    def __post_init__(self):
        bits = np.array(self.bits, dtype=bool)
        if bits.ndim != 2 or bits.shape[0] < 1 or bits.shape[1] < 1:
            raise InvalidArgumentError(
                f"mask must be a non-empty 2D array, got shape {bits.shape}",
                module="mask-predictor",
            )
        bits.setflags(write=False)
        object.__setattr__(self, "bits", bits)

    @classmethod
    def full(cls, t_q: int, t_k: int) -> "BlockMask":
        return cls(np.ones((t_q, t_k), dtype=bool))

    @property
    def t_q(self) -> int:
        return self.bits.shape[0]

    @property
    def t_k(self) -> int:
        return self.bits.shape[1]

    @property
    def ones(self) -> int:
        return int(self.bits.sum())

    def row_counts(self) -> np.ndarray:
        return self.bits.sum(axis=1)

    def empty_rows(self) -> np.ndarray:
        return np.flatnonzero(~self.bits.any(axis=1))

    def check_matches(self, blocking: BlockingSpec) -> None:
        if (self.t_q, self.t_k) != (blocking.t_q, blocking.t_k):
            raise InvalidArgumentError(
                f"mask dims {(self.t_q, self.t_k)} do not match "
                f"blocking {(blocking.t_q, blocking.t_k)}",
                module="mask-predictor",
            )

    def __eq__(self, other) -> bool:
        if not isinstance(other, BlockMask):
            return NotImplemented
        return np.array_equal(self.bits, other.bits)

    __hash__ = None


@dataclass(frozen=True, eq=False)
class PermutationMap:
    """Token reindexing: forward[new] = old, inverse[old] = new."""

    forward: np.ndarray
    inverse: np.ndarray = field(default=None)

    def __post_init__(self):
        forward = np.array(self.forward, dtype=np.intp)
        n = len(forward)
        if forward.ndim != 1 or n < 1:
            raise InvalidArgumentError("permutation must be a non-empty 1D array", module="permutation")
        if not np.array_equal(np.sort(forward), np.arange(n)):
            raise InvalidArgumentError("forward map is not a bijection on [0, N)", module="permutation")
        inverse = np.empty(n, dtype=np.intp)
        inverse[forward] = np.arange(n)
        if self.inverse is not None and not np.array_equal(self.inverse, inverse):
            raise InvalidArgumentError("inverse map does not invert forward map", module="permutation")
        forward.setflags(write=False)
        inverse.setflags(write=False)
        object.__setattr__(self, "forward", forward)
        object.__setattr__(self, "inverse", inverse)

    @classmethod
    def identity(cls, n: int) -> "PermutationMap":
        return cls(np.arange(n))

    def __len__(self) -> int:
        return len(self.forward)

    @property
    def is_identity(self) -> bool:
        return bool(np.array_equal(self.forward, np.arange(len(self))))

    def __eq__(self, other) -> bool:
        if not isinstance(other, PermutationMap):
            return NotImplemented
        return np.array_equal(self.forward, other.forward)

    __hash__ = None


def resolve_threads(value: str | None = None) -> int:
    """Worker cap from RF_THREADS (default 1, sequential)."""
    raw = os.environ.get(THREADS_ENV) if value is None else value
    if raw is None or raw.strip() == "":
        return 1
    try:
        threads = int(raw)
    except ValueError:
        raise ConfigError(f"expected a positive integer, got {raw!r}", field=THREADS_ENV) from None
    if threads < 1:
        raise ConfigError(f"expected a positive integer, got {threads}", field=THREADS_ENV)
    return threads
