"""Dense token matrices: validation, synthetic Q/K/V generation, and RFT1 file I/O."""

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.ndimage import gaussian_filter

from rainfusion.errors import (
    DimensionOverflowError,
    InvalidArgumentError,
    MagicMismatchError,
    NonFiniteValueError,
    TensorFormatError,
    TensorIOError,
    TruncatedPayloadError,
)
from rainfusion.models import (
    MAX_BLUR_SIGMA,
    MAX_PAYLOAD_BYTES,
    QKV_SUFFIXES,
    TENSOR_HEADER,
    TENSOR_MAGIC,
    Precision,
    VideoLayout,
)

_HEADER_SIZE = struct.calcsize(TENSOR_HEADER)


def as_matrix(data, precision: Precision | None = None) -> np.ndarray:
    """Validate a 2D token matrix and cast it to the requested precision.

    Args:
        data: Array-like of shape (rows, cols).
        precision: Target element width. Keeps float32/float64 input as is
            when omitted; anything else becomes float64.

    Returns:
        A C-contiguous float array with rows >= 1, cols >= 1, all finite.
    """
    arr = np.asarray(data)
    if arr.ndim != 2:
        raise InvalidArgumentError(f"matrix must be 2D, got shape {arr.shape}", module="tensor-core")
    if arr.shape[0] < 1 or arr.shape[1] < 1:
        raise InvalidArgumentError(f"matrix must be non-empty, got shape {arr.shape}", module="tensor-core")
    if precision is not None:
        dtype = precision.dtype
    elif arr.dtype in (np.float32, np.float64):
        dtype = arr.dtype
    else:
        dtype = np.dtype(np.float64)
    arr = np.ascontiguousarray(arr, dtype=dtype)
    if not np.isfinite(arr).all():
        raise NonFiniteValueError("matrix contains NaN or Inf", field="data")
    return arr


def check_attention_inputs(q: np.ndarray, k: np.ndarray, v: np.ndarray) -> None:
    """Q.cols == K.cols and K.rows == V.rows, all 2D and non-empty."""
    for name, m in (("Q", q), ("K", k), ("V", v)):
        if m.ndim != 2 or m.shape[0] < 1 or m.shape[1] < 1:
            raise InvalidArgumentError(f"{name} must be a non-empty 2D matrix, got {m.shape}")
    if q.shape[1] != k.shape[1]:
        raise InvalidArgumentError(f"Q width {q.shape[1]} != K width {k.shape[1]}")
    if k.shape[0] != v.shape[0]:
        raise InvalidArgumentError(f"K rows {k.shape[0]} != V rows {v.shape[0]}")


# ---------------------------------------------------------------------------
# Synthetic generator
# ---------------------------------------------------------------------------
@dataclass(frozen=True)
class SyntheticSpec:
    """Seeded Q/K/V over a video layout.

    smoothness = 0 gives i.i.d. Gaussian tokens; larger values blur white
    noise over the (F, H, W) grid so neighboring tokens are correlated.
    """

    seed: int
    layout: VideoLayout
    d: int
    smoothness: float = 0.0
    precision: Precision = Precision.F32

    def __post_init__(self):
        if self.d < 1:
            raise InvalidArgumentError(f"head dimension must be >= 1, got {self.d}", module="tensor-core")
        if not 0.0 <= self.smoothness <= 1.0:
            raise InvalidArgumentError(
                f"smoothness must be in [0, 1], got {self.smoothness}", module="tensor-core"
            )
        if self.seed < 0:
            raise InvalidArgumentError(f"seed must be unsigned, got {self.seed}", module="tensor-core")


def _smooth_tokens(rng: np.random.Generator, layout: VideoLayout, d: int, smoothness: float) -> np.ndarray:
    shape = (layout.f, layout.h, layout.w, d)
    noise = rng.standard_normal(shape)
    if smoothness == 0.0:
        return noise.reshape(layout.n, d)

    sigma = smoothness * MAX_BLUR_SIGMA
    field = gaussian_filter(rng.standard_normal(shape), sigma=(sigma, sigma, sigma, 0.0), mode="nearest")
    # unit variance per channel
    std = field.reshape(layout.n, d).std(axis=0)
    std[std == 0] = 1.0
    field = field / std
    mixed = np.sqrt(smoothness) * field + np.sqrt(1.0 - smoothness) * noise
    return mixed.reshape(layout.n, d)


def generate_synthetic_qkv(spec: SyntheticSpec) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Return (Q, K, V), each N x d, deterministic for a fixed SyntheticSpec."""
    rng = np.random.default_rng(spec.seed)
    q, k, v = (
        _smooth_tokens(rng, spec.layout, spec.d, spec.smoothness).astype(spec.precision.dtype)
        for _ in range(3)
    )
    return q, k, v


# ---------------------------------------------------------------------------
# RFT1 file format
# ---------------------------------------------------------------------------
def save_tensor(m: np.ndarray, path: str | Path, precision: Precision | None = None) -> Path:
    """Write a matrix as RFT1 (little-endian header, row-major payload).

    Returns:
        Path to the written file.
    """
    m = as_matrix(m, precision)
    precision = Precision.from_dtype(m.dtype)
    path = Path(path)
    header = struct.pack(TENSOR_HEADER, TENSOR_MAGIC, precision.code, m.shape[0], m.shape[1])
    payload = m.astype(m.dtype.newbyteorder("<"), copy=False).tobytes(order="C")
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_bytes(header + payload)
    except OSError as exc:
        raise TensorIOError(f"cannot write tensor ({exc.strerror or exc})", path) from exc
    return path


def decode_tensor(raw: bytes) -> np.ndarray:
    """Parse RFT1 bytes; each failure names the offending header field."""
    if len(raw) < 4:
        raise TruncatedPayloadError(f"file too short for magic ({len(raw)} bytes)", field="magic")
    if raw[:4] != TENSOR_MAGIC:
        raise MagicMismatchError(f"expected {TENSOR_MAGIC!r}, found {raw[:4]!r}", field="magic")
    if len(raw) < _HEADER_SIZE:
        raise TruncatedPayloadError(
            f"header needs {_HEADER_SIZE} bytes, file has {len(raw)}", field="header"
        )
    _, code, rows, cols = struct.unpack_from(TENSOR_HEADER, raw)
    try:
        precision = Precision.from_code(code)
    except ValueError:
        raise TensorFormatError(f"unknown precision code {code}", field="precision") from None
    if rows < 1:
        raise DimensionOverflowError(f"rows must be >= 1, got {rows}", field="rows")
    if cols < 1:
        raise DimensionOverflowError(f"cols must be >= 1, got {cols}", field="cols")
    itemsize = precision.dtype.itemsize
    expected = rows * cols * itemsize
    if expected > MAX_PAYLOAD_BYTES:
        raise DimensionOverflowError(f"{rows} x {cols} elements exceed the payload limit", field="cols")

    payload = raw[_HEADER_SIZE:]
    if len(payload) < expected:
        raise TruncatedPayloadError(
            f"expected {expected} bytes for {rows} x {cols}, found {len(payload)}", field="payload"
        )
    if len(payload) > expected:
        raise TensorFormatError(f"{len(payload) - expected} trailing bytes after payload", field="payload")

    data = np.frombuffer(payload, dtype=precision.dtype.newbyteorder("<")).reshape(rows, cols)
    if not np.isfinite(data).all():
        raise NonFiniteValueError("payload contains NaN or Inf", field="data")
    return data.astype(precision.dtype)


def load_tensor(path: str | Path) -> np.ndarray:
    """Load an RFT1 file written by save_tensor."""
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise TensorIOError(f"cannot read tensor ({exc.strerror or exc})", path) from exc
    return decode_tensor(raw)


def qkv_paths(prefix: str | Path) -> tuple[Path, Path, Path]:
    prefix = str(prefix)
    return tuple(Path(prefix + suffix) for suffix in QKV_SUFFIXES)


def save_qkv(prefix: str | Path, q: np.ndarray, k: np.ndarray, v: np.ndarray) -> tuple[Path, Path, Path]:
    """Write `<prefix>.q.rft`, `<prefix>.k.rft`, `<prefix>.v.rft`."""
    return tuple(save_tensor(m, p) for m, p in zip((q, k, v), qkv_paths(prefix)))


def load_qkv(prefix: str | Path) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    q, k, v = (load_tensor(p) for p in qkv_paths(prefix))
    check_attention_inputs(q, k, v)
    return q, k, v
