"""Block-mean representative tokens, block scores, and top-n block masks."""

import math
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from rainfusion.errors import (
    InvalidArgumentError,
    MagicMismatchError,
    TensorFormatError,
    TensorIOError,
    TruncatedPayloadError,
)
from rainfusion.models import MASK_HEADER, MASK_MAGIC, BlockingSpec, BlockMask

_MASK_HEADER_SIZE = struct.calcsize(MASK_HEADER)


@dataclass(frozen=True, eq=False)
class RepresentativeSet:
    """T x d matrix whose row i is the mean of block i's tokens."""

    reps: np.ndarray
    block_size: int

    @property
    def width(self) -> int:
        return self.reps.shape[1]


@dataclass(frozen=True)
class SparsityConfig:
    """Either a target sparsity rho in [0, 1) or an explicit top_n."""

    target_sparsity: float | None = None
    top_n: int | None = None

    def __post_init__(self):
        if (self.target_sparsity is None) == (self.top_n is None):
            raise InvalidArgumentError(
                "give exactly one of target_sparsity or top_n", module="mask-predictor"
            )

    def resolve_n(self, t_k: int) -> int:
        if self.top_n is not None:
            if not 1 <= self.top_n <= t_k:
                raise InvalidArgumentError(f"top_n {self.top_n} outside [1, {t_k}]", module="mask-predictor")
            return self.top_n
        return sparsity_to_n(self.target_sparsity, t_k)


def sparsity_to_n(rho: float, t_k: int) -> int:
    """n = max(1, round((1 - rho) * t_k)), rounding half away from zero."""
    if not 0.0 <= rho < 1.0:
        raise InvalidArgumentError(f"sparsity must be in [0, 1), got {rho}", module="mask-predictor")
    if t_k < 1:
        raise InvalidArgumentError(f"t_k must be >= 1, got {t_k}", module="mask-predictor")
    return min(t_k, max(1, math.floor((1.0 - rho) * t_k + 0.5)))


def block_means(x: np.ndarray, block_size: int) -> RepresentativeSet:
    """Mean token per block; the ragged last block averages its true size."""
    if block_size < 1:
        raise InvalidArgumentError(f"block size must be >= 1, got {block_size}", module="mask-predictor")
    n = x.shape[0]
    starts = np.arange(0, n, block_size)
    sizes = np.minimum(starts + block_size, n) - starts
    sums = np.add.reduceat(x.astype(np.float64, copy=False), starts, axis=0)
    return RepresentativeSet(reps=sums / sizes[:, None], block_size=block_size)


def score_blocks(q_reps: RepresentativeSet, k_reps: RepresentativeSet, d: int) -> np.ndarray:
    """S_hat[i, j] = q_hat_i . k_hat_j / sqrt(d)."""
    if q_reps.width != k_reps.width:
        raise InvalidArgumentError(
            f"representative widths differ: {q_reps.width} vs {k_reps.width}", module="mask-predictor"
        )
    if d < 1:
        raise InvalidArgumentError(f"head dimension must be >= 1, got {d}", module="mask-predictor")
    return (q_reps.reps @ k_reps.reps.T) / math.sqrt(d)


def predict_mask(s_hat: np.ndarray, config: SparsityConfig | int) -> BlockMask:
    """Keep the n highest-scoring key blocks in every query-block row.

    Ties go to the lower column index (stable sort on negated scores), so
    top-n sets are nested as n grows.
    """
    s_hat = np.asarray(s_hat, dtype=np.float64)
    t_q, t_k = s_hat.shape
    if isinstance(config, SparsityConfig):
        n = config.resolve_n(t_k)
    else:
        n = int(config)
    if not 1 <= n <= t_k:
        raise InvalidArgumentError(f"n {n} outside [1, {t_k}]", module="mask-predictor")

    order = np.argsort(-s_hat, axis=1, kind="stable")[:, :n]
    bits = np.zeros((t_q, t_k), dtype=bool)
    np.put_along_axis(bits, order, True, axis=1)
    return BlockMask(bits)


def predict_block_mask(
    q: np.ndarray,
    k: np.ndarray,
    blocking: BlockingSpec,
    config: SparsityConfig,
) -> tuple[BlockMask, np.ndarray]:
    """Representative-token mask prediction; returns (mask, S_hat)."""
    s_hat = score_blocks(block_means(q, blocking.b_q), block_means(k, blocking.b_k), q.shape[1])
    return predict_mask(s_hat, config), s_hat


def random_block_mask(row_counts, t_k: int, seed: int) -> BlockMask:
    """Uniformly random mask with the given number of ones per row."""
    rng = np.random.default_rng(seed)
    row_counts = np.asarray(row_counts, dtype=np.int64)
    if ((row_counts < 1) | (row_counts > t_k)).any():
        raise InvalidArgumentError(f"row counts must lie in [1, {t_k}]", module="mask-predictor")
    bits = np.zeros((len(row_counts), t_k), dtype=bool)
    for i, count in enumerate(row_counts):
        bits[i, rng.choice(t_k, size=count, replace=False)] = True
    return BlockMask(bits)


# ---------------------------------------------------------------------------
# RFM1 file format
# ---------------------------------------------------------------------------
def save_mask(mask: BlockMask, path: str | Path) -> Path:
    """Write a mask as RFM1: header then row-major bits packed MSB-first."""
    path = Path(path)
    header = struct.pack(MASK_HEADER, MASK_MAGIC, mask.t_q, mask.t_k)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_bytes(header + np.packbits(mask.bits.ravel()).tobytes())
    except OSError as exc:
        raise TensorIOError(f"cannot write mask ({exc.strerror or exc})", path, module="mask-predictor") from exc
    return path


def decode_mask(raw: bytes) -> BlockMask:
    if len(raw) < 4:
        raise TruncatedPayloadError("file too short for magic", field="magic", module="mask-predictor")
    if raw[:4] != MASK_MAGIC:
        raise MagicMismatchError(
            f"expected {MASK_MAGIC!r}, found {raw[:4]!r}", field="magic", module="mask-predictor"
        )
    if len(raw) < _MASK_HEADER_SIZE:
        raise TruncatedPayloadError("header truncated", field="header", module="mask-predictor")
    _, t_q, t_k = struct.unpack_from(MASK_HEADER, raw)
    if t_q < 1 or t_k < 1:
        raise TensorFormatError(f"dims must be >= 1, got {t_q} x {t_k}", field="t_q", module="mask-predictor")
    expected = -(-(t_q * t_k) // 8)
    payload = raw[_MASK_HEADER_SIZE:]
    if len(payload) != expected:
        raise TruncatedPayloadError(
            f"expected {expected} bytes for {t_q} x {t_k} bits, found {len(payload)}",
            field="payload",
            module="mask-predictor",
        )
    bits = np.unpackbits(np.frombuffer(payload, dtype=np.uint8), count=t_q * t_k)
    return BlockMask(bits.reshape(t_q, t_k).astype(bool))


def load_mask(path: str | Path) -> BlockMask:
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise TensorIOError(f"cannot read mask ({exc.strerror or exc})", path, module="mask-predictor") from exc
    return decode_mask(raw)
