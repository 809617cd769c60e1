"""Exact dense attention and block-masked dense attention (ground truth)."""

from dataclasses import dataclass

import numpy as np

from rainfusion.errors import DegenerateRowError, InvalidArgumentError
from rainfusion.models import BlockingSpec, BlockMask
from rainfusion.tensor import check_attention_inputs


@dataclass(frozen=True)
class AttentionScale:
    """Score scale 1/sqrt(d)."""

    d: int

    def __post_init__(self):
        if self.d < 1:
            raise InvalidArgumentError(f"head dimension must be >= 1, got {self.d}", module="reference-oracle")

    @property
    def inv_sqrt_d(self) -> float:
        return 1.0 / np.sqrt(self.d)


def _scores(q: np.ndarray, k: np.ndarray) -> np.ndarray:
    q64 = q.astype(np.float64, copy=False)
    k64 = k.astype(np.float64, copy=False)
    return (q64 @ k64.T) * AttentionScale(q.shape[1]).inv_sqrt_d


def _softmax_rows(scores: np.ndarray) -> np.ndarray:
    shifted = scores - scores.max(axis=1, keepdims=True)
    p = np.exp(shifted)
    return p / p.sum(axis=1, keepdims=True)


def token_mask(mask: BlockMask, blocking: BlockingSpec) -> np.ndarray:
    """Expand a block mask to an N_q x N_k boolean matrix."""
    return np.repeat(np.repeat(mask.bits, blocking.q_sizes(), axis=0), blocking.k_sizes(), axis=1)


def attention_probabilities(
    q: np.ndarray,
    k: np.ndarray,
    mask: BlockMask | None = None,
    blocking: BlockingSpec | None = None,
) -> np.ndarray:
    """Dense softmax matrix P at float64; masked blocks get zero weight."""
    scores = _scores(q, k)
    if mask is not None:
        if blocking is None:
            raise InvalidArgumentError("a block mask needs its blocking", module="reference-oracle")
        if (blocking.n_q, blocking.n_k) != scores.shape:
            raise InvalidArgumentError(
                f"blocking covers {(blocking.n_q, blocking.n_k)} tokens, scores are {scores.shape}",
                module="reference-oracle",
            )
        mask.check_matches(blocking)
        empty = mask.empty_rows()
        if len(empty):
            raise DegenerateRowError(
                f"mask rows {empty.tolist()} have no allowed key block", module="reference-oracle"
            )
        scores = np.where(token_mask(mask, blocking), scores, -np.inf)
    return _softmax_rows(scores)


def naive_attention(q: np.ndarray, k: np.ndarray, v: np.ndarray) -> np.ndarray:
    """O = softmax(Q K^T / sqrt(d)) V, computed densely at float64."""
    check_attention_inputs(q, k, v)
    return attention_probabilities(q, k) @ v.astype(np.float64, copy=False)


def masked_naive_attention(
    q: np.ndarray,
    k: np.ndarray,
    v: np.ndarray,
    mask: BlockMask,
    blocking: BlockingSpec,
) -> np.ndarray:
    """Dense attention with scores in masked blocks set to -inf."""
    check_attention_inputs(q, k, v)
    return attention_probabilities(q, k, mask, blocking) @ v.astype(np.float64, copy=False)
