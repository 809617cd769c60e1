"""Tiled online-softmax attention with per-block-pair skipping.

For query block i the key blocks j are visited in ascending order. Each
computed pair updates the running row max m, the running denominator l and
the unnormalized output acc; a skipped pair (mask bit 0) touches none of
them and performs no multiply-accumulate work. The output block is acc / l.
"""

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from rainfusion.errors import DegenerateRowError, InvalidArgumentError
from rainfusion.models import BlockingSpec, BlockMask
from rainfusion.tensor import check_attention_inputs


@dataclass
class OnlineSoftmaxState:
    """Running statistics of one query block."""

    m: np.ndarray
    l: np.ndarray
    acc: np.ndarray

    @classmethod
    def start(cls, rows: int, d_v: int, dtype) -> "OnlineSoftmaxState":
        return cls(
            m=np.full(rows, -np.inf, dtype=dtype),
            l=np.zeros(rows, dtype=dtype),
            acc=np.zeros((rows, d_v), dtype=dtype),
        )

    def update(self, scores: np.ndarray, v_block: np.ndarray) -> None:
        m_new = np.maximum(self.m, scores.max(axis=1))
        # exp(-inf - finite) == 0 on the first visited block
        alpha = np.exp(self.m - m_new)
        p = np.exp(scores - m_new[:, None])
        self.l = alpha * self.l + p.sum(axis=1)
        self.acc = alpha[:, None] * self.acc + p @ v_block
        self.m = m_new

    def finalize(self, block: int = 0) -> np.ndarray:
        empty = np.flatnonzero(self.l == 0)
        if len(empty):
            raise DegenerateRowError(
                f"query block {block} rows {empty.tolist()} attended to no key block",
                module="flash-attention",
            )
        return self.acc / self.l[:, None]


@dataclass(frozen=True)
class FlashResult:
    """Output plus instrumentation counters of one flash_attention call."""

    output: np.ndarray
    macs: int
    blocks_computed: int
    blocks_skipped: int


def _query_block(
    i: int,
    q: np.ndarray,
    k: np.ndarray,
    v: np.ndarray,
    blocking: BlockingSpec,
    bits: np.ndarray | None,
    scale,
) -> tuple[np.ndarray, int, int]:
    q_i = q[blocking.q_range(i)]
    state = OnlineSoftmaxState.start(q_i.shape[0], v.shape[1], q.dtype)
    macs = computed = 0
    for j in range(blocking.t_k):
        if bits is not None and not bits[i, j]:
            continue
        k_j = k[blocking.k_range(j)]
        v_j = v[blocking.k_range(j)]
        state.update((q_i @ k_j.T) * scale, v_j)
        macs += q_i.shape[0] * k_j.shape[0] * (q.shape[1] + v.shape[1])
        computed += 1
    return state.finalize(i), macs, computed


def flash_attention_report(
    q: np.ndarray,
    k: np.ndarray,
    v: np.ndarray,
    blocking: BlockingSpec,
    mask: BlockMask | None = None,
    workers: int = 1,
) -> FlashResult:
    """Blocked attention with optional block skipping and counters.

    Args:
        q, k, v: N_q x d, N_k x d and N_k x d_v matrices of one dtype family.
        blocking: Block sizes; n_q/n_k must match the matrices.
        mask: T_q x T_k block mask, all ones when omitted.
        workers: Query blocks processed concurrently. Results are placed by
            block index, so output is identical to the sequential order.
    """
    check_attention_inputs(q, k, v)
    if (blocking.n_q, blocking.n_k) != (q.shape[0], k.shape[0]):
        raise InvalidArgumentError(
            f"blocking covers {(blocking.n_q, blocking.n_k)} tokens, inputs have {(q.shape[0], k.shape[0])}",
            module="flash-attention",
        )
    dtype = np.result_type(q.dtype, k.dtype, v.dtype, np.float32)
    q, k, v = (np.asarray(m, dtype=dtype) for m in (q, k, v))
    bits = None
    if mask is not None:
        mask.check_matches(blocking)
        bits = mask.bits
    scale = dtype.type(1.0 / np.sqrt(q.shape[1]))

    def run(i: int):
        return _query_block(i, q, k, v, blocking, bits, scale)

    if workers > 1 and blocking.t_q > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            blocks = list(pool.map(run, range(blocking.t_q)))
    else:
        blocks = [run(i) for i in range(blocking.t_q)]

    output = np.concatenate([b[0] for b in blocks], axis=0)
    computed = sum(b[2] for b in blocks)
    return FlashResult(
        output=output,
        macs=sum(b[1] for b in blocks),
        blocks_computed=computed,
        blocks_skipped=blocking.t_q * blocking.t_k - computed,
    )


def flash_attention(
    q: np.ndarray,
    k: np.ndarray,
    v: np.ndarray,
    blocking: BlockingSpec,
    mask: BlockMask | None = None,
    workers: int = 1,
) -> np.ndarray:
    return flash_attention_report(q, k, v, blocking, mask, workers).output


def mac_count(blocking: BlockingSpec, mask: BlockMask | None, d: int, d_v: int) -> int:
    """Multiply-accumulates of QK^T and PV over the unmasked block pairs."""
    areas = blocking.block_areas()
    if mask is None:
        area = int(areas.sum())
    else:
        mask.check_matches(blocking)
        area = int(areas[mask.bits].sum())
    return area * (d + d_v)
