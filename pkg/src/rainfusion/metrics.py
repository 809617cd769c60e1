"""Quality and efficiency metrics comparing the sparse and full pipelines."""

import json
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from rainfusion.errors import InvalidArgumentError, UndefinedSimilarityError
from rainfusion.flash import mac_count
from rainfusion.models import COSINE_HISTOGRAM_BINS, BlockingSpec, BlockMask
from rainfusion.oracle import attention_probabilities, token_mask

TIMING_FIELDS = ("wall_time_sparse", "wall_time_full")


def _check_same_shape(a: np.ndarray, b: np.ndarray) -> None:
    if a.shape != b.shape:
        raise InvalidArgumentError(f"shapes differ: {a.shape} vs {b.shape}", module="metrics")


def cosine_similarity(a: np.ndarray, b: np.ndarray) -> float:
    """Cosine of the flattened inputs; 0.0 if exactly one input is zero."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    _check_same_shape(a, b)
    norm_a = np.linalg.norm(a)
    norm_b = np.linalg.norm(b)
    if norm_a == 0 and norm_b == 0:
        raise UndefinedSimilarityError("both inputs are all zero", module="metrics")
    if norm_a == 0 or norm_b == 0:
        return 0.0
    return float(np.clip(np.vdot(a, b) / (norm_a * norm_b), -1.0, 1.0))


def per_token_cosine(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Row-wise cosine similarity; rows zero on both sides count as 1."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    _check_same_shape(a, b)
    norms = np.linalg.norm(a, axis=1) * np.linalg.norm(b, axis=1)
    dots = (a * b).sum(axis=1)
    both_zero = ~a.any(axis=1) & ~b.any(axis=1)
    sims = np.divide(dots, norms, out=np.zeros_like(dots), where=norms > 0)
    sims[both_zero] = 1.0
    return np.clip(sims, -1.0, 1.0)


def cosine_histogram(a: np.ndarray, b: np.ndarray, bins: int = COSINE_HISTOGRAM_BINS) -> list[int]:
    counts, _ = np.histogram(per_token_cosine(a, b), bins=bins, range=(-1.0, 1.0))
    return counts.tolist()


def computed_area(mask: BlockMask, blocking: BlockingSpec) -> int:
    """Token area of the unmasked block pairs."""
    mask.check_matches(blocking)
    return int(blocking.block_areas()[mask.bits].sum())


def effective_sparsity(mask: BlockMask, blocking: BlockingSpec) -> float:
    """Fraction of the N_q x N_k score area that is skipped."""
    return 1.0 - computed_area(mask, blocking) / (blocking.n_q * blocking.n_k)


def captured_attention_mass(q: np.ndarray, k: np.ndarray, mask: BlockMask, blocking: BlockingSpec) -> float:
    """Mean over query rows of the dense softmax weight inside selected blocks."""
    mask.check_matches(blocking)
    p = attention_probabilities(q, k)
    return float((p * token_mask(mask, blocking)).sum(axis=1).mean())


def intra_block_similarity(x: np.ndarray, block_size: int) -> float:
    """Mean pairwise cosine similarity of distinct tokens sharing a block."""
    x = np.asarray(x, dtype=np.float64)
    norms = np.linalg.norm(x, axis=1, keepdims=True)
    unit = np.divide(x, norms, out=np.zeros_like(x), where=norms > 0)
    sims = []
    for start in range(0, x.shape[0], block_size):
        block = unit[start:start + block_size]
        size = block.shape[0]
        if size < 2:
            continue
        gram = block @ block.T
        sims.append((gram.sum() - np.trace(gram)) / (size * (size - 1)))
    return float(np.mean(sims)) if sims else 1.0


def attention_speedup(mac_full: int, mac_sparse: int) -> float:
    if mac_sparse <= 0:
        raise InvalidArgumentError("sparse MAC count must be positive", module="metrics")
    return mac_full / mac_sparse


def end_to_end_speedup(attention_speedup_model: float, attention_fraction: float) -> float:
    """Whole-model speedup when only the attention share of latency speeds up."""
    if not 0.0 <= attention_fraction <= 1.0:
        raise InvalidArgumentError(
            f"attention fraction must be in [0, 1], got {attention_fraction}", module="metrics"
        )
    return 1.0 / ((1.0 - attention_fraction) + attention_fraction / attention_speedup_model)


@dataclass
class RunReport:
    """Result of one pipeline run (one head, or the aggregate over heads).

    Cosine similarity is computed over attention outputs, not decoded pixels.
    """

    cosine_sim: float
    max_abs_err: float
    target_sparsity: float
    effective_sparsity_presink: float
    effective_sparsity_postsink: float
    mac_full: int
    mac_sparse: int
    attention_speedup_model: float
    wall_time_sparse: float = 0.0
    wall_time_full: float = 0.0
    top_n: int | None = None
    heads: int = 1
    captured_mass: float | None = None
    baseline_cosine_sim: float | None = None
    block_similarity_default: float | None = None
    block_similarity_permuted: float | None = None
    end_to_end_speedup: float | None = None
    cosine_histogram: list[int] = field(default_factory=list)
    warnings: list[str] = field(default_factory=list)
    config: dict = field(default_factory=dict)
    per_head: list[dict] = field(default_factory=list)

    def to_dict(self, timing: bool = True) -> dict:
        data = asdict(self)
        if not timing:
            for name in TIMING_FIELDS:
                data.pop(name)
            for head in data["per_head"]:
                for name in TIMING_FIELDS:
                    head.pop(name, None)
        return data

    def to_json(self, timing: bool = True) -> str:
        return json.dumps(self.to_dict(timing=timing), indent=2)

    def to_row(self) -> dict:
        """Scalar fields only, in CSV column order."""
        return {name: getattr(self, name) for name in CSV_COLUMNS}


CSV_COLUMNS = [
    f.name for f in fields(RunReport)
    if f.name not in ("cosine_histogram", "warnings", "config", "per_head")
]


def build_report(
    *,
    full_output: np.ndarray,
    sparse_output: np.ndarray,
    presink_mask: BlockMask,
    postsink_mask: BlockMask,
    blocking: BlockingSpec,
    d: int,
    d_v: int,
    target_sparsity: float,
    wall_time_full: float = 0.0,
    wall_time_sparse: float = 0.0,
    top_n: int | None = None,
) -> RunReport:
    """Aggregate outputs, masks and timings into a RunReport."""
    mac_full = mac_count(blocking, None, d, d_v)
    mac_sparse = mac_count(blocking, postsink_mask, d, d_v)
    diff = np.abs(np.asarray(full_output, dtype=np.float64) - np.asarray(sparse_output, dtype=np.float64))
    return RunReport(
        cosine_sim=cosine_similarity(full_output, sparse_output),
        max_abs_err=float(diff.max()),
        target_sparsity=float(target_sparsity),
        effective_sparsity_presink=effective_sparsity(presink_mask, blocking),
        effective_sparsity_postsink=effective_sparsity(postsink_mask, blocking),
        mac_full=mac_full,
        mac_sparse=mac_sparse,
        attention_speedup_model=attention_speedup(mac_full, mac_sparse),
        wall_time_sparse=float(wall_time_sparse),
        wall_time_full=float(wall_time_full),
        top_n=top_n,
        cosine_histogram=cosine_histogram(full_output, sparse_output),
    )
