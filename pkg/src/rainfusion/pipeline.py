"""End-to-end sparse attention pipeline and parameter sweeps.

permute (and relocate) -> block means -> block scores -> top-n mask -> sink
-> sparse flash attention -> inverse permute -> compare with full attention.
The mask predictor and the flash kernel always work in permuted space.
"""

import itertools
import logging
import time
from collections.abc import Callable
from concurrent.futures import ThreadPoolExecutor
from contextlib import contextmanager
from dataclasses import asdict, dataclass, replace
from pathlib import Path

import numpy as np
import pandas as pd

from rainfusion.errors import ConfigError, RainFusionError
from rainfusion.flash import flash_attention_report
from rainfusion.metrics import (
    CSV_COLUMNS,
    RunReport,
    attention_speedup,
    build_report,
    captured_attention_mass,
    cosine_similarity,
    end_to_end_speedup,
    intra_block_similarity,
)
from rainfusion.models import (
    DEFAULT_BLOCK_K,
    DEFAULT_BLOCK_Q,
    DEFAULT_HEAD_DIM,
    DEFAULT_SMOOTHNESS,
    DEFAULT_SPARSITY,
    DEFAULT_SWEEP_PERMUTATION,
    DEFAULT_SWEEP_SPARSITIES,
    BlockingSpec,
    BlockMask,
    PermutationMap,
    Precision,
    VideoLayout,
    WindowSpec,
    resolve_threads,
)
from rainfusion.permutation import apply_permutation, build_window_permutation, default_window, invert
from rainfusion.predictor import SparsityConfig, load_mask, predict_block_mask, random_block_mask, save_mask
from rainfusion.sink import SinkSpec, apply_first_frame_sink, build_relocation
from rainfusion.tensor import SyntheticSpec, as_matrix, generate_synthetic_qkv, load_qkv

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class PipelineConfig:
    """Everything one `run` needs; CLI flags mirror these fields."""

    frames: int = 8
    height: int = 16
    width: int = 16
    head_dim: int = DEFAULT_HEAD_DIM
    heads: int = 1
    precision: Precision = Precision.F32
    block_q: int = DEFAULT_BLOCK_Q
    block_k: int = DEFAULT_BLOCK_K
    window: tuple[int, int, int] | None = None
    sparsity: float | None = DEFAULT_SPARSITY
    top_n: int | None = None
    sink: bool = True
    relocation: bool = True
    permutation: bool = True
    seed: int = 0
    smoothness: float = DEFAULT_SMOOTHNESS
    qkv: str | None = None
    mask: str | None = None
    random_baseline: bool = False
    attention_fraction: float | None = None
    warmup: bool = True

    @property
    def layout(self) -> VideoLayout:
        return VideoLayout(self.frames, self.height, self.width)

    @property
    def window_spec(self) -> WindowSpec:
        if self.window is None:
            return default_window(self.layout)
        return WindowSpec(*self.window)

    def echo(self) -> dict:
        data = asdict(self)
        data["precision"] = self.precision.value
        if self.window is not None:
            data["window"] = list(self.window)
        return data


@contextmanager
def stage(module: str):
    """Tag library errors raised inside the block with the module name."""
    try:
        yield
    except RainFusionError as exc:
        if exc.module is None:
            exc.module = module
        raise


def resolve_config(config: PipelineConfig) -> tuple[PipelineConfig, list[str]]:
    """Validate a config, fill defaults, and downgrade invalid combinations.

    Returns:
        The resolved config and the warnings recorded while resolving it.
    """
    warnings: list[str] = []
    for name in ("frames", "height", "width", "head_dim", "heads", "block_q", "block_k"):
        if getattr(config, name) < 1:
            raise ConfigError(f"must be >= 1, got {getattr(config, name)}", field=name)
    if config.seed < 0:
        raise ConfigError(f"must be >= 0, got {config.seed}", field="seed")
    if not 0.0 <= config.smoothness <= 1.0:
        raise ConfigError(f"must be in [0, 1], got {config.smoothness}", field="smoothness")
    if config.attention_fraction is not None and not 0.0 <= config.attention_fraction <= 1.0:
        raise ConfigError(f"must be in [0, 1], got {config.attention_fraction}", field="attention_fraction")
    if not isinstance(config.precision, Precision):
        try:
            config = replace(config, precision=Precision(config.precision))
        except ValueError:
            raise ConfigError(f"unknown precision {config.precision!r}", field="precision") from None

    layout = config.layout
    t_k = -(-layout.n // config.block_k)
    if config.top_n is not None:
        if not 1 <= config.top_n <= t_k:
            raise ConfigError(f"must be in [1, {t_k}], got {config.top_n}", field="top_n")
        if config.sparsity is not None:
            warnings.append(f"sparsity {config.sparsity} ignored: top_n {config.top_n} given")
        config = replace(config, sparsity=None)
    elif config.sparsity is None:
        raise ConfigError("give a target sparsity or top_n", field="sparsity")
    elif not 0.0 <= config.sparsity < 1.0:
        raise ConfigError(f"must be in [0, 1), got {config.sparsity}", field="sparsity")

    if config.window is None:
        config = replace(config, window=default_window(layout).as_tuple())
    else:
        try:
            window = tuple(int(x) for x in config.window)
        except (TypeError, ValueError):
            raise ConfigError(f"expected integer extents, got {config.window!r}", field="window") from None
        if len(window) != 3:
            raise ConfigError(f"expected 3 extents, got {len(window)}", field="window")
        WindowSpec(*window).check_fits(layout)
        config = replace(config, window=window)

    if layout.is_image and config.sink:
        warnings.append("sink disabled: single-frame layout makes every block a frame-0 block")
        config = replace(config, sink=False)
    if layout.is_image and config.relocation:
        warnings.append("relocation disabled: single-frame layout has nothing to relocate")
        config = replace(config, relocation=False)
    if config.qkv is not None and config.heads != 1:
        raise ConfigError("file inputs hold a single head; use heads=1", field="heads")

    for message in warnings:
        log.warning(message)
    return config, warnings


def token_order(config: PipelineConfig) -> PermutationMap | None:
    """Permutation applied before mask prediction, or None for default order."""
    layout = config.layout
    if config.relocation and not layout.is_image:
        return build_relocation(layout, config.window_spec if config.permutation else None)
    if config.permutation:
        return build_window_permutation(layout, config.window_spec)
    return None


def _target_sparsity(config: PipelineConfig, t_k: int) -> float:
    if config.sparsity is not None:
        return config.sparsity
    return 1.0 - config.top_n / t_k


def block_masks(
    config: PipelineConfig,
    qp: np.ndarray,
    kp: np.ndarray,
    order: PermutationMap | None,
    blocking: BlockingSpec,
) -> tuple[BlockMask, BlockMask]:
    """Pre-sink and post-sink masks for permuted Q and K."""
    with stage("mask-predictor"):
        if config.mask is not None:
            presink = load_mask(config.mask)
            presink.check_matches(blocking)
        else:
            sparsity = SparsityConfig(target_sparsity=config.sparsity, top_n=config.top_n)
            presink, _ = predict_block_mask(qp, kp, blocking, sparsity)

    with stage("first-frame-sink"):
        if config.sink:
            postsink = apply_first_frame_sink(presink, SinkSpec(config.layout, order), blocking)
        else:
            postsink = presink
    return presink, postsink


def run_head(
    config: PipelineConfig,
    q: np.ndarray,
    k: np.ndarray,
    v: np.ndarray,
    head: int = 0,
    workers: int = 1,
) -> RunReport:
    """Sparse and full attention for one N x d problem of a resolved config."""
    layout = config.layout
    blocking = BlockingSpec(config.block_q, config.block_k, layout.n, layout.n)

    with stage("permutation"):
        order = token_order(config)
        if order is None:
            qp, kp, vp = q, k, v
        else:
            qp, kp, vp = (apply_permutation(m, order) for m in (q, k, v))

    presink, postsink = block_masks(config, qp, kp, order, blocking)

    with stage("flash-attention"):
        if config.warmup:
            warm = BlockingSpec(config.block_q, config.block_k, min(config.block_q, layout.n), layout.n)
            flash_attention_report(q[: warm.n_q], k, v, warm)
        start = time.perf_counter()
        sparse = flash_attention_report(qp, kp, vp, blocking, postsink, workers)
        wall_time_sparse = time.perf_counter() - start
        start = time.perf_counter()
        full = flash_attention_report(q, k, v, blocking, None, workers)
        wall_time_full = time.perf_counter() - start
        sparse_output = sparse.output if order is None else apply_permutation(sparse.output, invert(order))
        log.debug(
            "head %d: %d block pairs computed, %d skipped",
            head, sparse.blocks_computed, sparse.blocks_skipped,
        )

    with stage("metrics"):
        report = build_report(
            full_output=full.output,
            sparse_output=sparse_output,
            presink_mask=presink,
            postsink_mask=postsink,
            blocking=blocking,
            d=q.shape[1],
            d_v=v.shape[1],
            target_sparsity=_target_sparsity(config, blocking.t_k),
            wall_time_full=wall_time_full,
            wall_time_sparse=wall_time_sparse,
            top_n=int(presink.row_counts().max()),
        )
        report.captured_mass = captured_attention_mass(qp, kp, postsink, blocking)
        report.block_similarity_default = intra_block_similarity(q, config.block_q)
        report.block_similarity_permuted = intra_block_similarity(qp, config.block_q)
        if config.random_baseline:
            baseline_mask = random_block_mask(postsink.row_counts(), blocking.t_k, seed=config.seed + head)
            baseline = flash_attention_report(qp, kp, vp, blocking, baseline_mask, workers).output
            if order is not None:
                baseline = apply_permutation(baseline, invert(order))
            report.baseline_cosine_sim = cosine_similarity(full.output, baseline)
        if config.attention_fraction is not None:
            report.end_to_end_speedup = end_to_end_speedup(
                report.attention_speedup_model, config.attention_fraction
            )
    return report


def _mean(values) -> float | None:
    values = [x for x in values if x is not None]
    return float(np.mean(values)) if values else None


def aggregate_reports(reports: list[RunReport], config: PipelineConfig) -> RunReport:
    """Combine per-head reports; MACs are summed, qualities averaged."""
    if len(reports) == 1:
        return reports[0]
    mac_full = sum(r.mac_full for r in reports)
    mac_sparse = sum(r.mac_sparse for r in reports)
    report = RunReport(
        cosine_sim=_mean(r.cosine_sim for r in reports),
        max_abs_err=max(r.max_abs_err for r in reports),
        target_sparsity=reports[0].target_sparsity,
        effective_sparsity_presink=_mean(r.effective_sparsity_presink for r in reports),
        effective_sparsity_postsink=_mean(r.effective_sparsity_postsink for r in reports),
        mac_full=mac_full,
        mac_sparse=mac_sparse,
        attention_speedup_model=attention_speedup(mac_full, mac_sparse),
        wall_time_sparse=sum(r.wall_time_sparse for r in reports),
        wall_time_full=sum(r.wall_time_full for r in reports),
        top_n=reports[0].top_n,
        heads=len(reports),
        captured_mass=_mean(r.captured_mass for r in reports),
        baseline_cosine_sim=_mean(r.baseline_cosine_sim for r in reports),
        block_similarity_default=_mean(r.block_similarity_default for r in reports),
        block_similarity_permuted=_mean(r.block_similarity_permuted for r in reports),
        cosine_histogram=np.sum([r.cosine_histogram for r in reports], axis=0).tolist(),
        per_head=[r.to_dict() for r in reports],
    )
    if config.attention_fraction is not None:
        report.end_to_end_speedup = end_to_end_speedup(report.attention_speedup_model, config.attention_fraction)
    return report


def head_inputs(config: PipelineConfig) -> tuple[PipelineConfig, list[Callable[[], tuple]]]:
    """Per-head Q/K/V loaders for a resolved config.

    File inputs fix head_dim to the stored width; synthetic heads use
    seeds seed, seed+1, ...
    """
    layout = config.layout
    if config.qkv is not None:
        with stage("tensor-core"):
            q, k, v = (as_matrix(m, config.precision) for m in load_qkv(config.qkv))
        if q.shape[0] != layout.n:
            raise ConfigError(f"files hold {q.shape[0]} tokens, layout has {layout.n}", field="qkv")
        return replace(config, head_dim=q.shape[1]), [lambda: (q, k, v)]

    def synthetic(head: int):
        spec = SyntheticSpec(config.seed + head, layout, config.head_dim, config.smoothness, config.precision)
        with stage("tensor-core"):
            return generate_synthetic_qkv(spec)

    return config, [lambda h=h: synthetic(h) for h in range(config.heads)]


def predict_config_mask(config: PipelineConfig, path: str | Path) -> tuple[BlockMask, Path]:
    """Predict the post-sink mask of head 0 in permuted space and save it as RFM1."""
    config, _ = resolve_config(config)
    config, heads = head_inputs(config)
    q, k, _ = heads[0]()
    layout = config.layout
    blocking = BlockingSpec(config.block_q, config.block_k, layout.n, layout.n)
    with stage("permutation"):
        order = token_order(config)
        if order is not None:
            q, k = apply_permutation(q, order), apply_permutation(k, order)
    _, postsink = block_masks(config, q, k, order, blocking)
    with stage("mask-predictor"):
        return postsink, save_mask(postsink, path)


def run_pipeline(config: PipelineConfig, workers: int | None = None) -> RunReport:
    """Run the sparse pipeline and the full baseline for every head.

    Args:
        config: Pipeline configuration; resolved and validated first.
        workers: Parallelism cap; RF_THREADS when omitted.

    Returns:
        The (aggregate) RunReport with the resolved config echoed in it.
    """
    config, warnings = resolve_config(config)
    workers = resolve_threads() if workers is None else workers
    config, heads = head_inputs(config)
    layout = config.layout

    def run(head: int, inner_workers: int) -> RunReport:
        log.info("head %d/%d: N=%d, d=%d", head + 1, len(heads), layout.n, config.head_dim)
        return run_head(config, *heads[head](), head=head, workers=inner_workers)

    if workers > 1 and len(heads) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            reports = list(pool.map(lambda h: run(h, 1), range(len(heads))))
    else:
        reports = [run(h, workers) for h in range(len(heads))]

    report = aggregate_reports(reports, config)
    report.heads = len(reports)
    report.warnings = warnings
    report.config = config.echo()
    return report


# ---------------------------------------------------------------------------
# Sweeps
# ---------------------------------------------------------------------------
def table_overrides(
    sparsities=DEFAULT_SWEEP_SPARSITIES,
    permutation_modes=DEFAULT_SWEEP_PERMUTATION,
) -> list[dict]:
    """Sparsity x permutation grid, one override dict per row."""
    return [
        {"sparsity": rho, "permutation": perm}
        for rho, perm in itertools.product(sparsities, permutation_modes)
    ]


def run_sweep(base: PipelineConfig, overrides: list[dict], workers: int | None = None) -> pd.DataFrame:
    """One row per override; a failing row records its error and the sweep continues.

    Rows come back in override order regardless of completion order.
    """
    if not overrides:
        raise ConfigError("a sweep needs at least one override", field="sweep")
    workers = resolve_threads() if workers is None else workers
    keys = list(dict.fromkeys(key for override in overrides for key in override))

    def one(index: int) -> dict:
        override = overrides[index]
        row = {"run": index, **{key: override.get(key) for key in keys}}
        if "sparsity" in override and "top_n" not in override:
            override = {**override, "top_n": None}
        try:
            report = run_pipeline(replace(base, **override), workers=1 if workers > 1 else workers)
        except RainFusionError as exc:
            log.warning("sweep row %d failed: %s", index, exc)
            row["error"] = f"{exc.module or 'rainfusion'}: {exc}"
        except TypeError as exc:
            row["error"] = f"bench-cli: invalid override {override!r} ({exc})"
        else:
            row.update(report.to_row())
            row["error"] = ""
        return row

    if workers > 1 and len(overrides) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(one, range(len(overrides))))
    else:
        rows = [one(i) for i in range(len(overrides))]

    columns = ["run", *keys, *[c for c in CSV_COLUMNS if c not in keys], "error"]
    return pd.DataFrame(rows).reindex(columns=columns)
