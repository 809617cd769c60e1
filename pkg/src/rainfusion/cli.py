"""Typer CLI for the RainFusion sparse attention pipeline."""

import json
import logging
from pathlib import Path
from typing import Optional

import typer
from rich.console import Console
from rich.logging import RichHandler
from rich.table import Table

from rainfusion.errors import ConfigError, RainFusionError
from rainfusion.models import (
    DEFAULT_BLOCK_K,
    DEFAULT_BLOCK_Q,
    DEFAULT_HEAD_DIM,
    DEFAULT_REPORT,
    DEFAULT_SMOOTHNESS,
    DEFAULT_SPARSITY,
    DEFAULT_SWEEP_CSV,
    MASK_MAGIC,
    TENSOR_MAGIC,
    Precision,
)

app = typer.Typer(
    name="rainfusion",
    help="Block-sparse attention with representative-token masks, window permutation and first-frame sink.",
)
console = Console()
err_console = Console(stderr=True)


@app.callback()
def main(verbose: bool = typer.Option(False, "--verbose", "-v", help="Debug logging")):
    """Configure logging for every command."""
    logging.basicConfig(
        level=logging.DEBUG if verbose else logging.WARNING,
        format="%(message)s",
        handlers=[RichHandler(console=err_console, show_path=False)],
        force=True,
    )


def _parse_window(window: Optional[str]) -> Optional[tuple[int, int, int]]:
    if window is None:
        return None
    try:
        extents = tuple(int(x) for x in window.split(","))
    except ValueError:
        raise ConfigError(f"expected 'w_f,w_h,w_w', got {window!r}", field="window") from None
    if len(extents) != 3:
        raise ConfigError(f"expected 3 extents, got {len(extents)}", field="window")
    return extents


def _parse_list(raw: str, field: str, convert):
    try:
        return [convert(x.strip()) for x in raw.split(",") if x.strip()]
    except ValueError:
        raise ConfigError(f"cannot parse {raw!r}", field=field) from None


def _on_off(value: str) -> bool:
    if value.lower() in ("on", "true", "1", "yes"):
        return True
    if value.lower() in ("off", "false", "0", "no"):
        return False
    raise ValueError(value)


def _fail(exc: RainFusionError, config: dict | None = None) -> None:
    """Print the error with its module and the config echo, then exit."""
    err_console.print(f"[red]error[/red] [{exc.module or 'rainfusion'}] {exc}")
    if config:
        err_console.print_json(json.dumps(config, default=str))
    raise typer.Exit(exc.exit_code)


def _config(**fields):
    from rainfusion.pipeline import PipelineConfig

    return PipelineConfig(**fields)


# Shared options; flags mirror PipelineConfig fields in kebab-case
FramesOpt = typer.Option(8, "--frames", help="Latent frames F")
HeightOpt = typer.Option(16, "--height", help="Latent height H")
WidthOpt = typer.Option(16, "--width", help="Latent width W")
HeadDimOpt = typer.Option(DEFAULT_HEAD_DIM, "--head-dim", help="Head dimension d")
HeadsOpt = typer.Option(1, "--heads", help="Independent attention heads")
PrecisionOpt = typer.Option(Precision.F32, "--precision", help="Element width")
BlockQOpt = typer.Option(DEFAULT_BLOCK_Q, "--block-q", help="Query block size b_q")
BlockKOpt = typer.Option(DEFAULT_BLOCK_K, "--block-k", help="Key block size b_k")
WindowOpt = typer.Option(None, "--window", help="Window extents 'w_f,w_h,w_w' (default 4,8,8 clipped)")
SparsityOpt = typer.Option(DEFAULT_SPARSITY, "--sparsity", help="Target pre-sink sparsity rho")
TopNOpt = typer.Option(None, "--top-n", help="Explicit key blocks per query block (overrides --sparsity)")
SinkOpt = typer.Option(True, "--sink/--no-sink", help="First-frame sink")
RelocationOpt = typer.Option(True, "--relocation/--no-relocation", help="Move frame-0 tokens to the end")
PermutationOpt = typer.Option(True, "--permutation/--no-permutation", help="3D window permutation")
SeedOpt = typer.Option(0, "--seed", help="Synthetic generator seed")
SmoothnessOpt = typer.Option(DEFAULT_SMOOTHNESS, "--smoothness", help="Synthetic spatial correlation in [0, 1]")
QkvOpt = typer.Option(None, "--qkv", help="Load <prefix>.q.rft, <prefix>.k.rft, <prefix>.v.rft")
WarmupOpt = typer.Option(True, "--warmup/--no-warmup", help="Untimed warm-up before timing")


# ---------------------------------------------------------------------------
# run
# ---------------------------------------------------------------------------
@app.command()
def run(
    frames: int = FramesOpt,
    height: int = HeightOpt,
    width: int = WidthOpt,
    head_dim: int = HeadDimOpt,
    heads: int = HeadsOpt,
    precision: Precision = PrecisionOpt,
    block_q: int = BlockQOpt,
    block_k: int = BlockKOpt,
    window: Optional[str] = WindowOpt,
    sparsity: float = SparsityOpt,
    top_n: Optional[int] = TopNOpt,
    sink: bool = SinkOpt,
    relocation: bool = RelocationOpt,
    permutation: bool = PermutationOpt,
    seed: int = SeedOpt,
    smoothness: float = SmoothnessOpt,
    qkv: Optional[str] = QkvOpt,
    mask: Optional[Path] = typer.Option(None, "--mask", help="RFM1 mask replacing the predictor (permuted space)"),
    random_baseline: bool = typer.Option(False, "--random-baseline", help="Add a random-mask run of equal cardinality"),
    attention_fraction: Optional[float] = typer.Option(
        None, "--attention-fraction", help="Share of model latency spent in attention (end-to-end estimate)"
    ),
    warmup: bool = WarmupOpt,
    report: Path = typer.Option(DEFAULT_REPORT, "--report", help="Report JSON path"),
):
    """Run the sparse pipeline against full attention and write a report."""
    from rainfusion.export import to_json
    from rainfusion.pipeline import run_pipeline

    config = None
    try:
        config = _config(
            frames=frames, height=height, width=width, head_dim=head_dim, heads=heads,
            precision=precision, block_q=block_q, block_k=block_k, window=_parse_window(window),
            sparsity=sparsity, top_n=top_n, sink=sink, relocation=relocation,
            permutation=permutation, seed=seed, smoothness=smoothness, qkv=qkv,
            mask=str(mask) if mask else None, random_baseline=random_baseline,
            attention_fraction=attention_fraction, warmup=warmup,
        )
        result = run_pipeline(config)
        path = to_json(result, report)
    except RainFusionError as exc:
        _fail(exc, config.echo() if config else None)

    for message in result.warnings:
        console.print(f"[yellow]warning:[/yellow] {message}")

    table = Table(title="RainFusion run")
    table.add_column("Metric", style="cyan")
    table.add_column("Value", justify="right", style="green")
    table.add_row("cosine similarity", f"{result.cosine_sim:.6f}")
    table.add_row("max abs error", f"{result.max_abs_err:.3e}")
    table.add_row("target sparsity", f"{result.target_sparsity:.3f}")
    table.add_row("sparsity (pre-sink)", f"{result.effective_sparsity_presink:.3f}")
    table.add_row("sparsity (post-sink)", f"{result.effective_sparsity_postsink:.3f}")
    table.add_row("MACs full / sparse", f"{result.mac_full:,} / {result.mac_sparse:,}")
    table.add_row("attention speedup (model)", f"{result.attention_speedup_model:.2f}x")
    if result.end_to_end_speedup is not None:
        table.add_row("end-to-end speedup (est.)", f"{result.end_to_end_speedup:.2f}x")
    if result.captured_mass is not None:
        table.add_row("captured attention mass", f"{result.captured_mass:.4f}")
    if result.baseline_cosine_sim is not None:
        table.add_row("random-mask cosine", f"{result.baseline_cosine_sim:.6f}")
    table.add_row("wall time sparse / full", f"{result.wall_time_sparse:.3f}s / {result.wall_time_full:.3f}s")
    console.print(table)
    console.print(f"[green]Report:[/green] {path}")


# ---------------------------------------------------------------------------
# sweep
# ---------------------------------------------------------------------------
@app.command()
def sweep(
    sparsities: str = typer.Option("0,0.8,0.9", "--sparsities", help="Comma-separated rho values"),
    permutation_modes: str = typer.Option("off,on", "--permutation-modes", help="Comma-separated on/off"),
    frames: int = FramesOpt,
    height: int = HeightOpt,
    width: int = WidthOpt,
    head_dim: int = HeadDimOpt,
    heads: int = HeadsOpt,
    precision: Precision = PrecisionOpt,
    block_q: int = BlockQOpt,
    block_k: int = BlockKOpt,
    window: Optional[str] = WindowOpt,
    sink: bool = SinkOpt,
    relocation: bool = RelocationOpt,
    seed: int = SeedOpt,
    smoothness: float = SmoothnessOpt,
    qkv: Optional[str] = QkvOpt,
    warmup: bool = WarmupOpt,
    csv: Path = typer.Option(DEFAULT_SWEEP_CSV, "--csv", help="Sweep CSV path"),
    parquet: Optional[Path] = typer.Option(None, "--parquet", help="Also write Parquet"),
):
    """Run a sparsity x permutation grid and write one CSV row per config."""
    from rainfusion.export import to_csv, to_parquet
    from rainfusion.pipeline import run_sweep, table_overrides

    base = None
    try:
        rhos = _parse_list(sparsities, "sparsities", float)
        modes = _parse_list(permutation_modes, "permutation_modes", _on_off)
        overrides = table_overrides(rhos, modes)
        base = _config(
            frames=frames, height=height, width=width, head_dim=head_dim, heads=heads,
            precision=precision, block_q=block_q, block_k=block_k, window=_parse_window(window),
            sink=sink, relocation=relocation, seed=seed, smoothness=smoothness, qkv=qkv, warmup=warmup,
        )
        df = run_sweep(base, overrides)
        csv_path = to_csv(df, csv)
        parquet_path = to_parquet(df, parquet) if parquet else None
    except RainFusionError as exc:
        _fail(exc, base.echo() if base else None)

    table = Table(title="RainFusion sweep")
    table.add_column("#", justify="right", style="dim")
    table.add_column("rho", justify="right")
    table.add_column("perm", justify="center")
    table.add_column("cosine", justify="right", style="green")
    table.add_column("sparsity post-sink", justify="right")
    table.add_column("speedup", justify="right")
    table.add_column("error", style="red")
    for _, row in df.iterrows():
        failed = bool(row["error"])
        table.add_row(
            str(row["run"]),
            f"{row['sparsity']:.2f}",
            "on" if row["permutation"] else "off",
            "-" if failed else f"{row['cosine_sim']:.6f}",
            "-" if failed else f"{row['effective_sparsity_postsink']:.3f}",
            "-" if failed else f"{row['attention_speedup_model']:.2f}x",
            row["error"] or "",
        )
    console.print(table)
    console.print(f"[green]CSV:[/green] {csv_path}")
    if parquet_path:
        console.print(f"[green]Parquet:[/green] {parquet_path}")


# ---------------------------------------------------------------------------
# generate
# ---------------------------------------------------------------------------
@app.command()
def generate(
    prefix: str = typer.Argument(..., help="Output prefix for the .q/.k/.v.rft triplet"),
    frames: int = FramesOpt,
    height: int = HeightOpt,
    width: int = WidthOpt,
    head_dim: int = HeadDimOpt,
    precision: Precision = PrecisionOpt,
    seed: int = SeedOpt,
    smoothness: float = SmoothnessOpt,
):
    """Write a synthetic Q/K/V triplet in RFT1 format."""
    from rainfusion.models import VideoLayout
    from rainfusion.tensor import SyntheticSpec, generate_synthetic_qkv, save_qkv

    try:
        spec = SyntheticSpec(seed, VideoLayout(frames, height, width), head_dim, smoothness, precision)
        paths = save_qkv(prefix, *generate_synthetic_qkv(spec))
    except RainFusionError as exc:
        _fail(exc)
    for path in paths:
        console.print(f"[green]Saved:[/green] {path}")


# ---------------------------------------------------------------------------
# predict
# ---------------------------------------------------------------------------
@app.command()
def predict(
    output: Path = typer.Argument(..., help="RFM1 output path"),
    frames: int = FramesOpt,
    height: int = HeightOpt,
    width: int = WidthOpt,
    head_dim: int = HeadDimOpt,
    precision: Precision = PrecisionOpt,
    block_q: int = BlockQOpt,
    block_k: int = BlockKOpt,
    window: Optional[str] = WindowOpt,
    sparsity: float = SparsityOpt,
    top_n: Optional[int] = TopNOpt,
    sink: bool = SinkOpt,
    relocation: bool = RelocationOpt,
    permutation: bool = PermutationOpt,
    seed: int = SeedOpt,
    smoothness: float = SmoothnessOpt,
    qkv: Optional[str] = QkvOpt,
):
    """Predict the (post-sink) block mask in permuted space and save it as RFM1."""
    from rainfusion.pipeline import predict_config_mask

    config = None
    try:
        config = _config(
            frames=frames, height=height, width=width, head_dim=head_dim, precision=precision,
            block_q=block_q, block_k=block_k, window=_parse_window(window), sparsity=sparsity,
            top_n=top_n, sink=sink, relocation=relocation, permutation=permutation, seed=seed,
            smoothness=smoothness, qkv=qkv,
        )
        mask, path = predict_config_mask(config, output)
    except RainFusionError as exc:
        _fail(exc, config.echo() if config else None)
    console.print(f"  Mask: {mask.t_q} x {mask.t_k}, {mask.ones:,} blocks computed")
    console.print(f"[green]Saved:[/green] {path}")


# ---------------------------------------------------------------------------
# inspect
# ---------------------------------------------------------------------------
@app.command()
def inspect(path: Path = typer.Argument(..., help="RFT1 tensor or RFM1 mask file")):
    """Show header and summary statistics of a tensor or mask file."""
    from rainfusion.predictor import load_mask
    from rainfusion.tensor import load_tensor

    try:
        with path.open("rb") as fh:
            magic = fh.read(4)
    except OSError as exc:
        console.print(f"[red]{path}: {exc.strerror or exc}[/red]")
        raise typer.Exit(4)

    try:
        if magic == TENSOR_MAGIC:
            m = load_tensor(path)
            console.print(f"\n[bold]{path}[/bold]: RFT1 tensor")
            console.print(f"  Shape:     {m.shape[0]} x {m.shape[1]}")
            console.print(f"  Precision: {Precision.from_dtype(m.dtype).value}")
            console.print(f"  Mean:      {m.mean():.6f}")
            console.print(f"  Std:       {m.std():.6f}\n")
        elif magic == MASK_MAGIC:
            mask = load_mask(path)
            rows = mask.row_counts()
            console.print(f"\n[bold]{path}[/bold]: RFM1 mask")
            console.print(f"  Shape:        {mask.t_q} x {mask.t_k}")
            console.print(f"  Ones:         {mask.ones:,} ({100 * mask.ones / mask.bits.size:.1f}%)")
            console.print(f"  Per row:      min {rows.min()}, max {rows.max()}")
            console.print(f"  Empty rows:   {len(mask.empty_rows())}\n")
        else:
            console.print(f"[red]Unknown magic {magic!r} in {path}[/red]")
            raise typer.Exit(4)
    except RainFusionError as exc:
        _fail(exc)


if __name__ == "__main__":
    app()
