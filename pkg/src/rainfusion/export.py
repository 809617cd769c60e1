"""Export run reports and sweep tables to JSON, CSV, and Parquet."""

from pathlib import Path

import pandas as pd

from rainfusion.errors import TensorIOError
from rainfusion.metrics import RunReport
from rainfusion.models import DATA_REPORTS


def _prepare(filepath: str | Path | None, default_name: str) -> Path:
    if filepath is None:
        filepath = DATA_REPORTS / default_name
    filepath = Path(filepath)
    try:
        filepath.parent.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise TensorIOError(f"cannot create output directory ({exc.strerror or exc})", filepath, module="bench-cli") from exc
    return filepath


def to_json(
    report: RunReport,
    filepath: str | Path | None = None,
    timing: bool = True,
) -> Path:
    """Write a RunReport as indented JSON with stable field order.

    Args:
        report: Report from run_pipeline.
        filepath: Output path. Defaults to data/reports/report.json
        timing: Include the wall-time fields.

    Returns:
        Path to the JSON file.
    """
    filepath = _prepare(filepath, "report.json")
    try:
        filepath.write_text(report.to_json(timing=timing) + "\n", encoding="utf-8")
    except OSError as exc:
        raise TensorIOError(f"cannot write report ({exc.strerror or exc})", filepath, module="bench-cli") from exc
    return filepath


def to_csv(
    df: pd.DataFrame,
    filepath: str | Path | None = None,
) -> Path:
    """Write a sweep table as CSV, one row per configuration.

    Returns:
        Path to the CSV file.
    """
    filepath = _prepare(filepath, "sweep.csv")
    try:
        df.to_csv(filepath, index=False)
    except OSError as exc:
        raise TensorIOError(f"cannot write CSV ({exc.strerror or exc})", filepath, module="bench-cli") from exc
    return filepath


def to_parquet(
    df: pd.DataFrame,
    filepath: str | Path | None = None,
) -> Path:
    """Write a sweep table as Parquet.

    Returns:
        Path to the Parquet file.
    """
    filepath = _prepare(filepath, "sweep.parquet")
    try:
        df.to_parquet(filepath, engine="pyarrow", index=False)
    except OSError as exc:
        raise TensorIOError(f"cannot write Parquet ({exc.strerror or exc})", filepath, module="bench-cli") from exc
    return filepath
