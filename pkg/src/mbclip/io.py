"""File output: atomic writes, run CSVs, summary records."""

from __future__ import annotations

import csv
import io
import json
import os
import tempfile
from pathlib import Path
from typing import Iterable, Sequence

from .optimizer import RunSummary

RUN_COLUMNS = ("t", "loss", "grad_norm", "clip_bound", "dragger_count", "zero_rho_event")
SUMMARY_COLUMNS = (
    "run_id", "seed", "min_grad_norm", "final_loss", "T", "b", "B",
    "epsilon", "sigma", "mode", "lr",
)


def fmt(x) -> str:
    """17 significant digits round-trips any double exactly."""
    if x is None:
        return ""
    if isinstance(x, bool):
        return "1" if x else "0"
    if isinstance(x, float):
        return format(x, ".17g")
    return str(x)


def atomic_write_text(path, text: str) -> Path:
    """Write via a temp file in the same directory, then rename over ``path``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def csv_text(columns: Sequence[str], rows: Iterable[Sequence]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(columns)
    for row in rows:
        writer.writerow([fmt(v) for v in row])
    return buf.getvalue()


def run_csv_text(summary: RunSummary) -> str:
    return csv_text(
        RUN_COLUMNS,
        (
            (r.t, r.loss, r.true_grad_norm, r.clip_bound_rho, r.dragger_count, r.zero_rho_event)
            for r in summary.records
        ),
    )


def write_run_csv(path, summary: RunSummary) -> Path:
    return atomic_write_text(path, run_csv_text(summary))


def write_json(path, payload) -> Path:
    return atomic_write_text(path, json.dumps(payload, indent=2, sort_keys=True) + "\n")
