"""CSV and JSON writers for round traces, evaluations, manifests and summaries.

Floats are written with ``repr`` (shortest round-trip form), rows in a fixed
order, LF line endings, so identical runs give identical bytes.
"""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .engine import RoundRecord
from .errors import DataError, SchemaError
from .evaluation import EvalReport

ROUND_COLUMNS = ("t", "rho", "client_id", "n", "base_loss", "sharpness", "perturbed_loss", "w_raw", "w_smooth")
EVAL_COLUMNS = (
    "t",
    "acc_clean",
    "auc_clean",
    "acc_corr",
    "auc_corr",
    "acc_avg",
    "auc_avg",
    "client_std_acc",
    "client_std_auc",
)
METRICS = EVAL_COLUMNS[1:]


def fmt(value) -> str:
    if isinstance(value, (int, np.integer)) and not isinstance(value, bool):
        return str(int(value))
    return repr(float(value))


def _write_rows(path: str | Path, header, rows) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([fmt(v) for v in row])
    return path


def read_table(path: str | Path, required=()) -> list[dict[str, str]]:
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        for col in required:
            if col not in header:
                raise SchemaError(f"{path}: missing column {col!r}")
        return list(reader)


def write_rounds(records: list[RoundRecord], path: str | Path) -> Path:
    if not records:
        raise DataError("no round records to write")
    rows = []
    for rec in sorted(records, key=lambda r: r.t):
        per_client = sorted(zip(rec.client_ids, rec.sizes, rec.assessments, rec.w_raw, rec.w_smooth))
        for cid, n, state, wr, ws in per_client:
            rows.append(
                (rec.t, rec.rho, cid, n, state.base_loss, state.sharpness, state.perturbed_loss, wr, ws)
            )
    return _write_rows(path, ROUND_COLUMNS, rows)


def read_rounds(path: str | Path) -> list[dict]:
    """Parse a rounds file back into typed rows (one dict per round/client)."""
    out = []
    for row in read_table(path, ROUND_COLUMNS):
        out.append(
            {
                k: int(row[k]) if k in ("t", "client_id", "n") else float(row[k])
                for k in ROUND_COLUMNS
            }
        )
    return out


def eval_row(t: int, e: EvalReport) -> tuple:
    return (
        t,
        e.acc_clean,
        e.auc_clean,
        e.acc_corrupted,
        e.auc_corrupted,
        e.acc_avg,
        e.auc_avg,
        e.client_std_acc,
        e.client_std_auc,
    )


def write_eval(reports: dict[int, EvalReport], path: str | Path) -> Path:
    if not reports:
        raise DataError("no evaluation reports to write")
    return _write_rows(path, EVAL_COLUMNS, [eval_row(t, reports[t]) for t in sorted(reports)])


def read_eval(path: str | Path) -> list[dict]:
    return [
        {k: int(row[k]) if k == "t" else float(row[k]) for k in EVAL_COLUMNS}
        for row in read_table(path, EVAL_COLUMNS)
    ]


def summarize(eval_rows_per_run: list[list[dict]], window: int = 5) -> dict[str, float]:
    """Mean and population std of each metric over the last ``window`` evaluations, pooled across runs."""
    if window < 1:
        raise DataError(f"window must be >= 1, got {window}")
    out: dict[str, float] = {}
    for m in METRICS:
        values = [row[m] for rows in eval_rows_per_run for row in rows[-window:]]
        if not values:
            raise DataError("no evaluation rows to summarize")
        out[f"{m}_mean"] = float(np.mean(values))
        out[f"{m}_std"] = float(np.std(values))
    return out


SUMMARY_COLUMNS = ("strategy", "runs") + tuple(f"{m}_{s}" for m in METRICS for s in ("mean", "std"))


def write_summary(rows: list[tuple[str, int, dict[str, float]]], path: str | Path) -> Path:
    body = [(name, runs) + tuple(stats[c] for c in SUMMARY_COLUMNS[2:]) for name, runs, stats in rows]
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(SUMMARY_COLUMNS)
        for row in body:
            writer.writerow([row[0]] + [fmt(v) for v in row[1:]])
    return path


@dataclass
class RunManifest:
    config: dict
    build: str
    seeds: dict
    started: str
    finished: str
    files: list[str] = field(default_factory=list)
    layout: list = field(default_factory=list)
    auc_averaging: str = "macro"


def write_manifest(manifest: RunManifest, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(asdict(manifest), indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path


def read_manifest(path: str | Path) -> RunManifest:
    return RunManifest(**json.loads(Path(path).read_text(encoding="utf-8")))
