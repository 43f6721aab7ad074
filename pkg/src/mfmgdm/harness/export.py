"""Deterministic CSV / JSON output."""

from __future__ import annotations

import csv
import dataclasses
import json
import math
import os
from pathlib import Path

import numpy as np

from ..errors import ConfigurationError
from .experiments import MetricsRow

__all__ = ["write_rows_csv", "write_matrix_csv", "to_jsonable", "write_json", "read_json", "export_trace", "export_finance"]

SCHEMA_VERSION = 1


def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if v is None:
        return ""
    return str(v)


def _open(path):
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        return open(path, "w", newline="")
    except OSError as exc:
        raise ConfigurationError(f"cannot write {path}: {exc}") from exc


def write_rows_csv(path, rows, columns=None):
    """One line per row; ``columns`` fixes the order (dataclass field order by default)."""
    rows = list(rows)
    if columns is None:
        if rows and dataclasses.is_dataclass(rows[0]):
            columns = [f.name for f in dataclasses.fields(rows[0])]
        elif rows:
            columns = list(rows[0])
        else:
            columns = MetricsRow.columns()
    with _open(path) as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for row in rows:
            rec = dataclasses.asdict(row) if dataclasses.is_dataclass(row) else row
            w.writerow([_fmt(rec[c]) for c in columns])
    return Path(path)


def write_matrix_csv(path, matrix, columns, index_name="path"):
    matrix = np.atleast_2d(np.asarray(matrix))
    with _open(path) as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([index_name] + list(columns))
        for i, row in enumerate(matrix):
            w.writerow([i] + [_fmt(v) for v in row])
    return Path(path)


def to_jsonable(obj):
    """Plain JSON types; non-finite floats become ``null``."""
    if dataclasses.is_dataclass(obj) and not isinstance(obj, type):
        obj = dataclasses.asdict(obj)
    if isinstance(obj, dict):
        return {str(k): to_jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [to_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return to_jsonable(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer, int)):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        f = float(obj)
        return f if math.isfinite(f) else None
    if obj is None or isinstance(obj, str):
        return obj
    if isinstance(obj, os.PathLike):
        return os.fspath(obj)
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def write_json(path, summary):
    with _open(path) as fh:
        json.dump(to_jsonable(summary), fh, indent=2, sort_keys=True, allow_nan=False)
        fh.write("\n")
    return Path(path)


def read_json(path):
    with open(path) as fh:
        return json.load(fh)


def export_trace(report, out, kind="trace", fmt=("csv", "json")):
    """Metrics CSV per run plus ``summary.json`` with the config echo."""
    out = Path(out)
    written = []
    if "csv" in fmt:
        for key in sorted(report.rows):
            written.append(write_rows_csv(out / f"metrics_{key}.csv", report.rows[key], MetricsRow.columns()))
        written.append(write_rows_csv(out / "summary.csv", report.summary_table()) if report.summaries else None)
    if "json" in fmt:
        summary = {
            "schema_version": SCHEMA_VERSION,
            "kind": kind,
            "seed": report.config.seed,
            "config": report.config.to_dict(),
            "alpha": report.alpha,
            "target_std": report.target_std,
            "runs": {k: vars(s) for k, s in sorted(report.summaries.items())},
        }
        written.append(write_json(out / "summary.json", summary))
    return [p for p in written if p is not None]


def export_finance(report, out, fmt=("csv", "json")):
    out = Path(out)
    written = []
    lags = [f"lag{l}" for l in range(1, report.statistics["train"]["acf"].shape[1] + 1)]
    bins = [f"bin{i}" for i in range(len(report.edges) - 1)]
    if "csv" in fmt:
        for name in sorted(report.statistics):
            stats = report.statistics[name]
            written.append(write_matrix_csv(out / f"stats_{name}_acf.csv", stats["acf"], lags))
            written.append(write_matrix_csv(out / f"stats_{name}_sq_acf.csv", stats["sq_acf"], lags))
            written.append(write_matrix_csv(out / f"stats_{name}_hist.csv", stats["hist"], bins))
        written.append(write_matrix_csv(out / "hist_edges.csv", report.edges[None, :], [f"edge{i}" for i in range(len(report.edges))], "row"))
        for mode in sorted(report.generated):
            written.append(write_rows_csv(out / f"metrics_{mode}.csv", report.metrics[mode]))
            gen = report.generated[mode]
            written.append(write_matrix_csv(out / f"generated_{mode}.csv", gen, [f"t{i}" for i in range(gen.shape[1])]))
    if "json" in fmt:
        summary = {
            "schema_version": SCHEMA_VERSION,
            "kind": "finance",
            "seed": report.config.seed,
            "config": report.config.to_dict(),
            "dataset": {
                "name": report.dataset.name,
                "transform": report.dataset.transform,
                "n_observations": len(report.dataset.values),
                "slice_length": report.dataset.slice_length,
                "first_date": str(report.dataset.dates[0]),
                "last_date": str(report.dataset.dates[-1]),
            },
            "scale": report.scale,
            "alpha": report.alpha,
            "epsilon": report.epsilon,
            "runs": report.runs,
            "sq_acf_iqr": {name: report.sq_acf_iqr(name) for name in sorted(report.statistics)},
        }
        written.append(write_json(out / "summary.json", summary))
    return written
