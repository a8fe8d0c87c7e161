"""Regression table preparation, rank-correlation summaries and file export."""

from __future__ import annotations

import csv
import io
import json
import math
import os
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import stats

from .errors import DegenerateColumn, InsufficientData, IoFailure, MalformedRecord
from .outcomes import METRIC_COLUMNS, SnapshotMetrics

EXPORT_SCHEMA_VERSION = 1

COLUMNS = METRIC_COLUMNS

OUTCOMES = ("external_productivity", "acceptance_rate", "bug_reports")
PREDICTORS = ("fork_entropy", "fork_entropy_pr_variant")
CONTROLS = (
    "num_forks",
    "num_files",
    "project_age_days",
    "num_stars",
    "ratio_old_contributors",
    "ratio_prs_with_tests",
    "ratio_prs_touch_hot_files",
)
LOG_COLUMNS = ("num_forks", "num_files", "num_stars", "ratio_old_contributors")
STANDARDIZED = PREDICTORS + CONTROLS


@dataclass
class RegressionTable:
    rows: list
    transform_log: dict = field(default_factory=dict)

    @property
    def prepared(self):
        return bool(self.transform_log)


def _as_dict(row):
    if isinstance(row, SnapshotMetrics):
        return row.as_dict()
    return {c: row.get(c) for c in COLUMNS}


def _sort_key(row):
    return (str(row["project_id"]), str(row["month"]))


def raw_table(rows) -> RegressionTable:
    return RegressionTable(sorted((_as_dict(r) for r in rows), key=_sort_key))


def _trim_upper(rows, column, fraction):
    """Blank the largest ``floor(fraction * n)`` defined values of ``column``."""
    defined = [i for i, r in enumerate(rows) if r[column] is not None]
    k = int(math.floor(fraction * len(defined) + 1e-9))
    if k == 0:
        return {"defined": len(defined), "removed": 0, "threshold": None}
    order = sorted(defined, key=lambda i: (-rows[i][column], _sort_key(rows[i])))
    removed = order[:k]
    threshold = rows[order[k]][column] if k < len(order) else None
    for i in removed:
        rows[i][column] = None
    return {"defined": len(defined), "removed": k, "threshold": threshold}


def prepare_table(rows, outlier_fraction: float = 0.01) -> RegressionTable:
    """Regression-ready table.

    1. drop months whose fork population is empty;
    2. ``log1p`` the skewed controls in :data:`LOG_COLUMNS`;
    3. blank the top ``outlier_fraction`` of each outcome (upper tail only;
       the row stays, only that outcome value is removed);
    4. z-score fork entropy and every control with the sample standard
       deviation, pooled over all projects.

    Outcomes stay on their raw scale. Raises :class:`DegenerateColumn` for
    a constant column and :class:`InsufficientData` for fewer than 2 rows.
    """
    if not 0 <= outlier_fraction < 1:
        raise ValueError("outlier_fraction must lie in [0, 1)")
    table = [_as_dict(r) for r in rows]
    table = [r for r in table if r["num_forks"] and r["fork_entropy"] is not None]
    table.sort(key=_sort_key)
    if len(table) < 2:
        raise InsufficientData(f"need at least 2 non-empty rows, got {len(table)}")
    log = {"schema_version": EXPORT_SCHEMA_VERSION, "dropped_empty_population": len(rows) - len(table)}
    log["outlier_fraction"] = outlier_fraction
    log["trim"] = {c: _trim_upper(table, c, outlier_fraction) for c in OUTCOMES}
    log["columns"] = {}
    for col in STANDARDIZED:
        values = [r[col] for r in table]
        idx = [i for i, v in enumerate(values) if v is not None]
        x = np.asarray([float(values[i]) for i in idx], dtype=np.float64)
        logged = col in LOG_COLUMNS
        if logged:
            x = np.log1p(x)
        if len(x) < 2:
            raise InsufficientData(f"column {col!r} has fewer than 2 defined values")
        mean = float(np.mean(x))
        sd = float(np.std(x, ddof=1))
        if not sd > 0:
            raise DegenerateColumn(col)
        z = (x - mean) / sd
        for i, v in zip(idx, z.tolist()):
            table[i][col] = v
        log["columns"][col] = {"log1p": logged, "mean": mean, "std": sd, "n": len(idx)}
    return RegressionTable(table, log)


def invert_standardization(table: RegressionTable) -> list:
    """Recover the pre-standardization values using ``transform_log``."""
    out = []
    for row in table.rows:
        row = dict(row)
        for col, p in table.transform_log["columns"].items():
            if row[col] is None:
                continue
            x = row[col] * p["std"] + p["mean"]
            row[col] = math.expm1(x) if p["log1p"] else x
        out.append(row)
    return out


def spearman(x, y) -> float:
    """Spearman rank correlation with average ranks for ties."""
    pairs = [(a, b) for a, b in zip(x, y) if a is not None and b is not None]
    if len(pairs) < 3:
        raise InsufficientData(f"need at least 3 paired values, got {len(pairs)}")
    a, b = zip(*pairs)
    if len(set(a)) < 2 or len(set(b)) < 2:
        raise InsufficientData("rank correlation undefined for a constant column")
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        rho = stats.spearmanr(a, b).statistic
    return float(rho)


@dataclass(frozen=True)
class Correlation:
    scope: str
    predictor: str
    outcome: str
    n: int
    rho: float | None

    def to_json(self):
        return {"scope": self.scope, "predictor": self.predictor, "outcome": self.outcome, "n": self.n, "rho": self.rho}


CORRELATION_PAIRS = tuple(("fork_entropy", o) for o in OUTCOMES) + (("fork_entropy_pr_variant", "acceptance_rate"),)


def correlation_summary(table: RegressionTable) -> list:
    """Spearman rho of fork entropy against each outcome, pooled and per project.

    Pairs with fewer than 3 usable rows or a constant side get ``rho=None``.
    """
    groups = [("pooled", table.rows)]
    projects = sorted({r["project_id"] for r in table.rows})
    groups += [(p, [r for r in table.rows if r["project_id"] == p]) for p in projects]
    out = []
    for scope, rows in groups:
        for pred, outcome in CORRELATION_PAIRS:
            xs = [r[pred] for r in rows]
            ys = [r[outcome] for r in rows]
            n = sum(1 for a, b in zip(xs, ys) if a is not None and b is not None)
            try:
                rho = spearman(xs, ys)
            except InsufficientData:
                rho = None
            out.append(Correlation(scope, pred, outcome, n, rho))
    return out


def format_cell(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        if math.isnan(value):
            return ""
        text = f"{value:.10f}"
        return "0.0000000000" if text == "-0.0000000000" else text
    return str(value)


def to_csv(table: RegressionTable) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(COLUMNS)
    for row in sorted(table.rows, key=_sort_key):
        writer.writerow([format_cell(row[c]) for c in COLUMNS])
    return buf.getvalue()


def manifest(table: RegressionTable) -> dict:
    return {
        "kind": "manifest",
        "schema_version": EXPORT_SCHEMA_VERSION,
        "columns": list(COLUMNS),
        "prepared": table.prepared,
        "transform_log": table.transform_log,
    }


def to_ndjson(table: RegressionTable) -> str:
    lines = [json.dumps(manifest(table), sort_keys=True)]
    for row in sorted(table.rows, key=_sort_key):
        lines.append(json.dumps({c: row[c] for c in COLUMNS}, sort_keys=True))
    return "".join(line + "\n" for line in lines)


def read_ndjson(path) -> RegressionTable:
    rows = []
    log = {}
    try:
        with open(path, encoding="utf-8") as fh:
            lines = fh.read().splitlines()
    except OSError as exc:
        raise IoFailure(f"cannot read metrics {path}: {exc.strerror}", path=str(path)) from None
    for lineno, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise MalformedRecord(str(path), lineno, f"invalid JSON: {exc.msg}") from None
        if not isinstance(obj, dict):
            raise MalformedRecord(str(path), lineno, "expected a JSON object")
        if obj.get("kind") == "manifest":
            log = obj.get("transform_log") or {}
            continue
        rows.append({c: obj.get(c) for c in COLUMNS})
    return RegressionTable(sorted(rows, key=_sort_key), log)


def _write(path: Path, text: str):
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "w", encoding="utf-8", newline="") as fh:
        fh.write(text)
    os.replace(tmp, path)


def export(table: RegressionTable, out_dir, stem: str = "metrics", formats=("csv", "ndjson")) -> list:
    """Write ``<stem>.csv``, ``<stem>.ndjson`` and ``<stem>.manifest.json`` into ``out_dir``.

    Output is sorted by ``(project_id, month)`` and byte-identical for equal tables.
    """
    out = Path(out_dir)
    written = []
    try:
        out.mkdir(parents=True, exist_ok=True)
        if "csv" in formats:
            _write(out / f"{stem}.csv", to_csv(table))
            written.append(out / f"{stem}.csv")
        if "ndjson" in formats:
            _write(out / f"{stem}.ndjson", to_ndjson(table))
            written.append(out / f"{stem}.ndjson")
        _write(out / f"{stem}.manifest.json", json.dumps(manifest(table), sort_keys=True, indent=2) + "\n")
        written.append(out / f"{stem}.manifest.json")
    except OSError as exc:
        raise IoFailure(str(exc), path=str(out)) from exc
    return written


def correlations_csv(correlations) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["scope", "predictor", "outcome", "n", "rho"])
    for c in correlations:
        writer.writerow([c.scope, c.predictor, c.outcome, c.n, format_cell(c.rho)])
    return buf.getvalue()
