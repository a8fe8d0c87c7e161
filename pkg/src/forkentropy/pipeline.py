"""Dataset directory in, metrics table, lint report, snapshot cache and figures out."""

from __future__ import annotations

import json
import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

from .config import RunConfig
from .dataset import EventDataset, load_dataset, lint_dataset
from .errors import IoFailure
from .export import export, raw_table
from .outcomes import SourceHistory, _outcome_index, count_external_prs, snapshot_metrics
from .population import build_snapshots, write_snapshot_cache

logger = logging.getLogger(__name__)


@dataclass
class ProjectResult:
    dataset: EventDataset
    snapshots: list
    rows: list
    findings: list


def project_slug(full_name: str) -> str:
    return full_name.replace("/", "__")


def compute_project(dataset: EventDataset, config: RunConfig | None = None) -> ProjectResult:
    """Metrics for every month of one project; snapshots run on ``config.jobs`` workers."""
    config = config or RunConfig()
    mc = config.metrics_config()
    snapshots = build_snapshots(dataset, mc.role_cutoff)
    # build the shared indexes up front so workers only read them
    SourceHistory.from_dataset(dataset)
    _outcome_index(dataset)
    if config.jobs > 1:
        with ThreadPoolExecutor(max_workers=config.jobs) as pool:
            rows = list(pool.map(lambda s: snapshot_metrics(s, dataset, mc), snapshots))
    else:
        rows = [snapshot_metrics(s, dataset, mc) for s in snapshots]
    lint = config.lint_config()
    external = count_external_prs(dataset) if lint.min_external_prs is not None else None
    findings = lint_dataset(dataset, lint, external)
    return ProjectResult(dataset, snapshots, rows, findings)


def _write_text(path: Path, text: str):
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text, encoding="utf-8")
    os.replace(tmp, path)


def run_pipeline(config: RunConfig, figures: bool = True) -> dict:
    """Compute every dataset in ``config.datasets`` and write the artifacts under ``config.out``.

    Returns ``{"metrics": [...paths], "lint": path, "snapshots": [...], "figures": [...]}``.
    """
    out = Path(config.out)
    results = [compute_project(load_dataset(path), config) for path in config.datasets]
    try:
        out.mkdir(parents=True, exist_ok=True)
        (out / "snapshots").mkdir(exist_ok=True)
    except OSError as exc:
        raise IoFailure(str(exc), path=str(out)) from exc
    rows = [r for res in results for r in res.rows]
    written = {"metrics": export(raw_table(rows), out, "metrics"), "snapshots": [], "figures": []}
    lint = {
        res.dataset.project.full_name: [f.to_json() for f in res.findings]
        for res in sorted(results, key=lambda r: r.dataset.project.full_name)
    }
    _write_text(out / "lint.json", json.dumps(lint, indent=2, sort_keys=True) + "\n")
    written["lint"] = out / "lint.json"
    for res in results:
        slug = project_slug(res.dataset.project.full_name)
        path = out / "snapshots" / f"{slug}.ndjson"
        write_snapshot_cache(path, res.dataset, res.snapshots)
        written["snapshots"].append(path)
    if figures:
        from .plotting import entropy_timeseries

        for res in results:
            slug = project_slug(res.dataset.project.full_name)
            path = out / "figures" / f"{slug}.entropy.svg"
            entropy_timeseries([r.as_dict() for r in res.rows], path, res.dataset.project.full_name)
            written["figures"].append(path)
    logger.info("computed %d project-months for %d projects", len(rows), len(results))
    return written
