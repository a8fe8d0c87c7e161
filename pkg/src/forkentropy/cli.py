"""Command-line entry point.

Subcommands: ``fetch``, ``validate``, ``compute``, ``entropy``, ``what-if``,
``export`` and ``report``. Exit status is 0 on success, 2 for invalid input
and 3 when a fetch stops before completion. Errors go to stderr as one JSON
object per line: ``{"kind", "message", "context"}``.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .config import RunConfig
from .errors import FetchError, ForkEntropyError

logger = logging.getLogger("forkentropy")

EXIT_OK = 0
EXIT_INVALID = 2
EXIT_PARTIAL = 3


class RowSpecError(ForkEntropyError):
    kind = "malformed_row_spec"


def parse_row_spec(spec: str) -> dict:
    """``"src/a.c=3,README=1"`` -> ``{"src/a.c": 3, "README": 1}``."""
    counts = {}
    for part in spec.split(","):
        part = part.strip()
        if not part:
            continue
        path, sep, value = part.rpartition("=")
        if not sep or not path:
            raise RowSpecError(f"expected path=count, got {part!r}", spec=spec)
        try:
            n = int(value)
        except ValueError:
            raise RowSpecError(f"count for {path!r} is not an integer", spec=spec) from None
        if n < 0:
            raise RowSpecError(f"count for {path!r} is negative", spec=spec)
        counts[path] = counts.get(path, 0) + n
    if not any(counts.values()):
        raise RowSpecError("row spec has no nonzero cell", spec=spec)
    return counts


def row_in_matrix_space(matrix, counts: dict, fork_id="new"):
    """Express ``{path: count}`` in ``matrix``'s columns; unseen paths get fresh column ids."""
    from .entropy import FileModVector

    index = dict(matrix.file_index)
    next_col = max(index.values(), default=-1) + 1
    entries = {}
    for path in sorted(counts):
        if not counts[path]:
            continue
        if path not in index:
            index[path] = next_col
            next_col += 1
        entries[index[path]] = counts[path]
    return FileModVector.from_mapping(fork_id, entries)


def _fmt(x):
    return f"{x:.10f}"


def _add_common(p, jobs=True):
    p.add_argument("--config", help="JSON config file; flags override its values")
    p.add_argument("--print-config", action="store_true", help="print the resolved configuration and exit")
    p.add_argument("--gamma", type=float, help="kernel rate of the distance 1-exp(-gamma*L1) (default 1)")
    p.add_argument("--hot-window-days", type=int, help="trailing window for hot files (default 90)")
    p.add_argument("--outlier-fraction", type=float, help="upper-tail fraction trimmed per outcome (default 0.01)")
    p.add_argument("--out", help="output directory")
    if jobs:
        p.add_argument("--jobs", type=int, help="worker count")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="forkentropy", description="Fork entropy and related project metrics.")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("fetch", help="download a repository's events into a dataset directory")
    _add_common(p)
    p.add_argument("--repo", required=True, help="owner/name of the source repository")
    p.add_argument("--api-base-url", default="https://api.github.com")
    p.add_argument("--resources", default=",".join(_fetch_resources()), help="comma-separated subset")
    p.add_argument("--since", help="RFC 3339 timestamp; earlier commits and issues are skipped")
    p.add_argument("--max-depth", type=int, help="fork-of-fork depth limit (default: unlimited)")
    p.add_argument("--max-requests", type=int, help="request budget; exit 3 when spent")

    p = sub.add_parser("validate", help="load, check and lint dataset directories")
    _add_common(p, jobs=False)
    p.add_argument("--dataset", action="append", default=[], required=False)

    p = sub.add_parser("compute", help="monthly metrics, lint report, snapshot cache and charts")
    _add_common(p)
    p.add_argument("--dataset", action="append", default=[])
    p.add_argument("--no-figures", action="store_true")

    p = sub.add_parser("entropy", help="fork entropy of one matrix file")
    _add_common(p, jobs=False)
    p.add_argument("--matrix", required=True, help="NDJSON matrix file")
    p.add_argument("--json", action="store_true")

    p = sub.add_parser("what-if", help="effect of adding one fork row to a matrix")
    _add_common(p, jobs=False)
    p.add_argument("--matrix", required=True)
    p.add_argument("--row", required=True, help='new row as "path=count,path=count"')
    p.add_argument("--json", action="store_true")

    p = sub.add_parser("export", help="regression-ready table from a metrics NDJSON file")
    _add_common(p, jobs=False)
    p.add_argument("--metrics", required=True, help="metrics.ndjson written by compute")

    p = sub.add_parser("report", help="charts and rank correlations from a metrics NDJSON file")
    _add_common(p, jobs=False)
    p.add_argument("--metrics", required=True)
    return parser


def _fetch_resources():
    from .forge import RESOURCES

    return RESOURCES


def resolve_config(args) -> RunConfig:
    config = RunConfig.from_file(args.config) if getattr(args, "config", None) else RunConfig()
    overrides = {
        "gamma": getattr(args, "gamma", None),
        "hot_window_days": getattr(args, "hot_window_days", None),
        "outlier_fraction": getattr(args, "outlier_fraction", None),
        "out": getattr(args, "out", None),
        "jobs": getattr(args, "jobs", None),
    }
    if getattr(args, "dataset", None):
        overrides["datasets"] = args.dataset
    return config.updated(overrides)


def _print_json(obj):
    print(json.dumps(obj, indent=2, sort_keys=True))


def cmd_fetch(args, config):
    from .dataset import parse_timestamp
    from .forge import FetchPlan, fetch

    plan = FetchPlan(
        repo=args.repo,
        api_base_url=args.api_base_url,
        resources=tuple(r.strip() for r in args.resources.split(",") if r.strip()),
        since=parse_timestamp(args.since) if args.since else None,
        max_depth=args.max_depth,
        max_requests=args.max_requests,
        workers=args.jobs or 4,
    )
    report = fetch(plan, args.out or config.out)
    _print_json(report.to_json())
    return EXIT_OK


def cmd_validate(args, config):
    from .dataset import load_dataset, lint_dataset
    from .forge import CURSOR_FILE, verify_cache
    from .outcomes import count_external_prs

    if not config.datasets:
        raise RowSpecError("no dataset given; use --dataset")
    summary = {}
    for path in config.datasets:
        ds = load_dataset(path)
        lint = config.lint_config()
        external = count_external_prs(ds) if lint.min_external_prs is not None else None
        entry = {
            "counts": {"forks": len(ds.forks), "commits": len(ds.commits), "pulls": len(ds.pulls),
                       "issues": len(ds.issues), "privileged_actions": len(ds.privileged_actions),
                       "stars": len(ds.stars)},
            "lint": [f.to_json() for f in lint_dataset(ds, lint, external)],
        }
        if (Path(path) / CURSOR_FILE).exists():
            entry["cache"] = verify_cache(path).to_json()
        summary[ds.project.full_name] = entry
    _print_json(summary)
    return EXIT_OK


def cmd_compute(args, config):
    from .pipeline import run_pipeline

    if not config.datasets:
        raise RowSpecError("no dataset given; use --dataset")
    written = run_pipeline(config, figures=not args.no_figures)
    for path in written["metrics"]:
        print(path)
    print(written["lint"])
    for path in written["snapshots"] + written["figures"]:
        print(path)
    return EXIT_OK


def cmd_entropy(args, config):
    from .entropy import quadratic_entropy
    from .population import read_matrix_file

    result = quadratic_entropy(read_matrix_file(args.matrix), config.gamma)
    if args.json:
        _print_json({"snapshot_ref": result.snapshot_ref, "m": result.m, "n": result.n,
                     "gamma": result.gamma, "value": result.value})
    else:
        print(_fmt(result.value))
    return EXIT_OK


def cmd_what_if(args, config):
    from .entropy import classify_new_fork
    from .population import read_matrix_file

    matrix = read_matrix_file(args.matrix)
    row = row_in_matrix_space(matrix, parse_row_spec(args.row))
    a = classify_new_fork(matrix, row, config.gamma)
    fields = [
        ("m", matrix.m),
        ("entropy_before", _fmt(a.entropy_before)),
        ("mean_distance", _fmt(a.mean_distance)),
        ("entropy_after", _fmt(a.entropy_after)),
        ("delta", _fmt(a.delta)),
        ("approximate_delta", _fmt(a.approximate_delta)),
        ("label", a.label),
    ]
    if args.json:
        _print_json({"m": matrix.m, "entropy_before": a.entropy_before, "mean_distance": a.mean_distance,
                     "entropy_after": a.entropy_after, "delta": a.delta,
                     "approximate_delta": a.approximate_delta, "label": a.label})
    else:
        width = max(len(k) for k, _ in fields)
        for k, v in fields:
            print(f"{k:<{width}}  {v}")
    return EXIT_OK


def cmd_export(args, config):
    from .export import correlation_summary, correlations_csv, export, prepare_table, read_ndjson
    from .pipeline import _write_text

    table = prepare_table(read_ndjson(args.metrics).rows, config.outlier_fraction)
    out = Path(config.out)
    written = export(table, out, "regression")
    _write_text(out / "correlations.csv", correlations_csv(correlation_summary(table)))
    for path in written + [out / "correlations.csv"]:
        print(path)
    return EXIT_OK


def cmd_report(args, config):
    from .export import RegressionTable, correlation_summary, correlations_csv, read_ndjson
    from .pipeline import _write_text, project_slug
    from .plotting import entropy_timeseries, entropy_vs_outcomes

    table = read_ndjson(args.metrics)
    out = Path(config.out)
    (out / "figures").mkdir(parents=True, exist_ok=True)
    written = []
    for project in sorted({r["project_id"] for r in table.rows}):
        rows = [r for r in table.rows if r["project_id"] == project]
        slug = project_slug(project)
        written.append(entropy_timeseries(rows, out / "figures" / f"{slug}.entropy.svg", project))
        written.append(entropy_vs_outcomes(rows, out / "figures" / f"{slug}.outcomes.svg", project))
    nonempty = RegressionTable([r for r in table.rows if r["num_forks"]])
    _write_text(out / "correlations.csv", correlations_csv(correlation_summary(nonempty)))
    written.append(out / "correlations.csv")
    for path in written:
        print(path)
    return EXIT_OK


COMMANDS = {
    "fetch": cmd_fetch,
    "validate": cmd_validate,
    "compute": cmd_compute,
    "entropy": cmd_entropy,
    "what-if": cmd_what_if,
    "export": cmd_export,
    "report": cmd_report,
}


def _report_error(kind, message, context=None):
    sys.stderr.write(json.dumps({"kind": kind, "message": message, "context": context or {}}, sort_keys=True, default=str) + "\n")


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2), format="%(levelname)s %(name)s: %(message)s")
    try:
        config = resolve_config(args)
        if args.print_config:
            _print_json(config.to_json())
            return EXIT_OK
        return COMMANDS[args.command](args, config)
    except FetchError as exc:
        _report_error(exc.kind, exc.message, exc.context)
        return EXIT_PARTIAL
    except ForkEntropyError as exc:
        _report_error(exc.kind, exc.message, exc.context)
        return EXIT_INVALID
    except ValueError as exc:
        _report_error("invalid_argument", str(exc))
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
