"""Monthly snapshots, external-contributor fork populations and their matrices."""

from __future__ import annotations

import bisect
import json
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path

from .dataset import EventDataset, format_timestamp, id_key, parse_timestamp
from .entropy import FileModificationMatrix
from .errors import EmptyPopulation, IoFailure, MalformedRecord

ROLE_CUTOFFS = ("interval_end", "interval_start")

SNAPSHOT_SCHEMA_VERSION = 1


def month_start(ts: datetime) -> datetime:
    ts = ts.astimezone(timezone.utc)
    return datetime(ts.year, ts.month, 1, tzinfo=timezone.utc)


def next_month(ts: datetime) -> datetime:
    if ts.month == 12:
        return ts.replace(year=ts.year + 1, month=1)
    return ts.replace(month=ts.month + 1)


def month_intervals(first: datetime, last: datetime):
    """Half-open calendar-month intervals covering ``first`` through ``last``."""
    start = month_start(first)
    stop = month_start(last)
    out = []
    while start <= stop:
        end = next_month(start)
        out.append((start, end))
        start = end
    return out


@dataclass(frozen=True)
class Snapshot:
    project_id: str
    interval_start: datetime
    interval_end: datetime
    population: tuple  # ((fork_id, (sha, ...)), ...)

    @property
    def month(self) -> str:
        return self.interval_start.strftime("%Y-%m")

    @property
    def ref(self) -> str:
        return f"{self.project_id}@{self.month}"

    @property
    def fork_ids(self):
        return tuple(f for f, _ in self.population)

    def contains(self, ts: datetime) -> bool:
        return self.interval_start <= ts < self.interval_end


@dataclass(frozen=True)
class ContributorRole:
    user_id: object
    project_id: str
    as_of: datetime
    role: str


class RoleIndex:
    """Earliest privileged moment per user on the source repository.

    A direct commit is a commit recorded in the source repository whose sha
    no pull request carries, so integrated contributions do not make their
    authors privileged.
    """

    def __init__(self, dataset: EventDataset):
        index = dataset.index
        src = dataset.source_repo_id
        first = {}

        def note(user, ts):
            if user is None:
                return
            if user not in first or ts < first[user]:
                first[user] = ts

        for c in index.source_commits:
            if c.sha not in index.pr_carried_shas:
                note(c.author_id, c.committed_at)
        for a in dataset.privileged_actions:
            if a.repo_id == src:
                note(a.user_id, a.occurred_at)
        self.first_privileged = first

    def is_external(self, user_id, as_of: datetime) -> bool:
        ts = self.first_privileged.get(user_id)
        return ts is None or ts >= as_of


def _roles(dataset):
    return dataset.index.memo("roles", lambda: RoleIndex(dataset))


def classify_contributor(dataset: EventDataset, user_id, as_of: datetime) -> ContributorRole:
    """``privileged`` iff the user directly committed to, or acted with privileges on,
    the source repository strictly before ``as_of``."""
    role = "external" if _roles(dataset).is_external(user_id, as_of) else "privileged"
    return ContributorRole(user_id, dataset.project.full_name, as_of, role)


class CommitAttribution:
    """Which in-population commits count for which fork.

    A fork keeps its own non-merge commits that modify at least one file.
    Commits that also sit in the source repository are treated as inherited
    unless a pull request from that fork carries them. A sha held by several
    forks goes to the fork observed first (earliest ``created_at``).
    """

    def __init__(self, dataset: EventDataset):
        index = dataset.index
        owner = {}
        for fork in index.network:
            own_pr = index.pr_shas_by_fork.get(fork.repo_id, set())
            for c in index.commits_by_repo.get(fork.repo_id, ()):
                if c.is_merge or not c.changed_lines_by_path():
                    continue
                if c.sha in index.source_shas and c.sha not in own_pr:
                    continue
                rank = (fork.created_at, id_key(fork.repo_id))
                prev = owner.get(c.sha)
                if prev is None or rank < prev[0]:
                    owner[c.sha] = (rank, c)
        self.by_fork = {}
        for _, c in owner.values():
            self.by_fork.setdefault(c.repo_id, []).append(c)
        for commits in self.by_fork.values():
            commits.sort(key=lambda c: (c.committed_at, c.sha))
        self._times = {f: [c.committed_at for c in cs] for f, cs in self.by_fork.items()}
        self.commit_by_key = {(c.repo_id, c.sha): c for cs in self.by_fork.values() for c in cs}

    def in_interval(self, fork_id, start, end):
        times = self._times.get(fork_id)
        if not times:
            return []
        lo = bisect.bisect_left(times, start)
        hi = bisect.bisect_left(times, end)
        return self.by_fork[fork_id][lo:hi]


def _attribution(dataset):
    return dataset.index.memo("attribution", lambda: CommitAttribution(dataset))


def role_cutoff_time(snapshot_start, snapshot_end, role_cutoff="interval_end"):
    if role_cutoff not in ROLE_CUTOFFS:
        raise ValueError(f"role_cutoff must be one of {ROLE_CUTOFFS}")
    return snapshot_end if role_cutoff == "interval_end" else snapshot_start


def build_snapshots(dataset: EventDataset, role_cutoff: str = "interval_end") -> list:
    """One snapshot per calendar month from project creation to the last event.

    A fork joins a month's population when it has an attributed commit in
    ``[start, end)`` and its owner is external as of the role cutoff.
    """
    index = dataset.index
    attribution = _attribution(dataset)
    roles = _roles(dataset)
    out = []
    for start, end in month_intervals(dataset.project.created_at, dataset.last_event_time()):
        as_of = role_cutoff_time(start, end, role_cutoff)
        population = []
        for fork in index.network:
            commits = attribution.in_interval(fork.repo_id, start, end)
            if commits and roles.is_external(fork.owner_id, as_of):
                population.append((fork.repo_id, tuple(sorted(c.sha for c in commits))))
        out.append(Snapshot(dataset.project.full_name, start, end, tuple(population)))
    return out


def build_matrix(dataset: EventDataset, snapshot: Snapshot) -> FileModificationMatrix:
    """Rows are population forks; cells sum additions plus deletions per path."""
    if not snapshot.population:
        raise EmptyPopulation(f"snapshot {snapshot.ref} has no forks", snapshot=snapshot.ref)
    attribution = _attribution(dataset)
    cells = {}
    for fork_id, shas in snapshot.population:
        counts = {}
        for sha in shas:
            for path, lines in attribution.commit_by_key[(fork_id, sha)].changed_lines_by_path().items():
                counts[path] = counts.get(path, 0) + lines
        cells[fork_id] = counts
    return FileModificationMatrix.from_cells(snapshot.ref, cells)


def build_pr_filtered_matrix(dataset: EventDataset, snapshot: Snapshot) -> FileModificationMatrix:
    """Like :func:`build_matrix` but counting only changes carried by pull requests
    opened in the interval; population forks without such a request drop out."""
    src = dataset.source_repo_id
    members = set(snapshot.fork_ids)
    cells = {fork_id: {} for fork_id in snapshot.fork_ids}
    for pr in dataset.pulls:
        if pr.source_repo_id in members and pr.target_repo_id == src and snapshot.contains(pr.created_at):
            counts = cells[pr.source_repo_id]
            for f in pr.files:
                if f.changed_lines:
                    counts[f.path] = counts.get(f.path, 0) + f.changed_lines
    cells = {k: v for k, v in cells.items() if v}
    if not cells:
        raise EmptyPopulation(f"snapshot {snapshot.ref} has no pull-request changes", snapshot=snapshot.ref)
    return FileModificationMatrix.from_cells(snapshot.ref + "#prs", cells)


def matrix_to_json(matrix: FileModificationMatrix) -> dict:
    by_col = matrix.paths_by_column()
    return {
        "snapshot_ref": matrix.snapshot_ref,
        "files": [by_col[c] for c in sorted(by_col)],
        "rows": [
            {"fork_id": row.fork_id, "cells": {by_col[c]: v for c, v in row.entries}} for row in matrix.rows
        ],
    }


def matrix_from_json(obj: dict) -> FileModificationMatrix:
    cells = {}
    for row in obj["rows"]:
        cells[row["fork_id"]] = dict(row["cells"])
    return FileModificationMatrix.from_cells(obj.get("snapshot_ref"), cells)


def write_snapshot_cache(path, dataset: EventDataset, snapshots) -> None:
    """One NDJSON line per snapshot with both matrix variants (``null`` when empty)."""
    lines = []
    for snap in snapshots:
        try:
            full = matrix_to_json(build_matrix(dataset, snap))
        except EmptyPopulation:
            full = None
        try:
            prs = matrix_to_json(build_pr_filtered_matrix(dataset, snap))
        except EmptyPopulation:
            prs = None
        lines.append(
            json.dumps(
                {
                    "schema_version": SNAPSHOT_SCHEMA_VERSION,
                    "project_id": snap.project_id,
                    "interval_start": format_timestamp(snap.interval_start),
                    "interval_end": format_timestamp(snap.interval_end),
                    "population": [{"fork_id": f, "commit_shas": list(s)} for f, s in snap.population],
                    "matrix": full,
                    "pr_matrix": prs,
                },
                sort_keys=True,
            )
        )
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("".join(line + "\n" for line in lines))


def read_snapshot_cache(path):
    """Return ``[(snapshot, matrix_or_None, pr_matrix_or_None), ...]``."""
    out = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            obj = json.loads(line)
            if obj.get("schema_version") != SNAPSHOT_SCHEMA_VERSION:
                raise MalformedRecord(str(path), lineno, f"unsupported schema_version {obj.get('schema_version')!r}")
            snap = Snapshot(
                obj["project_id"],
                parse_timestamp(obj["interval_start"]),
                parse_timestamp(obj["interval_end"]),
                tuple((p["fork_id"], tuple(p["commit_shas"])) for p in obj["population"]),
            )
            full = matrix_from_json(obj["matrix"]) if obj["matrix"] else None
            prs = matrix_from_json(obj["pr_matrix"]) if obj["pr_matrix"] else None
            out.append((snap, full, prs))
    return out


def write_matrix_file(path, matrix: FileModificationMatrix) -> None:
    """NDJSON: a ``{"snapshot_ref": ...}`` header, then one ``{"fork_id", "cells"}`` line per row."""
    obj = matrix_to_json(matrix)
    lines = [json.dumps({"snapshot_ref": obj["snapshot_ref"]}, sort_keys=True)]
    lines += [json.dumps(row, sort_keys=True) for row in obj["rows"]]
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("".join(line + "\n" for line in lines))


def read_matrix_file(path) -> FileModificationMatrix:
    """Read a matrix written by :func:`write_matrix_file`.

    Also accepts a single JSON object in the :func:`matrix_to_json` form.
    Row lines may omit ``fork_id``; rows are then numbered from 0.
    """
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise IoFailure(f"cannot read matrix {path}: {exc.strerror}", path=str(path)) from None
    try:
        obj = json.loads(text)
    except json.JSONDecodeError:
        obj = None
    if isinstance(obj, dict) and "rows" in obj:
        return matrix_from_json(obj)
    ref = None
    cells = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        try:
            row = json.loads(line)
        except json.JSONDecodeError as exc:
            raise MalformedRecord(str(path), lineno, f"invalid JSON: {exc.msg}") from None
        if not isinstance(row, dict):
            raise MalformedRecord(str(path), lineno, "expected a JSON object")
        if "cells" not in row:
            if "snapshot_ref" in row:
                ref = row["snapshot_ref"]
                continue
            raise MalformedRecord(str(path), lineno, "missing required key 'cells'")
        fork_id = row.get("fork_id", len(cells))
        if fork_id in cells:
            raise MalformedRecord(str(path), lineno, f"duplicate fork_id {fork_id!r}")
        if not isinstance(row["cells"], dict):
            raise MalformedRecord(str(path), lineno, "cells must map paths to counts")
        cells[fork_id] = row["cells"]
    try:
        return FileModificationMatrix.from_cells(ref or Path(path).stem, cells)
    except (TypeError, ValueError) as exc:
        raise MalformedRecord(str(path), 0, str(exc)) from None
