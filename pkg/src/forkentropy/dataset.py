"""Normalized forge event dataset: records, NDJSON loading, fork network, lint.

A dataset directory holds ``project.json`` plus one NDJSON file per record
kind (``forks``, ``commits``, ``pulls``, ``issues``, ``privileged_actions``,
``stars``). Records are kept sorted by key after loading so every later
computation is independent of the line order in the input files.
"""

from __future__ import annotations

import json
import os
import re
import threading
from collections import deque
from dataclasses import dataclass, field
from datetime import datetime, timezone
from functools import cached_property
from pathlib import Path

from .errors import (
    CycleDetected,
    DanglingReference,
    DatasetNotFound,
    DuplicateKey,
    MalformedRecord,
)

SCHEMA_VERSION = 1

RECORD_FILES = ("forks", "commits", "pulls", "issues", "privileged_actions", "stars")

ACTION_KINDS = frozenset({"direct_commit", "close_issue_of_other", "close_pr_of_other", "merge_pr"})

_SHA_RE = re.compile(r"^[0-9a-f]{40}$")


def parse_timestamp(value) -> datetime:
    """Parse an RFC 3339 timestamp into an aware UTC datetime."""
    if not isinstance(value, str):
        raise ValueError(f"timestamp must be a string, got {type(value).__name__}")
    text = value.strip()
    if text.endswith(("Z", "z")):
        text = text[:-1] + "+00:00"
    ts = datetime.fromisoformat(text)
    if ts.tzinfo is None:
        raise ValueError(f"timestamp {value!r} lacks a UTC offset")
    return ts.astimezone(timezone.utc)


def format_timestamp(ts: datetime) -> str:
    ts = ts.astimezone(timezone.utc)
    if ts.microsecond:
        return ts.strftime("%Y-%m-%dT%H:%M:%S.%fZ")
    return ts.strftime("%Y-%m-%dT%H:%M:%SZ")


def id_key(value):
    """Sort key for opaque ids, which may be ints or strings."""
    return (isinstance(value, str), value)


def _opt_ts(value):
    return None if value is None else parse_timestamp(value)


def _opt_fmt(ts):
    return None if ts is None else format_timestamp(ts)


def _check_id(value, name):
    if isinstance(value, bool) or not isinstance(value, (int, str)):
        raise ValueError(f"{name} must be an int or string id")
    return value


def _count(value, name):
    if isinstance(value, bool) or not isinstance(value, int) or value < 0:
        raise ValueError(f"{name} must be a non-negative integer")
    return value


def _parse_files(raw):
    if not isinstance(raw, list):
        raise ValueError("files must be an array")
    out = []
    for f in raw:
        if not isinstance(f, dict):
            raise ValueError("file entries must be objects")
        path = f["path"]
        if not isinstance(path, str) or not path:
            raise ValueError("file path must be a non-empty string")
        out.append(FileChange(path, _count(f["additions"], "additions"), _count(f["deletions"], "deletions")))
    return tuple(out)


@dataclass(frozen=True)
class FileChange:
    path: str
    additions: int
    deletions: int

    @property
    def changed_lines(self):
        return self.additions + self.deletions

    def to_json(self):
        return {"path": self.path, "additions": self.additions, "deletions": self.deletions}


@dataclass(frozen=True)
class Project:
    source_repo_id: object
    full_name: str
    created_at: datetime

    @classmethod
    def from_json(cls, obj):
        return cls(_check_id(obj["source_repo_id"], "source_repo_id"), str(obj["full_name"]), parse_timestamp(obj["created_at"]))

    def to_json(self):
        return {"source_repo_id": self.source_repo_id, "full_name": self.full_name, "created_at": format_timestamp(self.created_at)}


@dataclass(frozen=True)
class ForkRecord:
    repo_id: object
    full_name: str
    owner_id: object
    parent_repo_id: object
    created_at: datetime

    @classmethod
    def from_json(cls, obj):
        parent = obj.get("parent_repo_id")
        return cls(
            _check_id(obj["repo_id"], "repo_id"),
            str(obj["full_name"]),
            _check_id(obj["owner_id"], "owner_id"),
            None if parent is None else _check_id(parent, "parent_repo_id"),
            parse_timestamp(obj["created_at"]),
        )

    def to_json(self):
        return {
            "repo_id": self.repo_id,
            "full_name": self.full_name,
            "owner_id": self.owner_id,
            "parent_repo_id": self.parent_repo_id,
            "created_at": format_timestamp(self.created_at),
        }

    @property
    def key(self):
        return id_key(self.repo_id)


@dataclass(frozen=True)
class CommitRecord:
    sha: str
    repo_id: object
    author_id: object
    committed_at: datetime
    parent_count: int
    files: tuple
    message: str

    @classmethod
    def from_json(cls, obj):
        sha = obj["sha"]
        if not isinstance(sha, str) or not _SHA_RE.match(sha):
            raise ValueError(f"sha must be 40 lowercase hex characters, got {sha!r}")
        author = obj["author_id"]
        return cls(
            sha,
            _check_id(obj["repo_id"], "repo_id"),
            None if author is None else _check_id(author, "author_id"),
            parse_timestamp(obj["committed_at"]),
            _count(obj["parent_count"], "parent_count"),
            _parse_files(obj["files"]),
            str(obj["message"]),
        )

    def to_json(self):
        return {
            "sha": self.sha,
            "repo_id": self.repo_id,
            "author_id": self.author_id,
            "committed_at": format_timestamp(self.committed_at),
            "parent_count": self.parent_count,
            "files": [f.to_json() for f in self.files],
            "message": self.message,
        }

    @property
    def key(self):
        return (self.sha, id_key(self.repo_id))

    @property
    def is_merge(self):
        return self.parent_count > 1

    def changed_lines_by_path(self):
        out = {}
        for f in self.files:
            if f.changed_lines:
                out[f.path] = out.get(f.path, 0) + f.changed_lines
        return out


@dataclass(frozen=True)
class PullRequestRecord:
    pr_id: object
    source_repo_id: object
    target_repo_id: object
    author_id: object
    created_at: datetime
    closed_at: datetime | None
    merged_action: bool
    commit_shas: tuple
    files: tuple
    last_comments: tuple

    @classmethod
    def from_json(cls, obj):
        merged = obj["merged_action"]
        if not isinstance(merged, bool):
            raise ValueError("merged_action must be a boolean")
        shas = obj["commit_shas"]
        comments = obj["last_comments"]
        if not isinstance(shas, list) or not all(isinstance(s, str) for s in shas):
            raise ValueError("commit_shas must be an array of strings")
        if not isinstance(comments, list) or not all(isinstance(c, str) for c in comments):
            raise ValueError("last_comments must be an array of strings")
        if len(comments) > 3:
            raise ValueError("last_comments holds at most 3 comments")
        pr = cls(
            _check_id(obj["pr_id"], "pr_id"),
            _check_id(obj["source_repo_id"], "source_repo_id"),
            _check_id(obj["target_repo_id"], "target_repo_id"),
            _check_id(obj["author_id"], "author_id"),
            parse_timestamp(obj["created_at"]),
            _opt_ts(obj.get("closed_at")),
            merged,
            tuple(shas),
            _parse_files(obj["files"]),
            tuple(comments),
        )
        if pr.closed_at is not None and pr.closed_at < pr.created_at:
            raise ValueError("closed_at precedes created_at")
        if pr.merged_action and pr.closed_at is None:
            raise ValueError("merged_action requires closed_at")
        return pr

    def to_json(self):
        return {
            "pr_id": self.pr_id,
            "source_repo_id": self.source_repo_id,
            "target_repo_id": self.target_repo_id,
            "author_id": self.author_id,
            "created_at": format_timestamp(self.created_at),
            "closed_at": _opt_fmt(self.closed_at),
            "merged_action": self.merged_action,
            "commit_shas": list(self.commit_shas),
            "files": [f.to_json() for f in self.files],
            "last_comments": list(self.last_comments),
        }

    @property
    def key(self):
        return id_key(self.pr_id)

    @property
    def number(self):
        """The forge-visible number used in ``#123`` references."""
        return str(self.pr_id)


@dataclass(frozen=True)
class IssueRecord:
    issue_id: object
    title: str
    labels: tuple
    created_at: datetime
    author_id: object

    @classmethod
    def from_json(cls, obj):
        title = obj["title"]
        if not isinstance(title, str) or not title.strip():
            raise ValueError("issue title must be a non-empty string")
        labels = obj["labels"]
        if not isinstance(labels, list) or not all(isinstance(x, str) for x in labels):
            raise ValueError("labels must be an array of strings")
        author = obj["author_id"]
        return cls(
            _check_id(obj["issue_id"], "issue_id"),
            title,
            tuple(labels),
            parse_timestamp(obj["created_at"]),
            None if author is None else _check_id(author, "author_id"),
        )

    def to_json(self):
        return {
            "issue_id": self.issue_id,
            "title": self.title,
            "labels": list(self.labels),
            "created_at": format_timestamp(self.created_at),
            "author_id": self.author_id,
        }

    @property
    def key(self):
        return id_key(self.issue_id)


@dataclass(frozen=True)
class PrivilegedActionRecord:
    user_id: object
    repo_id: object
    action_kind: str
    occurred_at: datetime

    @classmethod
    def from_json(cls, obj):
        kind = obj["action_kind"]
        if kind not in ACTION_KINDS:
            raise ValueError(f"action_kind {kind!r} not in {sorted(ACTION_KINDS)}")
        return cls(
            _check_id(obj["user_id"], "user_id"),
            _check_id(obj["repo_id"], "repo_id"),
            kind,
            parse_timestamp(obj["occurred_at"]),
        )

    def to_json(self):
        return {
            "user_id": self.user_id,
            "repo_id": self.repo_id,
            "action_kind": self.action_kind,
            "occurred_at": format_timestamp(self.occurred_at),
        }

    @property
    def key(self):
        return (self.occurred_at, id_key(self.user_id), id_key(self.repo_id), self.action_kind)


@dataclass(frozen=True)
class StarRecord:
    starred_at: datetime

    @classmethod
    def from_json(cls, obj):
        return cls(parse_timestamp(obj["starred_at"]))

    def to_json(self):
        return {"starred_at": format_timestamp(self.starred_at)}

    @property
    def key(self):
        return self.starred_at


_RECORD_TYPES = {
    "forks": ForkRecord,
    "commits": CommitRecord,
    "pulls": PullRequestRecord,
    "issues": IssueRecord,
    "privileged_actions": PrivilegedActionRecord,
    "stars": StarRecord,
}

# record kinds whose keys must be unique
_UNIQUE = {"forks", "commits", "pulls", "issues"}


@dataclass(frozen=True)
class EventDataset:
    project: Project
    forks: tuple = ()
    commits: tuple = ()
    pulls: tuple = ()
    issues: tuple = ()
    privileged_actions: tuple = ()
    stars: tuple = ()

    @property
    def source_repo_id(self):
        return self.project.source_repo_id

    @cached_property
    def index(self) -> "DatasetIndex":
        return DatasetIndex(self)

    def to_records(self):
        """Plain JSON-ready form; equal datasets give equal records."""
        out = {"project": self.project.to_json()}
        for name in RECORD_FILES:
            out[name] = [r.to_json() for r in getattr(self, name)]
        return out

    def last_event_time(self):
        times = [self.project.created_at]
        times += [f.created_at for f in self.forks]
        times += [c.committed_at for c in self.commits]
        for p in self.pulls:
            times.append(p.created_at)
            if p.closed_at is not None:
                times.append(p.closed_at)
        times += [i.created_at for i in self.issues]
        times += [a.occurred_at for a in self.privileged_actions]
        times += [s.starred_at for s in self.stars]
        return max(times)


def build_dataset(project, forks=(), commits=(), pulls=(), issues=(), privileged_actions=(), stars=()):
    """Assemble and check a dataset from parsed records in any order."""
    groups = {
        "forks": list(forks),
        "commits": list(commits),
        "pulls": list(pulls),
        "issues": list(issues),
        "privileged_actions": list(privileged_actions),
        "stars": list(stars),
    }
    for name, records in groups.items():
        records.sort(key=lambda r: r.key)
        if name in _UNIQUE:
            for a, b in zip(records, records[1:]):
                if a.key == b.key:
                    raise DuplicateKey(name, a.key)
    ds = EventDataset(project, **{k: tuple(v) for k, v in groups.items()})
    _check_references(ds)
    return ds


def _check_references(ds):
    src = ds.source_repo_id
    known = {f.repo_id for f in ds.forks}
    if src in known:
        raise DuplicateKey("forks", src)
    known.add(src)
    for f in ds.forks:
        if f.parent_repo_id is None:
            raise DanglingReference("parent_repo_id", f"none for fork {f.repo_id!r}")
        if f.parent_repo_id not in known:
            raise DanglingReference("repo_id", f.parent_repo_id)
    for c in ds.commits:
        if c.repo_id not in known:
            raise DanglingReference("repo_id", c.repo_id)
    for p in ds.pulls:
        for rid in (p.source_repo_id, p.target_repo_id):
            if rid not in known:
                raise DanglingReference("repo_id", rid)
    for a in ds.privileged_actions:
        if a.repo_id not in known:
            raise DanglingReference("repo_id", a.repo_id)


def _read_ndjson(path, record_type):
    records = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise MalformedRecord(path.name, lineno, f"invalid JSON: {exc.msg}") from None
            if not isinstance(obj, dict):
                raise MalformedRecord(path.name, lineno, "expected a JSON object")
            try:
                records.append(record_type.from_json(obj))
            except KeyError as exc:
                raise MalformedRecord(path.name, lineno, f"missing required key {exc.args[0]!r}") from None
            except (TypeError, ValueError) as exc:
                raise MalformedRecord(path.name, lineno, str(exc)) from None
    return records


def load_dataset(path) -> EventDataset:
    """Parse and referentially check a dataset directory.

    Missing NDJSON files are read as empty; ``project.json`` is required.
    Raises :class:`MalformedRecord`, :class:`DanglingReference` or
    :class:`DuplicateKey`.
    """
    root = Path(path)
    if not root.is_dir():
        raise DatasetNotFound(f"dataset directory {str(root)!r} does not exist", path=str(root))
    project_file = root / "project.json"
    if not project_file.is_file():
        raise DatasetNotFound(f"{project_file} is missing", path=str(project_file))
    try:
        project = Project.from_json(json.loads(project_file.read_text(encoding="utf-8")))
    except json.JSONDecodeError as exc:
        raise MalformedRecord("project.json", exc.lineno, f"invalid JSON: {exc.msg}") from None
    except KeyError as exc:
        raise MalformedRecord("project.json", 1, f"missing required key {exc.args[0]!r}") from None
    except (TypeError, ValueError) as exc:
        raise MalformedRecord("project.json", 1, str(exc)) from None
    groups = {}
    for name, record_type in _RECORD_TYPES.items():
        file = root / f"{name}.ndjson"
        groups[name] = _read_ndjson(file, record_type) if file.exists() else []
    return build_dataset(project, **groups)


def _atomic_write(path: Path, text: str):
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text, encoding="utf-8")
    os.replace(tmp, path)


def write_dataset(dataset: EventDataset, path) -> Path:
    """Serialize ``dataset`` into a directory readable by :func:`load_dataset`."""
    root = Path(path)
    root.mkdir(parents=True, exist_ok=True)
    records = dataset.to_records()
    _atomic_write(root / "project.json", json.dumps(records["project"], sort_keys=True) + "\n")
    for name in RECORD_FILES:
        lines = "".join(json.dumps(r, sort_keys=True) + "\n" for r in records[name])
        _atomic_write(root / f"{name}.ndjson", lines)
    return root


def fork_network(dataset: EventDataset) -> tuple:
    """All direct and transitive forks of the source repository, breadth first.

    Siblings are visited in ``(created_at, repo_id)`` order so the result
    does not depend on record order. Raises :class:`CycleDetected` when a
    fork's parent chain loops instead of reaching the source.
    """
    by_id = {f.repo_id: f for f in dataset.forks}
    src = dataset.source_repo_id
    for f in dataset.forks:
        seen = set()
        cur = f
        while cur.parent_repo_id != src:
            if cur.repo_id in seen:
                raise CycleDetected(cur.repo_id)
            seen.add(cur.repo_id)
            cur = by_id[cur.parent_repo_id]
    children = {}
    for f in dataset.forks:
        children.setdefault(f.parent_repo_id, []).append(f)
    for kids in children.values():
        kids.sort(key=lambda f: (f.created_at, id_key(f.repo_id)))
    out = []
    queue = deque([src])
    while queue:
        for child in children.get(queue.popleft(), ()):
            out.append(child)
            queue.append(child.repo_id)
    return tuple(out)


class DatasetIndex:
    """Read-only lookups derived once per dataset."""

    def __init__(self, dataset: EventDataset):
        self.dataset = dataset
        src = dataset.source_repo_id
        self.network = fork_network(dataset)
        self.fork_by_id = {f.repo_id: f for f in self.network}
        self.fork_order = {f.repo_id: i for i, f in enumerate(self.network)}
        self.commits_by_repo = {}
        for c in dataset.commits:
            self.commits_by_repo.setdefault(c.repo_id, []).append(c)
        self.source_commits = tuple(self.commits_by_repo.get(src, ()))
        self.source_shas = frozenset(c.sha for c in self.source_commits)
        self.pr_shas_by_fork = {}
        for p in dataset.pulls:
            self.pr_shas_by_fork.setdefault(p.source_repo_id, set()).update(p.commit_shas)
        self.pr_carried_shas = frozenset(s for shas in self.pr_shas_by_fork.values() for s in shas)
        self._memo = {}
        self._memo_lock = threading.RLock()

    def memo(self, name, factory):
        """Cache a derived structure on this index; ``factory`` takes no arguments."""
        with self._memo_lock:
            if name not in self._memo:
                self._memo[name] = factory()
            return self._memo[name]


@dataclass(frozen=True)
class LintFinding:
    rule: str
    message: str
    value: object = None
    threshold: object = None

    def to_json(self):
        return {"rule": self.rule, "message": self.message, "value": self.value, "threshold": self.threshold}


EXCLUSION_KEYWORDS = ("awesome", "homework", "assignment", "course", "note", "document")


@dataclass(frozen=True)
class LintConfig:
    min_active_forks: int = 100
    min_issues: int = 100
    # None disables the external pull-request volume rule
    min_external_prs: int | None = None
    keywords: tuple = field(default=EXCLUSION_KEYWORDS)


def lint_dataset(dataset: EventDataset, config: LintConfig | None = None, external_prs: int | None = None) -> list:
    """Advisory project-selection findings; never raises.

    ``external_prs`` is the number of pull requests by external contributors,
    only needed when ``config.min_external_prs`` is set.
    """
    config = config or LintConfig()
    findings = []
    index = dataset.index
    active = sum(1 for f in index.network if index.commits_by_repo.get(f.repo_id))
    if active < config.min_active_forks:
        findings.append(
            LintFinding("active_forks", f"active_forks={active} < {config.min_active_forks}", active, config.min_active_forks)
        )
    issues = len(dataset.issues)
    if issues < config.min_issues:
        findings.append(LintFinding("issues", f"issues={issues} < {config.min_issues}", issues, config.min_issues))
    if config.min_external_prs is not None and external_prs is not None and external_prs < config.min_external_prs:
        findings.append(
            LintFinding(
                "external_prs",
                f"external_prs={external_prs} < {config.min_external_prs}",
                external_prs,
                config.min_external_prs,
            )
        )
    name = dataset.project.full_name.lower()
    for kw in config.keywords:
        if kw in name:
            findings.append(LintFinding("name_keyword", f"project name {dataset.project.full_name!r} contains {kw!r}", kw))
    return findings
