"""Populate a dataset directory from a GitHub-style REST API.

Listing endpoints are paginated through ``Link`` headers. Progress is kept
in ``cursors.json`` (written atomically) so an interrupted fetch resumes
from the page it stopped at. Records are merged by key, so re-running a
fetch never duplicates anything.
"""

from __future__ import annotations

import json
import logging
import os
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from datetime import datetime
from pathlib import Path
from urllib.parse import urlsplit

import httpx

from .dataset import (
    CommitRecord,
    ForkRecord,
    IssueRecord,
    PrivilegedActionRecord,
    Project,
    PullRequestRecord,
    StarRecord,
    _RECORD_TYPES,
    _read_ndjson,
    build_dataset,
    format_timestamp,
    id_key,
    load_dataset,
    parse_timestamp,
)
from .errors import AuthFailure, FetchError, PartialFetch, RateLimited, UpstreamSchemaChange

logger = logging.getLogger(__name__)

RESOURCES = ("forks", "commits", "pulls", "issues", "events", "stars")
TOKEN_ENV_VARS = ("FORKENTROPY_TOKEN", "GITHUB_TOKEN")
CURSOR_FILE = "cursors.json"
CURSOR_SCHEMA_VERSION = 1

# dataset file fed by each API resource
_RESOURCE_FILES = {
    "forks": "forks",
    "commits": "commits",
    "pulls": "pulls",
    "issues": "issues",
    "events": "privileged_actions",
    "stars": "stars",
}
_TIME_FIELDS = {
    "forks": "created_at",
    "commits": "committed_at",
    "pulls": "created_at",
    "issues": "created_at",
    "privileged_actions": "occurred_at",
    "stars": "starred_at",
}


@dataclass(frozen=True)
class FetchPlan:
    repo: str
    api_base_url: str = "https://api.github.com"
    resources: tuple = RESOURCES
    since: datetime | None = None
    token_env: tuple = TOKEN_ENV_VARS
    max_depth: int | None = None
    max_requests: int | None = None
    workers: int = 4
    per_page: int = 100

    def __post_init__(self):
        if urlsplit(self.api_base_url).scheme != "https":
            raise ValueError("api_base_url must use https")
        if not self.resources:
            raise ValueError("at least one resource must be requested")
        unknown = set(self.resources) - set(RESOURCES)
        if unknown:
            raise ValueError(f"unknown resources {sorted(unknown)}")
        if "/" not in self.repo:
            raise ValueError("repo must be given as owner/name")
        if self.workers < 1:
            raise ValueError("workers must be >= 1")

    def token(self):
        for name in self.token_env:
            value = os.environ.get(name)
            if value:
                return value
        return None


@dataclass
class FetchReport:
    counts: dict = field(default_factory=dict)
    requests: int = 0
    skipped_pulls: int = 0
    complete: bool = True

    def to_json(self):
        return {"counts": self.counts, "requests": self.requests, "skipped_pulls": self.skipped_pulls, "complete": self.complete}


@dataclass
class VerifyReport:
    counts: dict = field(default_factory=dict)
    warnings: list = field(default_factory=list)

    @property
    def clean(self):
        return not self.warnings

    def to_json(self):
        return {"counts": self.counts, "warnings": self.warnings, "clean": self.clean}


class _BudgetExhausted(Exception):
    pass


class _Cursors:
    """Pagination state per listing plus a high-water mark per resource."""

    def __init__(self, path: Path):
        self.path = path
        self.lock = threading.Lock()
        if path.exists():
            data = json.loads(path.read_text(encoding="utf-8"))
            self.pending = dict(data.get("pending", {}))
            self.high_water = dict(data.get("high_water", {}))
        else:
            self.pending = {}
            self.high_water = {}

    def bump(self, resource, ts):
        if ts is None:
            return
        text = format_timestamp(ts)
        with self.lock:
            cur = self.high_water.get(resource)
            if cur is None or parse_timestamp(cur) < ts:
                self.high_water[resource] = text

    def save(self):
        with self.lock:
            data = {
                "schema_version": CURSOR_SCHEMA_VERSION,
                "pending": dict(sorted(self.pending.items())),
                "high_water": dict(sorted(self.high_water.items())),
            }
            tmp = self.path.with_name(self.path.name + ".tmp")
            tmp.write_text(json.dumps(data, indent=2, sort_keys=True) + "\n", encoding="utf-8")
            os.replace(tmp, self.path)


def _require(obj, *keys):
    cur = obj
    for key in keys:
        if not isinstance(cur, dict) or key not in cur:
            raise UpstreamSchemaChange(".".join(keys))
        cur = cur[key]
    return cur


class ForgeClient:
    """Thin REST client with a request budget and rate-limit detection."""

    def __init__(self, plan: FetchPlan, transport: httpx.BaseTransport | None = None):
        headers = {"Accept": "application/vnd.github+json", "User-Agent": "forkentropy"}
        token = plan.token()
        if token:
            headers["Authorization"] = f"Bearer {token}"
        self.plan = plan
        self.http = httpx.Client(base_url=plan.api_base_url, headers=headers, transport=transport, timeout=30.0)
        self.requests = 0
        self._lock = threading.Lock()

    def close(self):
        self.http.close()

    def _count(self):
        with self._lock:
            if self.plan.max_requests is not None and self.requests >= self.plan.max_requests:
                raise _BudgetExhausted()
            self.requests += 1

    def get(self, url, params=None, headers=None) -> httpx.Response:
        self._count()
        resp = self.http.get(url, params=params, headers=headers)
        if resp.status_code == 401:
            raise AuthFailure("authentication failed", url=str(resp.url))
        if resp.status_code in (403, 429) and (
            resp.headers.get("x-ratelimit-remaining") == "0" or "retry-after" in resp.headers
        ):
            if "retry-after" in resp.headers:
                retry = int(resp.headers["retry-after"])
            else:
                reset = int(resp.headers.get("x-ratelimit-reset", "0"))
                retry = max(0, reset - int(time.time()))
            raise RateLimited(retry, url=str(resp.url))
        if resp.status_code >= 400:
            raise FetchError(f"HTTP {resp.status_code} for {resp.url}", status=resp.status_code, url=str(resp.url))
        return resp

    def get_json(self, url, params=None, headers=None):
        return self.get(url, params, headers).json()

    def paginate(self, url, params, cursors: _Cursors, key, headers=None):
        """Yield items of every page, resuming at ``cursors.pending[key]`` if present."""
        next_url = cursors.pending.get(key)
        first = next_url is None
        next_url = next_url or url
        while next_url:
            with cursors.lock:
                cursors.pending[key] = next_url
            resp = self.get(next_url, params if first else None, headers)
            first = False
            items = resp.json()
            if not isinstance(items, list):
                raise UpstreamSchemaChange("[list]", url=str(resp.url))
            yield from items
            nxt = resp.links.get("next", {}).get("url")
            next_url = nxt
        with cursors.lock:
            cursors.pending.pop(key, None)


def _fork_record(item, parent_id):
    return ForkRecord(
        _require(item, "id"),
        _require(item, "full_name"),
        _require(item, "owner", "id"),
        parent_id,
        parse_timestamp(_require(item, "created_at")),
    )


def _commit_record(detail, repo_id):
    files = [
        {"path": _require(f, "filename"), "additions": _require(f, "additions"), "deletions": _require(f, "deletions")}
        for f in detail.get("files") or []
    ]
    author = detail.get("author") or {}
    return CommitRecord.from_json(
        {
            "sha": _require(detail, "sha"),
            "repo_id": repo_id,
            "author_id": author.get("id"),
            "committed_at": _require(detail, "commit", "committer", "date"),
            "parent_count": len(_require(detail, "parents")),
            "files": files,
            "message": _require(detail, "commit", "message"),
        }
    )


def _load_existing(out: Path):
    existing = {}
    for name, record_type in _RECORD_TYPES.items():
        path = out / f"{name}.ndjson"
        records = _read_ndjson(path, record_type) if path.exists() else []
        if name == "stars":
            # star timestamps may repeat, so keep them as a multiset
            existing[name] = {(r.key, i): r for i, r in enumerate(sorted(records, key=lambda r: r.key))}
        else:
            existing[name] = {r.key: r for r in records}
    return existing


def _write_records(out: Path, name, records):
    lines = "".join(json.dumps(r.to_json(), sort_keys=True) + "\n" for r in sorted(records.values(), key=lambda r: r.key))
    tmp = out / f"{name}.ndjson.tmp"
    tmp.write_text(lines, encoding="utf-8")
    os.replace(tmp, out / f"{name}.ndjson")


class _Fetcher:
    def __init__(self, plan, out, client, cursors, existing):
        self.plan = plan
        self.out = out
        self.client = client
        self.cursors = cursors
        self.records = existing
        self.report = FetchReport()
        self.project = None
        self.stage = None
        self.position = None

    def gather(self, fn, items, keep):
        """Run ``fn`` over ``items`` on the worker pool, passing results to ``keep`` in input order.

        Results that completed before a failure are still kept, then the failure is re-raised.
        """
        with ThreadPoolExecutor(max_workers=self.plan.workers) as pool:
            futures = [pool.submit(fn, item) for item in items]
        error = None
        for fut in futures:
            exc = fut.exception()
            if exc is None:
                keep(fut.result())
            elif error is None:
                error = exc
        if error is not None:
            raise error

    def add(self, name, record):
        self.records[name][record.key] = record
        self.cursors.bump(name, getattr(record, _TIME_FIELDS[name]))

    def run(self):
        plan = self.plan
        self.stage = "repo"
        repo = self.client.get_json(f"/repos/{plan.repo}")
        self.project = Project(
            _require(repo, "id"), _require(repo, "full_name"), parse_timestamp(_require(repo, "created_at"))
        )
        (self.out / "project.json").write_text(json.dumps(self.project.to_json(), sort_keys=True) + "\n", encoding="utf-8")
        for resource in RESOURCES:
            if resource in plan.resources:
                self.stage = resource
                getattr(self, f"fetch_{resource}")()

    def repos(self):
        src = (self.project.full_name, self.project.source_repo_id, self.project.created_at)
        forks = sorted(self.records["forks"].values(), key=lambda f: f.key)
        return [src] + [(f.full_name, f.repo_id, f.created_at) for f in forks]

    def fetch_forks(self):
        queue = [(self.project.full_name, self.project.source_repo_id, 0)]
        while queue:
            name, repo_id, depth = queue.pop(0)
            self.position = f"forks:{name}"
            items = self.client.paginate(
                f"/repos/{name}/forks", {"per_page": self.plan.per_page, "sort": "oldest"}, self.cursors, f"forks:{name}"
            )
            for item in items:
                record = _fork_record(item, repo_id)
                self.add("forks", record)
                max_depth = self.plan.max_depth
                if item.get("forks_count", 0) and (max_depth is None or depth + 1 < max_depth):
                    queue.append((record.full_name, record.repo_id, depth + 1))

    def fetch_commits(self):
        for name, repo_id, created_at in self.repos():
            since = self.plan.since
            if repo_id != self.project.source_repo_id and (since is None or created_at > since):
                since = created_at
            params = {"per_page": self.plan.per_page}
            if since is not None:
                params["since"] = format_timestamp(since)
            self.position = f"commits:{name}"
            listed = [
                _require(item, "sha")
                for item in self.client.paginate(f"/repos/{name}/commits", params, self.cursors, f"commits:{name}")
            ]
            todo = [sha for sha in listed if (sha, id_key(repo_id)) not in self.records["commits"]]
            self.gather(
                lambda sha: _commit_record(self.client.get_json(f"/repos/{name}/commits/{sha}"), repo_id),
                todo,
                lambda record: self.add("commits", record),
            )

    def fetch_pulls(self):
        src = self.project.source_repo_id
        known = {src} | {f.repo_id for f in self.records["forks"].values()}
        name = self.project.full_name
        listing = list(
            self.client.paginate(
                f"/repos/{name}/pulls", {"state": "all", "per_page": self.plan.per_page}, self.cursors, f"pulls:{name}"
            )
        )

        def detail(item):
            number = _require(item, "number")
            head_repo = (_require(item, "head").get("repo") or {}).get("id")
            if head_repo is None or head_repo not in known:
                return None
            commits = self.client.paginate(
                f"/repos/{name}/pulls/{number}/commits", {"per_page": self.plan.per_page}, self.cursors, f"pr-commits:{number}"
            )
            files = self.client.paginate(
                f"/repos/{name}/pulls/{number}/files", {"per_page": self.plan.per_page}, self.cursors, f"pr-files:{number}"
            )
            comments = self.client.paginate(
                f"/repos/{name}/issues/{number}/comments", {"per_page": self.plan.per_page}, self.cursors, f"pr-comments:{number}"
            )
            return PullRequestRecord.from_json(
                {
                    "pr_id": number,
                    "source_repo_id": head_repo,
                    "target_repo_id": _require(item, "base", "repo", "id"),
                    "author_id": _require(item, "user", "id"),
                    "created_at": _require(item, "created_at"),
                    "closed_at": item.get("closed_at"),
                    "merged_action": item.get("merged_at") is not None,
                    "commit_shas": [_require(c, "sha") for c in commits],
                    "files": [
                        {"path": _require(f, "filename"), "additions": _require(f, "additions"), "deletions": _require(f, "deletions")}
                        for f in files
                    ],
                    "last_comments": [_require(c, "body") or "" for c in comments][-3:],
                }
            )

        def keep(record):
            if record is None:
                self.report.skipped_pulls += 1
            else:
                self.add("pulls", record)

        self.position = f"pulls:{name}"
        self.gather(detail, listing, keep)

    def fetch_issues(self):
        self.position = f"issues:{self.project.full_name}"
        name = self.project.full_name
        params = {"state": "all", "per_page": self.plan.per_page}
        if self.plan.since is not None:
            params["since"] = format_timestamp(self.plan.since)
        for item in self.client.paginate(f"/repos/{name}/issues", params, self.cursors, f"issues:{name}"):
            if "pull_request" in item:
                continue
            self.add(
                "issues",
                IssueRecord.from_json(
                    {
                        "issue_id": _require(item, "number"),
                        "title": _require(item, "title"),
                        "labels": [_require(lbl, "name") for lbl in item.get("labels") or []],
                        "created_at": _require(item, "created_at"),
                        "author_id": (item.get("user") or {}).get("id"),
                    }
                ),
            )

    def fetch_events(self):
        self.position = f"events:{self.project.full_name}"
        name = self.project.full_name
        src = self.project.source_repo_id
        for ev in self.client.paginate(
            f"/repos/{name}/issues/events", {"per_page": self.plan.per_page}, self.cursors, f"events:{name}"
        ):
            kind = _require(ev, "event")
            actor = (ev.get("actor") or {}).get("id")
            if actor is None or kind not in ("closed", "merged"):
                continue
            issue = _require(ev, "issue")
            if kind == "merged":
                action = "merge_pr"
            elif (issue.get("user") or {}).get("id") == actor:
                continue
            else:
                action = "close_pr_of_other" if "pull_request" in issue else "close_issue_of_other"
            self.add("privileged_actions", PrivilegedActionRecord(actor, src, action, parse_timestamp(_require(ev, "created_at"))))

    def fetch_stars(self):
        self.position = f"stars:{self.project.full_name}"
        # the stargazer listing is complete on every run, so it replaces what was stored
        name = self.project.full_name
        resumed = f"stars:{name}" in self.cursors.pending
        stars = list(self.records["stars"].values()) if resumed else []
        for item in self.client.paginate(
            f"/repos/{name}/stargazers",
            {"per_page": self.plan.per_page},
            self.cursors,
            f"stars:{name}",
            headers={"Accept": "application/vnd.github.star+json"},
        ):
            stars.append(StarRecord(parse_timestamp(_require(item, "starred_at"))))
        stars.sort(key=lambda r: r.key)
        self.records["stars"] = {(r.key, i): r for i, r in enumerate(stars)}
        for r in stars:
            self.cursors.bump("stars", r.starred_at)

    def persist(self):
        for name in _RECORD_TYPES:
            _write_records(self.out, name, self.records[name])
        self.cursors.save()
        self.report.counts = {name: len(self.records[name]) for name in _RECORD_TYPES}
        self.report.requests = self.client.requests


def fetch(plan: FetchPlan, out, transport: httpx.BaseTransport | None = None) -> FetchReport:
    """Fetch ``plan.repo`` into the dataset directory ``out``.

    Whatever was retrieved is written even when the fetch stops early;
    :class:`RateLimited` and :class:`PartialFetch` (request budget spent)
    leave the cursor file pointing at the next page to request.
    """
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    cursors = _Cursors(out / CURSOR_FILE)
    client = ForgeClient(plan, transport)
    fetcher = _Fetcher(plan, out, client, cursors, _load_existing(out))
    try:
        fetcher.run()
    except _BudgetExhausted:
        fetcher.report.complete = False
        if fetcher.project is not None:
            fetcher.persist()
        cursor = {"position": fetcher.position, "pending": dict(cursors.pending)}
        raise PartialFetch(fetcher.stage, cursor, "request budget exhausted") from None
    except RateLimited:
        if fetcher.project is not None:
            fetcher.persist()
        raise
    finally:
        client.close()
    fetcher.persist()
    build_dataset(
        fetcher.project,
        **{name: list(fetcher.records[name].values()) for name in _RECORD_TYPES},
    )
    return fetcher.report


def verify_cache(out) -> VerifyReport:
    """Validate a fetched directory like :func:`load_dataset` and check cursor consistency.

    Warns ``CursorAhead`` when a cursor's high-water mark is newer than the
    newest stored record of that kind, and ``PendingPages`` when a fetch
    was interrupted.
    """
    out = Path(out)
    dataset = load_dataset(out)
    report = VerifyReport({name: len(getattr(dataset, name)) for name in _RECORD_TYPES})
    path = out / CURSOR_FILE
    if not path.exists():
        return report
    data = json.loads(path.read_text(encoding="utf-8"))
    for name, mark in sorted((data.get("high_water") or {}).items()):
        records = getattr(dataset, name, ())
        times = [getattr(r, _TIME_FIELDS[name]) for r in records]
        newest = max(times) if times else None
        if newest is None or parse_timestamp(mark) > newest:
            report.warnings.append(
                {
                    "kind": "CursorAhead",
                    "resource": name,
                    "cursor": mark,
                    "newest_record": None if newest is None else format_timestamp(newest),
                }
            )
    if data.get("pending"):
        report.warnings.append({"kind": "PendingPages", "pending": sorted(data["pending"])})
    return report
