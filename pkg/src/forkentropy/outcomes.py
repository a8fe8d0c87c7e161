"""Per-snapshot outcome and control variables.

Outcomes are external productivity, the external pull-request acceptance
rate and the number of bug reports. Pull-request merge status follows a
three-rule chain because the forge's own ``merged`` flag misses requests
integrated outside its interface.
"""

from __future__ import annotations

import bisect
import re
from dataclasses import dataclass, fields
from datetime import datetime, timedelta

from nltk.stem.porter import PorterStemmer

from .dataset import EventDataset, PullRequestRecord
from .entropy import DEFAULT_GAMMA, quadratic_entropy
from .errors import EmptyPopulation, OpenPullRequest
from .population import Snapshot, _roles, build_matrix, build_pr_filtered_matrix, role_cutoff_time

CLOSING_PHRASE_RE = re.compile(r"\b(clos(e|es|ed)|fix(es|ed)?|resolv(e|es|ed))\b[\s:]*#([0-9]+)", re.IGNORECASE)
MERGE_COMMENT_RE = re.compile(r"(merg|apply|appl|pull|push|integrat|land|cherry(-|\s+)pick|squash)(ing|i?ed)", re.IGNORECASE)
SHA_REF_RE = re.compile(r"\b[0-9a-f]{7,40}\b", re.IGNORECASE)

BUG_KEYWORDS = ("defect", "error", "bug", "issue", "mistake", "incorrect", "fault", "flaw")

MERGE_REASONS = ("forge_merged_action", "closing_commit_phrase", "comment_commit_reference", "not_merged")

HOT_FILE_REFERENCES = ("interval_start", "pr_created")

_stemmer = PorterStemmer(mode=PorterStemmer.ORIGINAL_ALGORITHM)
_STEMMED_KEYWORDS = frozenset(_stemmer.stem(k) for k in BUG_KEYWORDS)
_TOKEN_RE = re.compile(r"[0-9a-z]+")


@dataclass(frozen=True)
class MetricsConfig:
    gamma: float = DEFAULT_GAMMA
    hot_window_days: int = 90
    hot_file_reference: str = "interval_start"
    role_cutoff: str = "interval_end"

    def __post_init__(self):
        if self.hot_window_days <= 0:
            raise ValueError("hot_window_days must be positive")
        if self.hot_file_reference not in HOT_FILE_REFERENCES:
            raise ValueError(f"hot_file_reference must be one of {HOT_FILE_REFERENCES}")


@dataclass(frozen=True)
class MergeVerdict:
    pr_id: object
    merged: bool
    reason: str


class SourceHistory:
    """The source repository's commit shas with prefix lookup and ``#n`` closing references."""

    def __init__(self, shas, messages=()):
        self.shas = frozenset(s.lower() for s in shas)
        self._sorted = sorted(self.shas)
        self.closed_numbers = frozenset(
            str(int(m.groups()[-1])) for msg in messages for m in CLOSING_PHRASE_RE.finditer(msg)
        )

    @classmethod
    def from_dataset(cls, dataset: EventDataset) -> "SourceHistory":
        def build():
            commits = dataset.index.source_commits
            return cls([c.sha for c in commits], [c.message for c in commits])

        return dataset.index.memo("source_history", build)

    def has_prefix(self, ref: str) -> bool:
        ref = ref.lower()
        i = bisect.bisect_left(self._sorted, ref)
        return i < len(self._sorted) and self._sorted[i].startswith(ref)

    def closes(self, number: str) -> bool:
        return number.isdigit() and str(int(number)) in self.closed_numbers


def _comment_references_merge(comment: str, history: SourceHistory) -> bool:
    if not MERGE_COMMENT_RE.search(comment):
        return False
    return any(history.has_prefix(m.group(0)) for m in SHA_REF_RE.finditer(comment))


def detect_merged(pr: PullRequestRecord, source_history, dataset: EventDataset | None = None) -> MergeVerdict:
    """Decide whether a closed pull request was integrated.

    Rules are tried in order and the first that fires is the reason:

    1. the forge recorded a merge action;
    2. a source-history commit message closes ``#<number>`` of this request;
    3. one of the last three comments both reads as a merge
       (``merged``, ``cherry-picked``, ``squashed``, ...) and names a sha
       present in the source history.

    ``source_history`` is a :class:`SourceHistory` or a plain set of shas;
    with a plain set, commit messages for rule 2 come from ``dataset``.
    """
    if pr.closed_at is None:
        raise OpenPullRequest(f"pull request {pr.pr_id!r} is still open", pr_id=pr.pr_id)
    if not isinstance(source_history, SourceHistory):
        shas = set(source_history)
        messages = [c.message for c in dataset.commits if c.sha in shas] if dataset is not None else []
        source_history = SourceHistory(shas, messages)
    if pr.merged_action:
        return MergeVerdict(pr.pr_id, True, "forge_merged_action")
    if source_history.closes(pr.number):
        return MergeVerdict(pr.pr_id, True, "closing_commit_phrase")
    if any(_comment_references_merge(c, source_history) for c in pr.last_comments[-3:]):
        return MergeVerdict(pr.pr_id, True, "comment_commit_reference")
    return MergeVerdict(pr.pr_id, False, "not_merged")


def is_bug_report(issue) -> bool:
    """True if the title or a label holds a bug keyword after lowercasing and Porter stemming."""
    texts = [issue.title, *issue.labels]
    for text in texts:
        for token in _TOKEN_RE.findall(text.lower()):
            if _stemmer.stem(token) in _STEMMED_KEYWORDS:
                return True
    return False


class OutcomeIndex:
    """Merge verdicts and merged-PR timeline for one dataset."""

    def __init__(self, dataset: EventDataset):
        history = SourceHistory.from_dataset(dataset)
        src = dataset.source_repo_id
        network = dataset.index.fork_by_id
        self.verdicts = {}
        for pr in dataset.pulls:
            if pr.closed_at is not None:
                self.verdicts[pr.pr_id] = detect_merged(pr, history)
        # pull requests from the fork network into the source repository
        self.upstream = tuple(pr for pr in dataset.pulls if pr.target_repo_id == src and pr.source_repo_id in network)
        merged = [pr for pr in dataset.pulls if self.is_merged(pr)]
        merged.sort(key=lambda pr: pr.closed_at)
        self.merged = merged
        self._merged_times = [pr.closed_at for pr in merged]
        first = {}
        for pr in merged:
            if pr.target_repo_id == src:
                first.setdefault(pr.author_id, pr.closed_at)
        self.first_merge_by_author = first

    def is_merged(self, pr) -> bool:
        v = self.verdicts.get(pr.pr_id)
        return v is not None and v.merged

    def merged_between(self, start, end):
        lo = bisect.bisect_left(self._merged_times, start)
        hi = bisect.bisect_left(self._merged_times, end)
        return self.merged[lo:hi]


def _outcome_index(dataset):
    return dataset.index.memo("outcomes", lambda: OutcomeIndex(dataset))


def _external(dataset, snapshot, role_cutoff):
    roles = _roles(dataset)
    as_of = role_cutoff_time(snapshot.interval_start, snapshot.interval_end, role_cutoff)
    return lambda user: roles.is_external(user, as_of)


def _closed_external(dataset, snapshot, role_cutoff):
    is_ext = _external(dataset, snapshot, role_cutoff)
    idx = _outcome_index(dataset)
    return [
        pr
        for pr in idx.upstream
        if pr.closed_at is not None and snapshot.contains(pr.closed_at) and is_ext(pr.author_id)
    ]


def _opened_external(dataset, snapshot, role_cutoff):
    is_ext = _external(dataset, snapshot, role_cutoff)
    return [pr for pr in _outcome_index(dataset).upstream if snapshot.contains(pr.created_at) and is_ext(pr.author_id)]


def external_productivity(snapshot: Snapshot, dataset: EventDataset, role_cutoff: str = "interval_end") -> int:
    """Distinct commits carried by external pull requests merged (closed) in the interval."""
    idx = _outcome_index(dataset)
    shas = set()
    for pr in _closed_external(dataset, snapshot, role_cutoff):
        if idx.is_merged(pr):
            shas.update(pr.commit_shas)
    return len(shas)


def acceptance_rate(snapshot: Snapshot, dataset: EventDataset, role_cutoff: str = "interval_end"):
    """``(merged, closed, rate)`` over external pull requests closed in the interval.

    ``rate`` is ``None`` when nothing was closed.
    """
    idx = _outcome_index(dataset)
    closed = _closed_external(dataset, snapshot, role_cutoff)
    merged = sum(1 for pr in closed if idx.is_merged(pr))
    return merged, len(closed), (merged / len(closed) if closed else None)


def count_bug_reports(snapshot: Snapshot, dataset: EventDataset) -> int:
    return sum(1 for issue in dataset.issues if snapshot.contains(issue.created_at) and is_bug_report(issue))


def hot_files(dataset: EventDataset, at_time: datetime, window_days: int = 90) -> set:
    """Paths touched by pull requests merged in ``[at_time - window_days, at_time)``."""
    idx = _outcome_index(dataset)
    src = dataset.source_repo_id
    paths = set()
    for pr in idx.merged_between(at_time - timedelta(days=window_days), at_time):
        if pr.target_repo_id == src:
            paths.update(f.path for f in pr.files)
    return paths


def _ratio(hits, total):
    return hits / total if total else None


def control_variables(snapshot: Snapshot, dataset: EventDataset, config: MetricsConfig | None = None) -> dict:
    """Controls for one snapshot, except the matrix shape (see :func:`snapshot_metrics`)."""
    config = config or MetricsConfig()
    idx = _outcome_index(dataset)
    opened = _opened_external(dataset, snapshot, config.role_cutoff)
    authors = {pr.author_id for pr in opened}
    old = sum(1 for a in authors if a in idx.first_merge_by_author and idx.first_merge_by_author[a] < snapshot.interval_start)
    with_tests = sum(1 for pr in opened if any("test" in f.path.lower() for f in pr.files))
    if config.hot_file_reference == "interval_start":
        hot = hot_files(dataset, snapshot.interval_start, config.hot_window_days)
        touching = sum(1 for pr in opened if any(f.path in hot for f in pr.files))
    else:
        touching = sum(
            1
            for pr in opened
            if any(f.path in hot_files(dataset, pr.created_at, config.hot_window_days) for f in pr.files)
        )
    created = dataset.project.created_at
    return {
        "project_age_days": (snapshot.interval_end - created).days,
        "num_stars": sum(1 for s in dataset.stars if s.starred_at < snapshot.interval_end),
        "ratio_old_contributors": _ratio(old, len(authors)),
        "ratio_prs_with_tests": _ratio(with_tests, len(opened)),
        "ratio_prs_touch_hot_files": _ratio(touching, len(opened)),
    }


@dataclass(frozen=True)
class SnapshotMetrics:
    project_id: str
    month: str
    fork_entropy: float | None
    fork_entropy_pr_variant: float | None
    external_productivity: int
    prs_merged: int
    prs_closed: int
    acceptance_rate: float | None
    bug_reports: int
    num_forks: int
    num_files: int
    project_age_days: int
    num_stars: int
    ratio_old_contributors: float | None
    ratio_prs_with_tests: float | None
    ratio_prs_touch_hot_files: float | None

    def as_dict(self):
        return {f.name: getattr(self, f.name) for f in fields(self)}


METRIC_COLUMNS = tuple(f.name for f in fields(SnapshotMetrics))


def snapshot_metrics(snapshot: Snapshot, dataset: EventDataset, config: MetricsConfig | None = None) -> SnapshotMetrics:
    """Fork entropy (both matrix variants), outcomes and controls for one month.

    Empty populations give ``None`` entropies and a ``0 x 0`` shape.
    """
    config = config or MetricsConfig()
    entropy = pr_entropy = None
    m = n = 0
    if snapshot.population:
        matrix = build_matrix(dataset, snapshot)
        result = quadratic_entropy(matrix, config.gamma)
        entropy, m, n = result.value, result.m, result.n
        try:
            pr_entropy = quadratic_entropy(build_pr_filtered_matrix(dataset, snapshot), config.gamma).value
        except EmptyPopulation:
            pr_entropy = None
    merged, closed, rate = acceptance_rate(snapshot, dataset, config.role_cutoff)
    controls = control_variables(snapshot, dataset, config)
    return SnapshotMetrics(
        project_id=snapshot.project_id,
        month=snapshot.month,
        fork_entropy=entropy,
        fork_entropy_pr_variant=pr_entropy,
        external_productivity=external_productivity(snapshot, dataset, config.role_cutoff),
        prs_merged=merged,
        prs_closed=closed,
        acceptance_rate=rate,
        bug_reports=count_bug_reports(snapshot, dataset),
        num_forks=m,
        num_files=n,
        **controls,
    )


def count_external_prs(dataset: EventDataset) -> int:
    """Pull requests into the source repository whose authors were external when opening them."""
    roles = _roles(dataset)
    return sum(1 for pr in _outcome_index(dataset).upstream if roles.is_external(pr.author_id, pr.created_at))
