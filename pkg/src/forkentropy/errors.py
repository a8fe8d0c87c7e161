"""Exception hierarchy shared by all modules.

Every error carries a machine-readable ``kind`` so the CLI can report it as
a single-line JSON object on stderr.
"""


class ForkEntropyError(Exception):
    kind = "error"

    def __init__(self, message="", **context):
        super().__init__(message)
        self.message = message
        self.context = context

    def to_json(self):
        return {"kind": self.kind, "message": self.message, "context": self.context}


class ValidationError(ForkEntropyError):
    """Base class for errors that map to CLI exit status 2."""

    kind = "validation_error"


class InvalidMatrix(ValidationError):
    kind = "invalid_matrix"


class DatasetNotFound(ValidationError):
    kind = "dataset_not_found"


class MalformedRecord(ValidationError):
    kind = "malformed_record"

    def __init__(self, file, line, reason):
        super().__init__(f"{file}:{line}: {reason}", file=str(file), line=line, reason=reason)
        self.file = file
        self.line = line
        self.reason = reason


class DanglingReference(ValidationError):
    kind = "dangling_reference"

    def __init__(self, ref_kind, ref_id):
        super().__init__(f"unknown {ref_kind} {ref_id!r}", ref_kind=ref_kind, id=ref_id)
        self.ref_kind = ref_kind
        self.ref_id = ref_id


class DuplicateKey(ValidationError):
    kind = "duplicate_key"

    def __init__(self, record_kind, key):
        super().__init__(f"duplicate {record_kind} key {key!r}", record_kind=record_kind, key=str(key))
        self.record_kind = record_kind
        self.key = key


class CycleDetected(ValidationError):
    kind = "cycle_detected"

    def __init__(self, repo_id):
        super().__init__(f"fork parent links form a cycle at repo {repo_id!r}", repo_id=repo_id)
        self.repo_id = repo_id


class EmptyPopulation(ForkEntropyError):
    kind = "empty_population"


class OpenPullRequest(ForkEntropyError):
    kind = "open_pull_request"


class DegenerateColumn(ForkEntropyError):
    kind = "degenerate_column"

    def __init__(self, name):
        super().__init__(f"column {name!r} has zero variance", column=name)
        self.name = name


class InsufficientData(ForkEntropyError):
    kind = "insufficient_data"


class IoFailure(ForkEntropyError):
    kind = "io_failure"


class FetchError(ForkEntropyError):
    kind = "fetch_error"


class RateLimited(FetchError):
    kind = "rate_limited"

    def __init__(self, retry_after, **context):
        super().__init__(f"rate limited; retry after {retry_after}s", retry_after=retry_after, **context)
        self.retry_after = retry_after


class AuthFailure(FetchError):
    kind = "auth_failure"


class UpstreamSchemaChange(FetchError):
    kind = "upstream_schema_change"

    def __init__(self, field, **context):
        super().__init__(f"upstream response lacks field {field!r}", field=field, **context)
        self.field = field


class PartialFetch(FetchError):
    kind = "partial_fetch"

    def __init__(self, resource, cursor, message=""):
        super().__init__(message or f"fetch of {resource} stopped early", resource=resource, cursor=cursor)
        self.resource = resource
        self.cursor = cursor
