r"""Fork entropy: Rao's quadratic entropy over sparse file modification rows.

A fork population in one snapshot is an ``m x n`` matrix whose row ``i``
counts the lines fork ``i`` changed in each of ``n`` files. Two rows are
compared with the Laplacian-kernel distance

.. math::

   D(a, b) = 1 - \exp(-\gamma \lVert a - b \rVert_1)

and the population diversity is the mean distance over all ``m**2``
ordered pairs,

.. math::

   H(M) = \frac{1}{m^2} \sum_i \sum_j D(c_i, c_j).

Rows are stored sparsely as sorted ``(column, count)`` pairs. All functions
here are pure and safe to call from any number of threads.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np

from .errors import InvalidMatrix

DEFAULT_GAMMA = 1.0

# rows per block when materialising pairwise intersections
_BLOCK_ROWS = 512


@dataclass(frozen=True)
class FileModVector:
    """One fork's changed-line counts, as strictly ascending ``(column, count)`` pairs."""

    fork_id: object
    entries: tuple

    def __post_init__(self):
        entries = tuple((int(c), int(v)) for c, v in self.entries)
        if not entries:
            raise InvalidMatrix("a file modification vector needs at least one entry", fork_id=self.fork_id)
        prev = -1
        for col, count in entries:
            if col < 0:
                raise InvalidMatrix(f"negative column id {col}", fork_id=self.fork_id)
            if col <= prev:
                raise InvalidMatrix("entries must be strictly ascending by column id", fork_id=self.fork_id)
            if count < 1:
                raise InvalidMatrix(f"changed_lines must be >= 1, got {count}", fork_id=self.fork_id)
            prev = col
        object.__setattr__(self, "entries", entries)

    @classmethod
    def from_mapping(cls, fork_id, counts: Mapping[int, int]) -> "FileModVector":
        return cls(fork_id, tuple(sorted((c, v) for c, v in counts.items() if v)))

    @property
    def columns(self):
        return tuple(c for c, _ in self.entries)

    def total(self) -> int:
        return sum(v for _, v in self.entries)


@dataclass(frozen=True)
class FileModificationMatrix:
    """Stacked fork rows plus the file-path to column-id bijection of one snapshot."""

    snapshot_ref: object
    rows: tuple
    file_index: Mapping[str, int] = field(default_factory=dict)

    def __post_init__(self):
        rows = tuple(self.rows)
        if not rows:
            raise InvalidMatrix("a file modification matrix needs at least one row", snapshot_ref=self.snapshot_ref)
        index = dict(self.file_index)
        if len(set(index.values())) != len(index):
            raise InvalidMatrix("file_index must map paths to distinct column ids")
        used = set()
        for row in rows:
            if not isinstance(row, FileModVector):
                raise InvalidMatrix("rows must be FileModVector instances")
            used.update(row.columns)
        if used != set(index.values()):
            raise InvalidMatrix(
                "column ids in rows and file_index differ",
                only_in_rows=sorted(used - set(index.values()))[:10],
                only_in_index=sorted(set(index.values()) - used)[:10],
            )
        object.__setattr__(self, "rows", rows)
        object.__setattr__(self, "file_index", index)

    @classmethod
    def from_cells(cls, snapshot_ref, cells: Mapping[object, Mapping[str, int]]) -> "FileModificationMatrix":
        """Build a matrix from ``{fork_id: {path: changed_lines}}``.

        Zero cells are dropped and forks with no nonzero cell are omitted.
        Columns are numbered by sorted path, rows keep the mapping's order.
        """
        paths = sorted({p for counts in cells.values() for p, v in counts.items() if v})
        index = {p: i for i, p in enumerate(paths)}
        rows = []
        for fork_id, counts in cells.items():
            entries = sorted((index[p], v) for p, v in counts.items() if v)
            if entries:
                rows.append(FileModVector(fork_id, tuple(entries)))
        return cls(snapshot_ref, tuple(rows), index)

    @property
    def m(self) -> int:
        return len(self.rows)

    @property
    def n(self) -> int:
        return len(self.file_index)

    def paths_by_column(self):
        return {c: p for p, c in self.file_index.items()}

    def to_dense(self) -> np.ndarray:
        cols = sorted(self.file_index.values())
        pos = {c: i for i, c in enumerate(cols)}
        dense = np.zeros((self.m, self.n), dtype=np.int64)
        for i, row in enumerate(self.rows):
            for c, v in row.entries:
                dense[i, pos[c]] = v
        return dense

    def with_row(self, row: FileModVector) -> "FileModificationMatrix":
        """Return a copy extended by ``row``; its columns must already be indexed."""
        return FileModificationMatrix(self.snapshot_ref, self.rows + (row,), self.file_index)


@dataclass(frozen=True)
class EntropyResult:
    snapshot_ref: object
    m: int
    n: int
    gamma: float
    value: float


@dataclass(frozen=True)
class NewForkAssessment:
    mean_distance: float
    entropy_before: float
    entropy_after: float
    delta: float
    approximate_delta: float
    label: str


def _check_gamma(gamma):
    gamma = float(gamma)
    if not math.isfinite(gamma) or gamma <= 0:
        raise ValueError(f"gamma must be a positive finite number, got {gamma!r}")
    return gamma


def l1_distance(a: FileModVector, b: FileModVector) -> int:
    """L1 distance between two sparse rows by merge-join over their sorted entries."""
    ea, eb = a.entries, b.entries
    i = j = 0
    total = 0
    while i < len(ea) and j < len(eb):
        ca, va = ea[i]
        cb, vb = eb[j]
        if ca == cb:
            total += abs(va - vb)
            i += 1
            j += 1
        elif ca < cb:
            total += va
            i += 1
        else:
            total += vb
            j += 1
    total += sum(v for _, v in ea[i:])
    total += sum(v for _, v in eb[j:])
    return total


def pair_distance(a: FileModVector, b: FileModVector, gamma: float = DEFAULT_GAMMA) -> float:
    """Laplacian-kernel distance ``1 - exp(-gamma * |a - b|_1)``, in ``[0, 1)``."""
    gamma = _check_gamma(gamma)
    return -math.expm1(-gamma * l1_distance(a, b))


def rao_quadratic_entropy(items: Sequence, distance: Callable[[object, object], float]) -> float:
    """Mean of ``distance`` over all ordered pairs of ``items``.

    ``distance`` must be symmetric and vanish on the diagonal. This is the
    generic seam for kernels other than the Laplacian one; it evaluates each
    unordered pair once and doubles the compensated sum.
    """
    m = len(items)
    if m == 0:
        raise ValueError("quadratic entropy of an empty population is undefined")
    total = math.fsum(distance(items[i], items[j]) for i in range(m) for j in range(i + 1, m))
    return 2.0 * total / (m * m)


def _column_lists(rows):
    """Map each column id to parallel (row indices, counts) arrays."""
    by_col = {}
    for i, row in enumerate(rows):
        for c, v in row.entries:
            by_col.setdefault(c, ([], []))
            by_col[c][0].append(i)
            by_col[c][1].append(v)
    return {c: (np.asarray(r, dtype=np.intp), np.asarray(v, dtype=np.int64)) for c, (r, v) in by_col.items()}


def _upper_pair_distances(rows, gamma):
    """Yield, block by block, the kernel distances of every pair ``i < j``.

    For non-negative rows ``|a - b|_1 = |a|_1 + |b|_1 - 2 * sum(min(a, b))``.
    The min-overlap term only involves shared columns, so it is accumulated
    per column from an inverted index. All L1 values are exact integers.
    """
    m = len(rows)
    totals = np.fromiter((r.total() for r in rows), dtype=np.int64, count=m)
    columns = _column_lists(rows)
    for start in range(0, m - 1, _BLOCK_ROWS):
        stop = min(start + _BLOCK_ROWS, m)
        overlap = np.zeros((stop - start, m), dtype=np.int64)
        touched = {}
        for local, row in enumerate(rows[start:stop]):
            for c, v in row.entries:
                touched.setdefault(c, ([], []))
                touched[c][0].append(local)
                touched[c][1].append(v)
        for c, (locals_, vals) in touched.items():
            col_rows, col_vals = columns[c]
            overlap[np.ix_(locals_, col_rows)] += np.minimum.outer(np.asarray(vals, dtype=np.int64), col_vals)
        l1 = totals[start:stop, None] + totals[None, :] - 2 * overlap
        iu, ju = np.triu_indices(stop - start, k=1, m=m - start)
        block_l1 = l1[:, start:][iu, ju]
        yield -np.expm1(-gamma * block_l1.astype(np.float64))


def quadratic_entropy(matrix: FileModificationMatrix, gamma: float = DEFAULT_GAMMA) -> EntropyResult:
    """Fork entropy of a file modification matrix.

    Parameters
    ----------
    matrix : FileModificationMatrix
        Validated fork population.
    gamma : float, optional
        Kernel sensitivity, ``1`` by default.

    Returns
    -------
    EntropyResult
        ``value`` lies in ``[0, 1)`` and is exactly ``0`` iff all rows are equal.

    Notes
    -----
    Unordered pair distances are summed with :func:`math.fsum`, which is
    correctly rounded, so the result does not depend on row order.
    """
    gamma = _check_gamma(gamma)
    m = matrix.m
    if m == 1:
        value = 0.0
    else:
        total = math.fsum(x for block in _upper_pair_distances(matrix.rows, gamma) for x in block.tolist())
        value = 2.0 * total / (m * m)
    return EntropyResult(matrix.snapshot_ref, m, matrix.n, gamma, value)


def sum_distances_to(matrix: FileModificationMatrix, new_row: FileModVector, gamma: float = DEFAULT_GAMMA) -> float:
    gamma = _check_gamma(gamma)
    return math.fsum(-math.expm1(-gamma * l1_distance(row, new_row)) for row in matrix.rows)


def mean_distance_to_population(
    matrix: FileModificationMatrix, new_row: FileModVector, gamma: float = DEFAULT_GAMMA
) -> float:
    """Average kernel distance from ``new_row`` to every row of ``matrix``."""
    return sum_distances_to(matrix, new_row, gamma) / matrix.m


def entropy_after_add(entropy_before: float, m: int, sum_new_distances: float) -> float:
    """Entropy once a row is appended, from the old entropy and its distances to the old rows.

    ``sum_new_distances`` is the sum of distances from the new row to the
    ``m`` existing rows.
    """
    if m < 1:
        raise ValueError(f"m must be >= 1, got {m}")
    if sum_new_distances < 0:
        raise ValueError("sum of distances must be non-negative")
    k = (m + 1) ** 2
    return (m * m * entropy_before + 2.0 * sum_new_distances) / k


def exact_delta(entropy_before: float, m: int, mean_distance: float) -> float:
    return (2 * m * mean_distance - (2 * m + 1) * entropy_before) / (m + 1) ** 2


def approximate_delta(entropy_before: float, m: int, mean_distance: float) -> float:
    """The ``1/(m + 0.5) ~ 1/m`` approximation of the entropy change; for comparison only."""
    return (2 * m + 1) / (m + 1) ** 2 * (mean_distance - entropy_before)


def classify_new_fork(
    matrix: FileModificationMatrix, new_row: FileModVector, gamma: float = DEFAULT_GAMMA
) -> NewForkAssessment:
    """Label a prospective fork as redundant, distinctive or neutral for ``matrix``.

    The label compares the row's mean distance to the population with the
    population's current entropy. ``delta`` uses the exact change, whose
    sign is that of ``2m * mean - (2m + 1) * entropy``.
    """
    m = matrix.m
    before = quadratic_entropy(matrix, gamma).value
    s = sum_distances_to(matrix, new_row, gamma)
    mean = s / m
    after = entropy_after_add(before, m, s)
    delta = (2.0 * s - (2 * m + 1) * before) / (m + 1) ** 2
    if mean < before:
        label = "redundant"
    elif mean > before:
        label = "distinctive"
    else:
        label = "neutral"
    return NewForkAssessment(mean, before, after, delta, approximate_delta(before, m, mean), label)

