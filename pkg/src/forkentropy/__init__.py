"""Fork entropy: diversity of fork modifications and the project outcomes it relates to."""

from .dataset import EventDataset, build_dataset, fork_network, lint_dataset, load_dataset, write_dataset
from .entropy import (
    EntropyResult,
    FileModificationMatrix,
    FileModVector,
    NewForkAssessment,
    classify_new_fork,
    entropy_after_add,
    l1_distance,
    mean_distance_to_population,
    pair_distance,
    quadratic_entropy,
)
from .errors import ForkEntropyError
from .export import correlation_summary, export, prepare_table
from .outcomes import SnapshotMetrics, detect_merged, is_bug_report, snapshot_metrics
from .population import build_matrix, build_pr_filtered_matrix, build_snapshots, classify_contributor

__version__ = "0.1.0"

__all__ = [
    "EntropyResult",
    "EventDataset",
    "FileModVector",
    "FileModificationMatrix",
    "ForkEntropyError",
    "NewForkAssessment",
    "SnapshotMetrics",
    "build_dataset",
    "build_matrix",
    "build_pr_filtered_matrix",
    "build_snapshots",
    "classify_contributor",
    "classify_new_fork",
    "correlation_summary",
    "detect_merged",
    "entropy_after_add",
    "export",
    "fork_network",
    "is_bug_report",
    "l1_distance",
    "lint_dataset",
    "load_dataset",
    "mean_distance_to_population",
    "pair_distance",
    "prepare_table",
    "quadratic_entropy",
    "snapshot_metrics",
    "write_dataset",
]
