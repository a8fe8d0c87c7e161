"""Run configuration: defaults, JSON config files and flag overrides."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, fields, replace

from .dataset import EXCLUSION_KEYWORDS, LintConfig
from .entropy import DEFAULT_GAMMA
from .errors import ValidationError
from .outcomes import HOT_FILE_REFERENCES, MetricsConfig
from .population import ROLE_CUTOFFS


class ConfigError(ValidationError):
    kind = "invalid_config"


@dataclass(frozen=True)
class RunConfig:
    datasets: tuple = ()
    out: str = "out"
    gamma: float = DEFAULT_GAMMA
    granularity: str = "month"
    hot_window_days: int = 90
    hot_file_reference: str = "interval_start"
    role_cutoff: str = "interval_end"
    outlier_fraction: float = 0.01
    min_active_forks: int = 100
    min_issues: int = 100
    min_external_prs: int | None = None
    exclusion_keywords: tuple = field(default=EXCLUSION_KEYWORDS)
    jobs: int = 1

    def __post_init__(self):
        if not (math.isfinite(self.gamma) and self.gamma > 0):
            raise ConfigError("gamma must be positive and finite", gamma=self.gamma)
        if self.granularity != "month":
            raise ConfigError("only calendar-month snapshots are supported", granularity=self.granularity)
        for name in ("hot_window_days", "min_active_forks", "min_issues", "jobs"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive", **{name: getattr(self, name)})
        if self.min_external_prs is not None and self.min_external_prs <= 0:
            raise ConfigError("min_external_prs must be positive", min_external_prs=self.min_external_prs)
        if not 0 <= self.outlier_fraction < 1:
            raise ConfigError("outlier_fraction must lie in [0, 1)", outlier_fraction=self.outlier_fraction)
        if self.hot_file_reference not in HOT_FILE_REFERENCES:
            raise ConfigError(f"hot_file_reference must be one of {list(HOT_FILE_REFERENCES)}")
        if self.role_cutoff not in ROLE_CUTOFFS:
            raise ConfigError(f"role_cutoff must be one of {list(ROLE_CUTOFFS)}")

    @classmethod
    def from_file(cls, path) -> "RunConfig":
        try:
            with open(path, encoding="utf-8") as fh:
                data = json.load(fh)
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc.strerror}", path=str(path)) from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config {path} is not valid JSON: {exc.msg}", path=str(path)) from None
        return cls().updated(data)

    def updated(self, values: dict) -> "RunConfig":
        """Copy with ``values`` applied; ``None`` values are ignored, unknown keys rejected."""
        known = {f.name for f in fields(self)}
        unknown = sorted(set(values) - known)
        if unknown:
            raise ConfigError(f"unknown config keys {unknown}")
        clean = {k: v for k, v in values.items() if v is not None}
        for key in ("datasets", "exclusion_keywords"):
            if key in clean:
                clean[key] = tuple(clean[key])
        return replace(self, **clean)

    def to_json(self) -> dict:
        data = asdict(self)
        data["datasets"] = list(self.datasets)
        data["exclusion_keywords"] = list(self.exclusion_keywords)
        return data

    def metrics_config(self) -> MetricsConfig:
        return MetricsConfig(self.gamma, self.hot_window_days, self.hot_file_reference, self.role_cutoff)

    def lint_config(self) -> LintConfig:
        return LintConfig(self.min_active_forks, self.min_issues, self.min_external_prs, tuple(self.exclusion_keywords))
