"""
Experiment configuration documents.

A run is described by one YAML (or JSON) document validated against
:class:`RunConfig`; unknown keys are rejected.  ``decoylab schema`` prints
the JSON schema.
"""

from __future__ import annotations

import json
from pathlib import Path
from typing import Literal

import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from .candidates import DEFAULT_SIZES, STRATEGY_KINDS, CandidateStrategy, sweep_sizes
from .recommend import RecommenderSpec

__all__ = ["RunConfig", "ConfigError", "load_config", "ValidationError"]


class ConfigError(ValueError):
    pass


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class DatasetSection(_Section):
    path: str
    format: str = "csv"
    name: str | None = None
    #: optional separately collected test set (e.g. Yahoo! R3 random ratings);
    #: when given, it replaces the cross-fold test sets
    test_path: str | None = None
    test_format: str | None = None


class SplitSection(_Section):
    folds: int = Field(5, ge=2)
    test_fraction: float = Field(0.2, gt=0, lt=1)
    min_ratings: int = Field(5, ge=2)


class AlgorithmSection(_Section):
    kind: Literal["item-knn", "user-knn", "implicit-mf", "popular", "random", "oracle"]
    mode: Literal["explicit", "implicit"] | None = None
    name: str | None = None
    params: dict = Field(default_factory=dict)

    @model_validator(mode="after")
    def _check_mode(self):
        RecommenderSpec(self.kind, self.mode, self.params)
        return self

    def to_spec(self, seed: int) -> RecommenderSpec:
        return RecommenderSpec(self.kind, self.mode, dict(self.params), seed, self.name)


class StrategySection(_Section):
    kinds: list[Literal["full", "uniform", "popularity-weighted"]] = list(STRATEGY_KINDS)
    sizes: list[int] = list(DEFAULT_SIZES)

    @field_validator("sizes")
    @classmethod
    def _nonneg(cls, v):
        if any(s < 0 for s in v):
            raise ValueError("decoy sizes must be non-negative")
        return v

    def expand(self) -> list[CandidateStrategy]:
        return sweep_sizes(self.kinds, self.sizes)


class MetricSection(_Section):
    cutoff: int = Field(10, ge=1)
    exclude_empty: bool = False


class LdaSection(_Section):
    n_features: int = Field(50, ge=1)
    alpha: float | list[float] = 0.1
    beta: float | list[float] = 0.05
    lam: float = Field(165.0, gt=0)
    n_users: int = Field(6040, ge=1)
    n_items: int = Field(3706, ge=2)


def _default_sim_algorithms() -> list[AlgorithmSection]:
    return [
        AlgorithmSection(kind="implicit-mf", name="ImplicitMF"),
        AlgorithmSection(kind="item-knn", mode="implicit", name="ItemKNN"),
        AlgorithmSection(kind="popular", name="Popular"),
        AlgorithmSection(kind="oracle", name="Oracle"),
        AlgorithmSection(kind="random", name="Random"),
    ]


class SimulationSection(_Section):
    trials: int = Field(500, ge=1)
    lda: LdaSection = LdaSection()
    observe_fraction: float = Field(0.2, gt=0, le=1)
    gamma: float = Field(1.0, ge=0)
    test_fraction: float = Field(0.2, gt=0, lt=1)
    min_ratings: int = Field(5, ge=2)
    n_decoys: int = Field(1000, ge=0)
    depth: int = Field(50, ge=1)
    metrics: list[Literal["ndcg", "recip_rank", "precision", "recall", "hit"]] = ["ndcg", "recip_rank"]
    #: also score sampled-candidate lists against the truth (not the default)
    truth_for_sampled: bool = False
    algorithms: list[AlgorithmSection] = Field(default_factory=_default_sim_algorithms)


class OutputSection(_Section):
    directory: str | None = None


def _default_algorithms() -> list[AlgorithmSection]:
    return [
        AlgorithmSection(kind="item-knn", mode="explicit", name="ItemKNN"),
        AlgorithmSection(kind="user-knn", mode="explicit", name="UserKNN"),
        AlgorithmSection(kind="implicit-mf", name="ImplicitMF"),
        AlgorithmSection(kind="popular", name="Popular"),
        AlgorithmSection(kind="random", name="Random"),
    ]


class RunConfig(_Section):
    seed: int = 42
    dataset: DatasetSection | None = None
    split: SplitSection = SplitSection()
    algorithms: list[AlgorithmSection] = Field(default_factory=_default_algorithms, min_length=1)
    strategies: StrategySection = StrategySection()
    metrics: MetricSection = MetricSection()
    simulation: SimulationSection | None = None
    output: OutputSection = OutputSection()

    @model_validator(mode="after")
    def _unique_names(self):
        for algos in (self.algorithms, self.simulation.algorithms if self.simulation else []):
            labels = [a.name or a.kind for a in algos]
            if len(set(labels)) != len(labels):
                raise ValueError(f"algorithm names must be unique: {labels}")
        return self

    def algorithm_specs(self) -> list[RecommenderSpec]:
        return [a.to_spec(self.seed) for a in self.algorithms]

    def resolved(self) -> dict:
        """The config as plain data, minus run-location details."""
        data = self.model_dump(mode="json")
        data.pop("output", None)
        return data

    def header_lines(self) -> list[str]:
        return [
            f"# decoylab {_version()}",
            f"# seed: {self.seed}",
            "# config: " + json.dumps(self.resolved(), sort_keys=True, separators=(",", ":")),
        ]


def _version() -> str:
    from . import __version__

    return __version__


def load_config(path: str | Path, **overrides) -> RunConfig:
    """
    Read and validate a config document.  Keyword overrides replace
    top-level keys (``seed=7``) or nested ones (``simulation__trials=20``).

    Raises:
        ConfigError: unreadable file or schema violation.
    """
    path = Path(path)
    try:
        data = yaml.safe_load(path.read_text()) or {}
    except (OSError, yaml.YAMLError) as e:
        raise ConfigError(f"cannot read config {path}: {e}") from e
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: config must be a mapping")
    for key, value in overrides.items():
        if value is None:
            continue
        parts = key.split("__")
        node = data
        for p in parts[:-1]:
            if not isinstance(node.get(p), dict):
                node[p] = {}
            node = node[p]
        node[parts[-1]] = value
    try:
        return RunConfig.model_validate(data)
    except ValidationError as e:
        raise ConfigError(f"{path}: invalid config\n{e}") from e


def json_schema() -> dict:
    return RunConfig.model_json_schema()

