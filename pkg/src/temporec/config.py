"""Experiment configuration: one TOML file, validated up front.

Every section has defaults, so an empty file is a valid config (a synthetic
drift corpus, strict-cutoff development split and a relevance-only VAE).
"""

from __future__ import annotations

import hashlib
import json
import sys
from pathlib import Path
from typing import Any, Literal, Mapping, Optional

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .corpus import ColumnSpec, PreprocessOptions
from .metrics import RECENCY_BASE, RECENCY_STEEPNESS, RECENCY_THRESHOLD
from .models.vae import OBJECTIVES
from .protocols import PHASES, PROTOCOLS, SplitParams
from .seeding import derive_seed
from .synthetic import DAY, DriftCorpusSpec
from .trainer import TrainConfig

PROTOCOL_ALIASES = {"cutoff": "strict_cutoff", "strict": "strict_cutoff", "deployment": "deployment_ready"}
MODELS = ("popularity", "svd", "vae")


class ConfigError(ValueError):
    pass


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class ColumnsConfig(_Section):
    user: str = "user_id"
    item: str = "item_id"
    rating: Optional[str] = "rating"
    timestamp: Optional[str] = "timestamp"

    def spec(self) -> ColumnSpec:
        return ColumnSpec(self.user, self.item, self.rating or None, self.timestamp or None)


class SyntheticConfig(_Section):
    n_users: int = Field(2000, ge=1)
    n_items: int = Field(500, ge=1)
    horizon_days: float = Field(730.0, gt=0)
    launch_fraction: float = Field(0.6, ge=0, le=1)
    decay: float = Field(0.0, ge=0)
    affinity: float = Field(8.0, ge=0)
    affinity_shape: float = Field(4.0, gt=0)
    n_genres: int = Field(10, ge=1)
    events_mean: float = 30.0
    min_events: int = Field(8, ge=1)
    burst_fraction: float = Field(0.2, ge=0, le=1)
    # None: derived from the experiment's root seed
    seed: Optional[int] = None

    def spec(self, root_seed: int) -> DriftCorpusSpec:
        d = self.model_dump()
        seed = d.pop("seed")
        horizon = int(round(d.pop("horizon_days") * DAY))
        return DriftCorpusSpec(
            horizon=horizon, seed=derive_seed(root_seed, "corpus") if seed is None else seed, **d
        )


class CorpusConfig(_Section):
    source: Literal["synthetic", "csv", "snapshot"] = "synthetic"
    path: Optional[str] = None
    columns: ColumnsConfig = ColumnsConfig()
    strict: bool = True
    rating_scale: Optional[tuple[float, float]] = None
    synthetic: SyntheticConfig = SyntheticConfig()

    @model_validator(mode="after")
    def _path_needed(self):
        if self.source != "synthetic" and not self.path:
            raise ValueError(f"corpus.source = {self.source!r} needs corpus.path")
        return self

    @property
    def has_timestamps(self) -> bool:
        return self.source != "csv" or bool(self.columns.timestamp)


class PreprocessConfig(_Section):
    binarize_threshold: Optional[float] = None
    min_user_deg: int = Field(5, ge=1)
    min_item_deg: int = Field(5, ge=1)
    window: Optional[tuple[int, int]] = None

    @field_validator("window")
    @classmethod
    def _ordered(cls, v):
        if v is not None and v[0] > v[1]:
            raise ValueError("window start is after its end")
        return v

    def options(self) -> PreprocessOptions:
        return PreprocessOptions(self.binarize_threshold, self.min_user_deg, self.min_item_deg, self.window)


class SplitConfig(_Section):
    protocol: str = "strict_cutoff"
    phase: str = "development"
    holdout_fraction: float = Field(0.2, gt=0, lt=1)
    val_user_fraction: float = Field(0.05, gt=0, lt=1)
    cutoff_quantile: float = Field(0.9, gt=0, lt=1)
    cutoff_time: Optional[int] = None
    val_cutoff_time: Optional[int] = None
    test_design: Literal["temporal", "user_split"] = "temporal"
    user_fractions: tuple[float, float, float] = (0.8, 0.1, 0.1)

    @field_validator("protocol", "phase")
    @classmethod
    def _known(cls, v: str, info):
        v = PROTOCOL_ALIASES.get(v, v)
        allowed = PROTOCOLS if info.field_name == "protocol" else PHASES
        if v not in allowed:
            raise ValueError(f"unknown {info.field_name} {v!r}; expected one of {', '.join(allowed)}")
        return v

    @field_validator("user_fractions")
    @classmethod
    def _sums_to_one(cls, v):
        if min(v) <= 0 or abs(sum(v) - 1.0) > 1e-9:
            raise ValueError("user_fractions must be positive and sum to 1")
        return v

    def params(self, seed: int) -> SplitParams:
        d = self.model_dump(exclude={"protocol", "phase"})
        return SplitParams(seed=seed, **d)


class ModelConfig(_Section):
    name: Literal["popularity", "svd", "vae"] = "vae"
    # svd
    rank: int = Field(100, ge=1)
    power_iters: int = Field(4, ge=0)
    oversample: int = Field(10, ge=0)
    # vae
    epochs: int = Field(100, ge=1)
    batch_size: int = Field(100, ge=1)
    lr: float = Field(1e-3, gt=0)
    optimizer: Literal["adam", "sgd"] = "adam"
    hidden: int = Field(200, ge=1)
    latent: int = Field(64, ge=1)
    dropout: float = Field(0.5, ge=0, lt=1)
    beta_max: float = Field(0.2, ge=0)
    anneal_fraction: float = Field(0.4, ge=0, le=1)
    kl_in_recency: bool = False
    empirical_batches: int = Field(10, ge=1)


class MetricsConfig(_Section):
    ks: tuple[int, ...] = (20,)
    pareto_k: int = 20

    @model_validator(mode="after")
    def _ks(self):
        if not self.ks or min(self.ks) < 1:
            raise ValueError("metrics.ks must be a nonempty list of positive integers")
        if len(set(self.ks)) != len(self.ks):
            raise ValueError("metrics.ks has duplicates")
        if self.pareto_k not in self.ks:
            raise ValueError(f"metrics.pareto_k = {self.pareto_k} is not one of metrics.ks")
        return self


class RecencyConfig(_Section):
    threshold: float = Field(RECENCY_THRESHOLD, ge=0, le=1)
    base: float = Field(RECENCY_BASE, gt=0, le=1)
    steepness: float = Field(RECENCY_STEEPNESS, ge=0)


class ExperimentConfig(_Section):
    name: str = "experiment"
    seed: int = Field(0, ge=0)
    out: Optional[str] = None
    objectives: tuple[str, ...] = ("relevance",)
    corpus: CorpusConfig = CorpusConfig()
    preprocess: PreprocessConfig = PreprocessConfig()
    split: SplitConfig = SplitConfig()
    model: ModelConfig = ModelConfig()
    metrics: MetricsConfig = MetricsConfig()
    recency: RecencyConfig = RecencyConfig()

    @model_validator(mode="after")
    def _consistent(self):
        if not self.objectives:
            raise ValueError("objectives must not be empty")
        for obj in self.objectives:
            if obj not in OBJECTIVES:
                raise ValueError(f"unknown objective {obj!r}; expected one of {', '.join(OBJECTIVES)}")
        if len(set(self.objectives)) != len(self.objectives):
            raise ValueError("objectives has duplicates")
        if self.model.name != "vae" and tuple(self.objectives) != ("relevance",):
            raise ValueError(f"model {self.model.name!r} only supports the relevance objective")
        if not self.corpus.has_timestamps:
            if "recency" in self.objectives:
                raise ValueError("the recency objective needs item recency weights, which need timestamps")
            if self.split.protocol != "traditional":
                raise ValueError(f"protocol {self.split.protocol!r} needs timestamps")
            if self.split.phase == "development" and self.split.test_design == "temporal":
                raise ValueError("a temporal test split needs timestamps; use split.test_design = 'user_split'")
        return self

    def train_config(self, seed: int) -> TrainConfig:
        m = self.model
        return TrainConfig(
            epochs=m.epochs, batch_size=m.batch_size, lr=m.lr, objectives=tuple(self.objectives), seed=seed,
            ks=tuple(self.metrics.ks), pareto_k=self.metrics.pareto_k, optimizer=m.optimizer,
            hidden=m.hidden, latent=m.latent, dropout=m.dropout, beta_max=m.beta_max,
            anneal_fraction=m.anneal_fraction, kl_in_recency=m.kl_in_recency,
            empirical_batches=m.empirical_batches,
        )

    def digest(self) -> str:
        """Hash of everything that affects results (the output directory does not)."""
        payload = json.dumps(self.model_dump(mode="json", exclude={"out"}), sort_keys=True)
        return hashlib.sha256(payload.encode("utf-8")).hexdigest()


def _error(exc: ValidationError, source: str) -> ConfigError:
    lines = []
    for err in exc.errors():
        where = ".".join(str(p) for p in err["loc"]) or "<root>"
        lines.append(f"{where}: {err['msg'].removeprefix('Value error, ')}")
    return ConfigError(f"{source}: invalid config\n  " + "\n  ".join(lines))


def config_from_dict(data: Mapping[str, Any], source: str = "<config>") -> ExperimentConfig:
    try:
        return ExperimentConfig.model_validate(dict(data))
    except ValidationError as exc:
        raise _error(exc, source) from None


def load_config(path: str | Path | None) -> ExperimentConfig:
    if path is None:
        return ExperimentConfig()
    path = Path(path)
    try:
        with path.open("rb") as fh:
            data = tomllib.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"{path}: no such config file") from None
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    return config_from_dict(data, str(path))


def with_overrides(config: ExperimentConfig, overrides: Mapping[str, Any]) -> ExperimentConfig:
    """Return a revalidated copy with dotted keys (``"split.protocol"``) replaced.

    ``None`` values are ignored so unset command-line flags keep the file's value.
    """
    data = config.model_dump(mode="python")
    for key, value in overrides.items():
        if value is None:
            continue
        node = data
        *parents, leaf = key.split(".")
        for p in parents:
            node = node.setdefault(p, {})
        node[leaf] = value
    return config_from_dict(data, "<overrides>")


def dump_config(config: ExperimentConfig) -> str:
    return json.dumps(config.model_dump(mode="json"), indent=2, sort_keys=True) + "\n"
