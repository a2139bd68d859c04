"""Strict JSON experiment configuration with path-precise validation errors."""

from __future__ import annotations

import dataclasses
import json
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from .data import CorpusSpec, Thresholds
from .loss import LossWeights
from .model import ConfigError, ModelConfig
from .train import TrainConfig

SEED_ENV = "MODABS_SEED"


@dataclass
class EvalOptions:
    count_rule: str = "head"
    cluster_grid: list[float] | None = None
    batch_size: int = 32

    def __post_init__(self):
        if self.count_rule not in ("head", "nonempty"):
            raise ValueError("count_rule must be 'head' or 'nonempty'")


@dataclass
class ExperimentConfig:
    corpus: CorpusSpec = field(default_factory=CorpusSpec)
    thresholds: Thresholds | None = None
    model: dict = field(default_factory=dict)
    train: TrainConfig = field(default_factory=TrainConfig)
    loss: LossWeights = field(default_factory=LossWeights)
    eval: EvalOptions = field(default_factory=EvalOptions)
    data_dir: str = "data"
    output_dir: str = "runs"

    def model_config(self, vocab_size: int) -> ModelConfig:
        params = dict(self.model)
        params.setdefault("vocab_size", vocab_size)
        if params["vocab_size"] < vocab_size:
            raise ConfigError(
                f"model.vocab_size {params['vocab_size']} is smaller than the vocabulary ({vocab_size})"
            )
        try:
            return ModelConfig(**params)
        except ConfigError as exc:
            raise ConfigError(f"model: {exc}") from None

    def train_config(self) -> TrainConfig:
        return dataclasses.replace(self.train, weights=self.loss)


_MODEL_FIELDS = {f.name: f for f in dataclasses.fields(ModelConfig)}
_SECTIONS = {
    "corpus": CorpusSpec,
    "thresholds": Thresholds,
    "train": TrainConfig,
    "loss": LossWeights,
    "eval": EvalOptions,
}


def _check_type(value: Any, default: Any, path: str) -> Any:
    if default is None or default is dataclasses.MISSING or isinstance(default, (dict,)):
        return value
    if isinstance(default, bool):
        ok = isinstance(value, bool)
    elif isinstance(default, int):
        ok = isinstance(value, int) and not isinstance(value, bool)
    elif isinstance(default, float):
        ok = isinstance(value, (int, float)) and not isinstance(value, bool)
        value = float(value) if ok else value
    elif isinstance(default, str):
        ok = isinstance(value, str)
    elif isinstance(default, (list, tuple)):
        ok = isinstance(value, list)
    else:
        ok = True
    if not ok:
        raise ConfigError(f"{path}: expected {type(default).__name__}, got {type(value).__name__}")
    return value


def _field_default(f: dataclasses.Field) -> Any:
    if f.default is not dataclasses.MISSING:
        return f.default
    if f.default_factory is not dataclasses.MISSING:
        return f.default_factory()
    return dataclasses.MISSING


def _build(cls, raw: Any, path: str):
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: expected an object")
    fields = {f.name: f for f in dataclasses.fields(cls) if f.name != "weights"}
    kwargs = {}
    for key, value in raw.items():
        if key not in fields:
            raise ConfigError(f"{path}.{key}: unknown key")
        kwargs[key] = _check_type(value, _field_default(fields[key]), f"{path}.{key}")
    try:
        return cls(**kwargs)
    except TypeError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    except ValueError as exc:
        raise ConfigError(f"{path}: {exc}") from None


def parse_config(raw: Any) -> ExperimentConfig:
    if not isinstance(raw, dict):
        raise ConfigError("config: expected a JSON object")
    allowed = {f.name for f in dataclasses.fields(ExperimentConfig)}
    for key in raw:
        if key not in allowed:
            raise ConfigError(f"{key}: unknown key")
    kwargs: dict[str, Any] = {}
    for name, cls in _SECTIONS.items():
        if name in raw and raw[name] is not None:
            kwargs[name] = _build(cls, raw[name], name)
    if "model" in raw:
        model = raw["model"]
        if not isinstance(model, dict):
            raise ConfigError("model: expected an object")
        for key, value in model.items():
            if key not in _MODEL_FIELDS:
                raise ConfigError(f"model.{key}: unknown key")
            _check_type(value, _field_default(_MODEL_FIELDS[key]), f"model.{key}")
        kwargs["model"] = dict(model)
    for key in ("data_dir", "output_dir"):
        if key in raw:
            kwargs[key] = _check_type(raw[key], "", key)
    cfg = ExperimentConfig(**kwargs)
    seed = os.environ.get(SEED_ENV)
    if seed is not None:
        try:
            cfg.train = dataclasses.replace(cfg.train, seed=int(seed))
        except ValueError:
            raise ConfigError(f"{SEED_ENV}: not an integer: {seed!r}") from None
    _cross_validate(cfg)
    return cfg


def _cross_validate(cfg: ExperimentConfig) -> None:
    n = cfg.model.get("max_aspects", _MODEL_FIELDS["max_aspects"].default)
    L = cfg.model.get("max_summary_len", _MODEL_FIELDS["max_summary_len"].default)
    if cfg.corpus.max_aspects > n:
        raise ConfigError(f"corpus.max_aspects {cfg.corpus.max_aspects} exceeds model.max_aspects {n}")
    if cfg.thresholds is not None:
        if cfg.thresholds.max_aspects > n:
            raise ConfigError(
                f"thresholds.max_aspects {cfg.thresholds.max_aspects} exceeds model.max_aspects {n}"
            )
        if cfg.thresholds.max_summary_tokens >= L:
            raise ConfigError(
                f"thresholds.max_summary_tokens {cfg.thresholds.max_summary_tokens} "
                f"leaves no room for EOS within model.max_summary_len {L}"
            )


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from None
    return parse_config(raw)
