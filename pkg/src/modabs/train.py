"""Training loop with early stopping, loss-weight grid search and checkpoints."""

from __future__ import annotations

import csv
import hashlib
import io
import itertools
import json
import logging
import os
import struct
import time
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from . import numerics as nx
from .data import Sample
from .evaluation import abs_asp_diff
from .loss import GRID_VALUES, LossWeights, build_targets, total_loss
from .model import ConfigError, ModelConfig, Params, forward, generate, init_params, pad_sequences
from .numerics import NonFiniteError, Tensor

log = logging.getLogger(__name__)

DEFAULT_SEEDS = (0, 10, 42)


class TrainingError(RuntimeError):
    pass


@dataclass
class TrainConfig:
    batch_size: int = 4
    max_epochs: int = 10
    early_stop_patience: int = 2
    learning_rate: float = 3e-3
    optimizer: str = "adam"
    clip_norm: float = 1.0
    seed: int = 42
    weights: LossWeights = field(default_factory=LossWeights)
    grid_fraction: float = 0.2

    def __post_init__(self):
        if isinstance(self.weights, dict):
            self.weights = LossWeights(**self.weights)
        if min(self.batch_size, self.max_epochs, self.early_stop_patience) < 1:
            raise ConfigError("batch_size, max_epochs and early_stop_patience must be positive")
        if self.early_stop_patience >= self.max_epochs:
            raise ConfigError("early_stop_patience must be smaller than max_epochs")
        if self.learning_rate <= 0 or self.clip_norm <= 0:
            raise ConfigError("learning_rate and clip_norm must be positive")
        if self.optimizer not in ("adam", "sgd"):
            raise ConfigError("optimizer must be 'adam' or 'sgd'")
        if not 0 < self.grid_fraction <= 1:
            raise ConfigError("grid_fraction must lie in (0, 1]")


# -- batching --------------------------------------------------------------


@dataclass
class Batch:
    ids: list[str]
    source: np.ndarray  # B x S
    decoder_inputs: np.ndarray  # B x N x L
    labels: np.ndarray  # B x N x L
    counts: np.ndarray  # B


def make_batch(samples: Sequence[Sample], config: ModelConfig) -> Batch:
    sources = [s.source[: config.max_source_len] for s in samples]
    labels, inputs = build_targets([s.summaries for s in samples], config)
    return Batch(
        [s.id for s in samples],
        pad_sequences(sources, config.pad_id),
        inputs,
        labels,
        np.array([s.aspect_count for s in samples], dtype=np.int64),
    )


def batch_loss(batch: Batch, params: Params, config: ModelConfig, weights: LossWeights):
    out = forward(batch.source, batch.decoder_inputs, params, config)
    return total_loss(out, batch.labels, batch.counts, weights, config.pad_id)


def _chunks(items: Sequence, size: int):
    for i in range(0, len(items), size):
        yield items[i:i + size]


def evaluate_loss(samples: Sequence[Sample], params: Params, config: ModelConfig,
                  weights: LossWeights, batch_size: int = 16) -> dict[str, float]:
    """Sample-weighted mean loss breakdown without building a gradient graph."""
    frozen = {k: Tensor(v.data) for k, v in params.items()}
    sums = dict.fromkeys(("total", "ce", "kld", "asp"), 0.0)
    for chunk in _chunks(list(samples), batch_size):
        vals = batch_loss(make_batch(chunk, config), frozen, config, weights).values()
        for k in sums:
            sums[k] += vals[k] * len(chunk)
    n = max(len(samples), 1)
    return {k: v / n for k, v in sums.items()}


# -- optimisation ----------------------------------------------------------


class Optimizer:
    """Plain gradient descent or Adam over a name -> Tensor mapping."""

    def __init__(self, params: Params, lr: float, kind: str = "adam", clip_norm: float = 1.0,
                 betas=(0.9, 0.999), eps: float = 1e-8):
        self.params, self.lr, self.kind, self.clip_norm = params, lr, kind, clip_norm
        self.b1, self.b2, self.eps = betas[0], betas[1], eps
        self.t = 0
        self.m = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in params.items()}

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    def grads(self) -> dict[str, np.ndarray]:
        return {k: (p.grad if p.grad is not None else np.zeros_like(p.data))
                for k, p in self.params.items()}

    def step(self) -> float:
        grads = self.grads()
        norm = float(np.sqrt(sum(float((g * g).sum()) for g in grads.values())))
        scale = min(1.0, self.clip_norm / norm) if norm > 0 else 1.0
        self.t += 1
        for k, p in self.params.items():
            g = grads[k] * scale
            if self.kind == "sgd":
                p.data = p.data - self.lr * g
                continue
            self.m[k] = self.b1 * self.m[k] + (1 - self.b1) * g
            self.v[k] = self.b2 * self.v[k] + (1 - self.b2) * g * g
            mhat = self.m[k] / (1 - self.b1 ** self.t)
            vhat = self.v[k] / (1 - self.b2 ** self.t)
            p.data = p.data - self.lr * mhat / (np.sqrt(vhat) + self.eps)
        return norm


class EarlyStopping:
    """Tracks the best validation value; ``update`` returns True when training should stop."""

    def __init__(self, patience: int):
        self.patience = patience
        self.best = float("inf")
        self.best_epoch = 0
        self.bad_epochs = 0

    def update(self, epoch: int, value: float) -> bool:
        if value < self.best:
            self.best, self.best_epoch, self.bad_epochs = value, epoch, 0
            return False
        self.bad_epochs += 1
        return self.bad_epochs >= self.patience


@dataclass
class TrainLog:
    epochs: list[dict] = field(default_factory=list)
    seconds: list[float] = field(default_factory=list)
    best_epoch: int = 0
    stop_reason: str = ""
    steps: int = 0

    COLUMNS = ("epoch", "train_total", "train_ce", "train_kld", "train_asp",
               "valid_total", "valid_ce", "valid_kld", "valid_asp")

    def to_json(self, include_timing: bool = False) -> dict:
        d = {"epochs": self.epochs, "best_epoch": self.best_epoch,
             "stop_reason": self.stop_reason, "steps": self.steps}
        if include_timing:
            d["seconds"] = self.seconds
        return d

    @classmethod
    def from_json(cls, d: dict) -> "TrainLog":
        return cls(list(d.get("epochs", [])), list(d.get("seconds", [])),
                   int(d.get("best_epoch", 0)), str(d.get("stop_reason", "")), int(d.get("steps", 0)))

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.DictWriter(buf, fieldnames=self.COLUMNS, lineterminator="\n")
        w.writeheader()
        for row in self.epochs:
            w.writerow({k: (repr(row[k]) if isinstance(row[k], float) else row[k])
                        for k in self.COLUMNS})
        return buf.getvalue()


@dataclass
class TrainResult:
    params: Params
    log: TrainLog


def _copy_params(params: Params) -> Params:
    return {k: Tensor(v.data.copy(), requires_grad=True) for k, v in params.items()}


def train(train_samples: Sequence[Sample], valid_samples: Sequence[Sample],
          model_config: ModelConfig, config: TrainConfig, params: Params | None = None,
          max_steps: int | None = None) -> TrainResult:
    """Mini-batch training on the weighted total loss with early stopping.

    Parameters are initialised from ``config.seed`` unless given. The returned
    parameters are those of the epoch with the lowest validation total loss.
    """
    if not train_samples:
        raise ValueError("empty training split")
    rng = np.random.default_rng(config.seed)
    params = init_params(model_config, config.seed) if params is None else params
    opt = Optimizer(params, config.learning_rate, config.optimizer, config.clip_norm)
    stopper = EarlyStopping(config.early_stop_patience)
    tlog = TrainLog()
    best = _copy_params(params)
    samples = list(train_samples)
    valid = list(valid_samples) if valid_samples else samples
    for epoch in range(1, config.max_epochs + 1):
        started = time.perf_counter()
        order = rng.permutation(len(samples))
        sums = dict.fromkeys(("total", "ce", "kld", "asp"), 0.0)
        seen = 0
        for chunk_idx in _chunks(order, config.batch_size):
            batch = make_batch([samples[i] for i in chunk_idx], model_config)
            opt.zero_grad()
            try:
                breakdown = batch_loss(batch, params, model_config, config.weights)
            except NonFiniteError as exc:
                raise TrainingError(f"epoch {epoch}, batch {batch.ids}: {exc}") from exc
            vals = breakdown.values()
            if not np.isfinite(vals["total"]):
                raise TrainingError(f"non-finite loss at epoch {epoch}, batch {batch.ids}")
            breakdown.total.backward()
            opt.step()
            tlog.steps += 1
            for k in sums:
                sums[k] += vals[k] * len(chunk_idx)
            seen += len(chunk_idx)
            if max_steps is not None and tlog.steps >= max_steps:
                break
        row = {"epoch": epoch, **{f"train_{k}": v / seen for k, v in sums.items()}}
        row.update({f"valid_{k}": v for k, v in
                    evaluate_loss(valid, params, model_config, config.weights).items()})
        tlog.epochs.append(row)
        tlog.seconds.append(time.perf_counter() - started)
        stop = stopper.update(epoch, row["valid_total"])
        if stopper.best_epoch == epoch:
            best = _copy_params(params)
        log.debug("epoch %d train %.4f valid %.4f", epoch, row["train_total"], row["valid_total"])
        if stop:
            tlog.stop_reason = "early-stop"
            break
        if max_steps is not None and tlog.steps >= max_steps:
            tlog.stop_reason = "max-steps"
            break
    else:
        tlog.stop_reason = "max-epochs"
    tlog.best_epoch = stopper.best_epoch
    return TrainResult(best, tlog)


def predict(samples: Sequence[Sample], params: Params, config: ModelConfig,
            count_rule: str = "head", batch_size: int = 32) -> dict[str, list[list[int]]]:
    out = {}
    for chunk in _chunks(list(samples), batch_size):
        gens = generate([s.source[: config.max_source_len] for s in chunk], params, config,
                        count_rule=count_rule)
        for s, g in zip(chunk, gens):
            out[s.id] = g.summaries
    return out


def mean_abs_asp_diff(predictions: dict[str, list[list[int]]], samples: Sequence[Sample]) -> float:
    return float(np.mean([abs_asp_diff(predictions[s.id], s.aspect_count) for s in samples]))


# -- grid search -----------------------------------------------------------


@dataclass
class GridResult:
    rows: list[dict]
    winner: dict
    rank_by: str

    def to_csv(self) -> str:
        cols = list(self.rows[0])
        buf = io.StringIO()
        w = csv.DictWriter(buf, fieldnames=cols, lineterminator="\n")
        w.writeheader()
        w.writerows(self.rows)
        return buf.getvalue()


RANK_KEYS = {
    # the weighted total is only comparable between rows with equal weights
    "total": lambda r: (r["valid_total"], r["valid_abs_asp_diff"]),
    "metrics": lambda r: (r["valid_abs_asp_diff"], r["valid_ce"]),
}


def weight_grid(values=GRID_VALUES, limits=("sigmoid", "tanh")) -> list[LossWeights]:
    return [LossWeights(1.0, l2, l3, kind)
            for l2, l3, kind in itertools.product(values, values, limits)]


def grid_search(train_samples: Sequence[Sample], valid_samples: Sequence[Sample],
                model_config: ModelConfig, base: TrainConfig, rank_by: str = "metrics",
                grid: Sequence[LossWeights] | None = None) -> GridResult:
    """Train one model per weight setting on a ``grid_fraction`` subsample and rank them."""
    if len(train_samples) + len(valid_samples) < 25:
        raise ValueError("grid search needs at least 25 samples")
    if rank_by not in RANK_KEYS:
        raise ValueError(f"rank_by must be one of {sorted(RANK_KEYS)}")
    rng = np.random.default_rng(base.seed)

    def subsample(items):
        n = max(1, int(round(base.grid_fraction * len(items))))
        idx = np.sort(rng.choice(len(items), size=n, replace=False))
        return [items[i] for i in idx]

    sub_train, sub_valid = subsample(list(train_samples)), subsample(list(valid_samples))
    rows = []
    for w in (grid if grid is not None else weight_grid()):
        result = train(sub_train, sub_valid, model_config, replace(base, weights=w))
        best = result.log.epochs[result.log.best_epoch - 1]
        preds = predict(sub_valid, result.params, model_config)
        rows.append({
            "lambda1": w.lambda1, "lambda2": w.lambda2, "lambda3": w.lambda3,
            "limit_kind": w.limit_kind,
            "valid_total": best["valid_total"], "valid_ce": best["valid_ce"],
            "valid_kld": best["valid_kld"], "valid_asp": best["valid_asp"],
            "valid_abs_asp_diff": mean_abs_asp_diff(preds, sub_valid),
            "best_epoch": result.log.best_epoch,
        })
    key = RANK_KEYS[rank_by]
    rows.sort(key=key)
    for rank, row in enumerate(rows, start=1):
        row["rank"] = rank
    return GridResult(rows, rows[0], rank_by)


# -- checkpoints -----------------------------------------------------------

MAGIC = b"MODABSCK"
FORMAT_VERSION = 1
_DIGEST = 32


class IntegrityError(IOError):
    pass


def save_checkpoint(params: Params, config: ModelConfig, train_log: TrainLog | None, path,
                    meta: dict | None = None) -> None:
    """Write a versioned, checksummed checkpoint atomically (temp file + rename)."""
    names = list(params)
    header = {
        "format_version": FORMAT_VERSION,
        "model_config": config.to_dict(),
        "train_log": train_log.to_json() if train_log is not None else None,
        "meta": meta or {},
        "arrays": [{"name": n, "shape": list(params[n].shape)} for n in names],
    }
    header_bytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    body = io.BytesIO()
    body.write(MAGIC)
    body.write(struct.pack("<II", FORMAT_VERSION, len(header_bytes)))
    body.write(header_bytes)
    for n in names:
        body.write(np.ascontiguousarray(params[n].data, dtype="<f8").tobytes())
    payload = body.getvalue()
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(payload)
        fh.write(hashlib.sha256(payload).digest())
    os.replace(tmp, path)


@dataclass
class Checkpoint:
    params: Params
    config: ModelConfig
    train_log: TrainLog | None
    meta: dict


def load_checkpoint(path, expect: ModelConfig | None = None) -> Checkpoint:
    raw = Path(path).read_bytes()
    if len(raw) < len(MAGIC) + 8 + _DIGEST or raw[: len(MAGIC)] != MAGIC:
        raise IntegrityError(f"{path}: not a checkpoint or truncated")
    payload, digest = raw[:-_DIGEST], raw[-_DIGEST:]
    if hashlib.sha256(payload).digest() != digest:
        raise IntegrityError(f"{path}: checksum mismatch (corrupt or truncated)")
    version, hlen = struct.unpack("<II", payload[len(MAGIC): len(MAGIC) + 8])
    if version != FORMAT_VERSION:
        raise IntegrityError(f"{path}: format version {version}, expected {FORMAT_VERSION}")
    offset = len(MAGIC) + 8
    header = json.loads(payload[offset: offset + hlen].decode("utf-8"))
    offset += hlen
    config = ModelConfig(**header["model_config"])
    if expect is not None:
        for name in ("max_aspects", "d_model", "vocab_size", "max_summary_len"):
            got, want = getattr(config, name), getattr(expect, name)
            if got != want:
                raise ConfigError(f"checkpoint has {name}={got} but the configuration expects {want}")
    params: Params = {}
    for spec in header["arrays"]:
        count = int(np.prod(spec["shape"])) if spec["shape"] else 1
        nbytes = 8 * count
        if offset + nbytes > len(payload):
            raise IntegrityError(f"{path}: array {spec['name']} is truncated")
        arr = np.frombuffer(payload, dtype="<f8", count=count, offset=offset).reshape(spec["shape"])
        params[spec["name"]] = Tensor(arr.astype(np.float64), requires_grad=True)
        offset += nbytes
    if offset != len(payload):
        raise IntegrityError(f"{path}: trailing bytes after parameter data")
    tlog = TrainLog.from_json(header["train_log"]) if header["train_log"] else None
    return Checkpoint(params, config, tlog, header.get("meta", {}))


def params_checksum(params: Params) -> str:
    return nx.parameters_checksum(params[k].data for k in sorted(params))
