"""Multi-objective training loss: per-aspect summarization CE, a bounded
cross-aspect KL term that rewards divergent slices, and aspect-count CE."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from . import numerics as nx
from .model import AspectDecoding, ModelConfig
from .numerics import KL_EPS, LIMIT_KINDS, Tensor

GRID_VALUES = (0.0, 0.1, 0.5, 1.0)


@dataclass(frozen=True)
class LossWeights:
    lambda1: float = 1.0
    lambda2: float = 0.0
    lambda3: float = 0.0
    limit_kind: str = "sigmoid"

    def __post_init__(self):
        if self.lambda2 < 0 or self.lambda3 < 0:
            raise ValueError("lambda2 and lambda3 must be non-negative")
        if self.limit_kind not in LIMIT_KINDS:
            raise ValueError(f"limit_kind must be one of {LIMIT_KINDS}")

    @property
    def label(self) -> str:
        return f"l2={self.lambda2:g},l3={self.lambda3:g},{self.limit_kind}"


@dataclass
class LossBreakdown:
    summarization: Tensor
    divergence: Tensor
    aspect_count: Tensor
    total: Tensor

    def values(self) -> dict[str, float]:
        return {
            "total": self.total.item(),
            "ce": self.summarization.item(),
            "kld": self.divergence.item(),
            "asp": self.aspect_count.item(),
        }


def build_targets(references: list[list[list[int]]], config: ModelConfig
                  ) -> tuple[np.ndarray, np.ndarray]:
    """Labels and teacher-forcing inputs, both ``(B, N, L)``.

    Reference aspect ``j`` goes to slice ``j``; a summary is cut to ``L - 1``
    tokens and closed with EOS. Slices past the reference count are trained
    to emit EOS immediately.
    """
    N, L = config.max_aspects, config.max_summary_len
    B = len(references)
    labels = np.full((B, N, L), config.pad_id, dtype=np.int64)
    for b, refs in enumerate(references):
        if len(refs) > N:
            raise ValueError(f"sample {b} has {len(refs)} aspects but the model holds {N}")
        for n in range(N):
            body = list(refs[n])[: L - 1] if n < len(refs) else []
            seq = body + [config.eos_id]
            labels[b, n, : len(seq)] = seq
    inputs = np.full_like(labels, config.pad_id)
    inputs[:, :, 0] = config.bos_id
    inputs[:, :, 1:] = labels[:, :, :-1]
    return labels, inputs


def summarization_loss(token_logits: Tensor, labels: np.ndarray, pad_id: int = 0) -> Tensor:
    """Mean over the batch of (sum over slices of masked token CE) / N."""
    B, N, L, _ = token_logits.shape
    logp = nx.log_softmax(token_logits, axis=-1)
    b, n, l = np.meshgrid(np.arange(B), np.arange(N), np.arange(L), indexing="ij")
    picked = logp[b, n, l, labels]
    mask = (labels != pad_id).astype(np.float64)
    per_aspect = (picked * mask).sum(axis=-1) * (1.0 / np.maximum(mask.sum(axis=-1), 1.0))
    return -(per_aspect.sum(axis=1) * (1.0 / N)).mean()


def pairwise_token_kl(token_logits: Tensor, nonpad: np.ndarray) -> Tensor:
    """``(B, N, N)`` position-averaged KL(slice i || slice j).

    Positions where both slices are padding are left out of the average.
    """
    B, N, L, V = token_logits.shape
    logp = nx.log_softmax(token_logits, axis=-1)
    p = nx.exp(logp)
    floored = nx.maximum(logp, math.log(KL_EPS))
    diff = floored.reshape(B, N, 1, L, V) - floored.reshape(B, 1, N, L, V)
    kl = (p.reshape(B, N, 1, L, V) * diff).sum(axis=-1)
    pair_mask = (nonpad[:, :, None, :] | nonpad[:, None, :, :]).astype(np.float64)
    denom = np.maximum(pair_mask.sum(axis=-1), 1.0)
    return (kl * pair_mask).sum(axis=-1) * (1.0 / denom)


def divergence_loss(token_logits: Tensor, nonpad: np.ndarray, limit_kind: str) -> Tensor:
    """``-(sum over ordered pairs i != j of limit(KL_ij)) / N``, batch mean."""
    N = token_logits.shape[1]
    if N < 2:
        warnings.warn("divergence loss needs at least two aspect slices; returning 0")
        return Tensor(0.0)
    kl = pairwise_token_kl(token_logits, nonpad)
    limited = nx.limit_function(kl, limit_kind)
    off_diagonal = 1.0 - np.eye(N)
    per_sample = (limited * off_diagonal).sum(axis=(1, 2)) * (1.0 / N)
    return -per_sample.mean()


def aspect_count_loss(count_logits: Tensor, reference_counts) -> Tensor:
    counts = np.atleast_1d(np.asarray(reference_counts, dtype=np.int64))
    B, N = count_logits.shape
    if counts.shape != (B,):
        raise ValueError(f"expected {B} reference counts, got {counts.shape}")
    if counts.min() < 1 or counts.max() > N:
        raise ValueError(f"reference aspect counts must lie in [1, {N}]")
    logp = nx.log_softmax(count_logits, axis=-1)
    return -logp[np.arange(B), counts - 1].mean()


def total_loss(out: AspectDecoding, labels: np.ndarray, reference_counts,
               weights: LossWeights, pad_id: int = 0) -> LossBreakdown:
    """Weighted sum of the three objectives. A zero weight disables its term
    entirely: the term is not evaluated and is reported as exactly 0."""
    zero = Tensor(0.0)
    ce = summarization_loss(out.token_logits, labels, pad_id) if weights.lambda1 else zero
    kld = (divergence_loss(out.token_logits, labels != pad_id, weights.limit_kind)
           if weights.lambda2 else zero)
    asp = aspect_count_loss(out.count_logits, reference_counts) if weights.lambda3 else zero
    total = ce * weights.lambda1 + kld * weights.lambda2 + asp * weights.lambda3
    return LossBreakdown(ce, kld, asp, total)
