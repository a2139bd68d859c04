"""Aspect-count comparison systems: a TF-IDF agglomerative sentence-cluster
summarizer and a bag-of-words logistic-regression count classifier."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from sklearn.cluster import AgglomerativeClustering
from sklearn.feature_extraction.text import TfidfVectorizer

from .data import Sample
from .evaluation import abs_asp_diff

DEFAULT_THRESHOLD_GRID = tuple(np.round(np.arange(0.5, 1.0001, 0.05), 2).tolist())


@dataclass(frozen=True)
class ClusterConfig:
    distance_threshold: float = 0.9
    linkage: str = "average"
    min_cluster_size: int = 2
    summary_sentences: int = 1
    max_summary_tokens: int | None = None

    def __post_init__(self):
        if self.distance_threshold <= 0:
            raise ValueError("distance_threshold must be positive")


def _identity(tokens):
    return tokens


def sentence_clusters(sentences: Sequence[Sequence[int]], config: ClusterConfig) -> list[list[int]]:
    """Group sentence indices; clusters are ordered by their first sentence."""
    n = len(sentences)
    if n < max(2, config.min_cluster_size):
        return [list(range(n))] if n else []
    docs = [[str(t) for t in s] for s in sentences]
    vec = TfidfVectorizer(analyzer=_identity, lowercase=False)
    X = vec.fit_transform(docs).toarray()
    if not np.any(X):
        return [list(range(n))]
    labels = AgglomerativeClustering(
        n_clusters=None,
        distance_threshold=config.distance_threshold,
        metric="cosine",
        linkage=config.linkage,
    ).fit_predict(X)
    groups: dict[int, list[int]] = {}
    for i, lab in enumerate(labels):
        groups.setdefault(int(lab), []).append(i)
    return sorted(groups.values(), key=lambda g: g[0])


def cluster_baseline(sample: Sample, config: ClusterConfig) -> list[list[int]]:
    """One summary per sentence cluster: its leading sentence(s), truncated."""
    summaries = []
    for group in sentence_clusters(sample.source_sentences, config):
        tokens = [t for i in group[: config.summary_sentences] for t in sample.source_sentences[i]]
        if config.max_summary_tokens is not None:
            tokens = tokens[: config.max_summary_tokens]
        summaries.append(tokens)
    return summaries


@dataclass
class TuningResult:
    config: ClusterConfig
    scores: dict[float, float]  # threshold -> mean validation #AbsAspDiff


def tune_cluster(valid: Sequence[Sample], grid: Sequence[float] = DEFAULT_THRESHOLD_GRID,
                 base: ClusterConfig | None = None) -> TuningResult:
    """Pick the threshold with the lowest mean #AbsAspDiff (ties: smaller threshold)."""
    if not grid:
        raise ValueError("threshold grid is empty")
    base = base or ClusterConfig()
    scores = {}
    for t in sorted(set(float(x) for x in grid)):
        cfg = ClusterConfig(t, base.linkage, base.min_cluster_size, base.summary_sentences,
                            base.max_summary_tokens)
        diffs = [abs_asp_diff(cluster_baseline(s, cfg), s.aspect_count) for s in valid]
        scores[t] = float(np.mean(diffs)) if diffs else 0.0
    best = min(scores, key=lambda t: (scores[t], t))
    cfg = ClusterConfig(best, base.linkage, base.min_cluster_size, base.summary_sentences,
                        base.max_summary_tokens)
    return TuningResult(cfg, scores)


# -- count classifier ------------------------------------------------------


def bag_of_words(tokens: Sequence[int], vocab_size: int) -> np.ndarray:
    x = np.bincount(np.asarray(tokens, dtype=np.int64), minlength=vocab_size).astype(np.float64)
    norm = np.linalg.norm(x)
    return x / norm if norm else x


@dataclass
class CountClassifier:
    weights: np.ndarray  # V x C
    bias: np.ndarray  # C
    classes: np.ndarray  # aspect counts, C
    present: np.ndarray  # bool C; classes seen in training
    loss_history: list[float] = field(default_factory=list)

    def logits(self, tokens: Sequence[int]) -> np.ndarray:
        return bag_of_words(tokens, self.weights.shape[0]) @ self.weights + self.bias

    def __call__(self, tokens: Sequence[int]) -> int:
        z = np.where(self.present, self.logits(tokens), -np.inf)
        return int(self.classes[int(np.argmax(z))])


def count_classifier_baseline(train: Sequence[Sample], vocab_size: int, max_aspects: int,
                              epochs: int = 3000, learning_rate: float = 2.0) -> CountClassifier:
    """Multinomial logistic regression on L2-normalised bag-of-words counts,
    fit by full-batch gradient descent on cross-entropy over classes 2..N.

    Classes that never occur in training are never predicted.
    """
    classes = np.arange(2, max_aspects + 1)
    X = np.stack([bag_of_words(s.source, vocab_size) for s in train])
    y = np.array([s.aspect_count - 2 for s in train])
    if y.min() < 0 or y.max() >= len(classes):
        raise ValueError(f"training counts must lie in [2, {max_aspects}]")
    Y = np.eye(len(classes))[y]
    W = np.zeros((vocab_size, len(classes)))
    b = np.zeros(len(classes))
    history = []
    for _ in range(epochs):
        z = X @ W + b
        z -= z.max(axis=1, keepdims=True)
        p = np.exp(z)
        p /= p.sum(axis=1, keepdims=True)
        history.append(float(-np.mean(np.log(p[np.arange(len(y)), y] + 1e-300))))
        g = (p - Y) / len(y)
        W -= learning_rate * (X.T @ g)
        b -= learning_rate * g.sum(axis=0)
    present = np.isin(np.arange(len(classes)), y)
    return CountClassifier(W, b, classes, present, history)


def classifier_abs_asp_diff(predictor: Callable[[Sequence[int]], int],
                            samples: Sequence[Sample]) -> list[int]:
    return [abs(predictor(s.source) - s.aspect_count) for s in samples]
