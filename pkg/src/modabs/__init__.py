"""Multi-objective dynamic aspect-based summarization at desk scale."""

from .data import CorpusSpec, Sample, Thresholds, Vocabulary, generate_corpus
from .loss import LossBreakdown, LossWeights, total_loss
from .model import ModelConfig, generate, init_params
from .train import TrainConfig, grid_search, load_checkpoint, save_checkpoint, train

__all__ = [
    "CorpusSpec", "Sample", "Thresholds", "Vocabulary", "generate_corpus",
    "LossBreakdown", "LossWeights", "total_loss",
    "ModelConfig", "generate", "init_params",
    "TrainConfig", "grid_search", "load_checkpoint", "save_checkpoint", "train",
]
