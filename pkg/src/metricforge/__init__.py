"""Triplet-loss metric learning toolkit for real/fake frame-embedding classification."""

from .data import (
    DatasetSplit,
    EmbeddingDataset,
    EmbeddingRecord,
    read_embeddings,
    split_by_video,
    validate,
    write_embeddings,
)
from .mining import (
    DistanceMatrix,
    MiningStats,
    Triplet,
    TripletCategory,
    categorize,
    mine_random,
    mine_semihard_batch,
    mining_stats,
    pairwise_sq_dist,
)
from .synth import SynthConfig, generate, reference_config
from .train import (
    ProjectionHead,
    TrainConfig,
    TrainReport,
    batch_loss_and_grad,
    finite_diff_check,
    fit,
    forward,
    load_head,
    save_head,
    transform,
    triplet_loss,
)

__version__ = "0.1.0"

__all__ = [
    "DatasetSplit",
    "DistanceMatrix",
    "EmbeddingDataset",
    "EmbeddingRecord",
    "MiningStats",
    "ProjectionHead",
    "SynthConfig",
    "TrainConfig",
    "TrainReport",
    "Triplet",
    "TripletCategory",
    "batch_loss_and_grad",
    "categorize",
    "finite_diff_check",
    "fit",
    "forward",
    "generate",
    "load_head",
    "mine_random",
    "mine_semihard_batch",
    "mining_stats",
    "pairwise_sq_dist",
    "read_embeddings",
    "reference_config",
    "save_head",
    "split_by_video",
    "transform",
    "triplet_loss",
    "validate",
    "write_embeddings",
]
