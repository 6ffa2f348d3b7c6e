"""Sequential tag recommendation with an all-MLP mixer over user history."""

from .corpus import (
    Corpus,
    CorpusSplit,
    Post,
    RawPost,
    UserHistory,
    build_corpus,
    history_window,
    ingest_jsonl,
    ingest_stackexchange,
    load_corpus,
    save_corpus,
    split_leave_one_out,
)
from .encoder import (
    EmbeddingStore,
    encode_all,
    encode_internal,
    encode_tokens,
    load_precomputed,
    read_embeddings,
    write_embeddings,
)
from .errors import (
    ConfigError,
    CorpusError,
    EmbeddingFormatError,
    TagMixerError,
    TrainingError,
)
from .estimator import SequentialTagRecommender
from .evaluation import MetricsReport, evaluate_split, metrics_at_k, sweep_history_length
from .mixer import MixerConfig, channel_mix, forward_stack, fusion_mix, layer_norm, sequence_mix
from .model import ScoreVector, bce_loss, pool_history, predict_scores, top_b
from .tagspace import TagRepresentations, compute_tag_representations, embed_tag_set
from .train import Checkpoint, TrainConfig, adam_step, forward_backward, grad_check, train_loop

__version__ = "0.1.0"

__all__ = [
    "Checkpoint",
    "ConfigError",
    "Corpus",
    "CorpusError",
    "CorpusSplit",
    "EmbeddingFormatError",
    "EmbeddingStore",
    "MetricsReport",
    "MixerConfig",
    "Post",
    "RawPost",
    "ScoreVector",
    "SequentialTagRecommender",
    "TagMixerError",
    "TagRepresentations",
    "TrainConfig",
    "TrainingError",
    "UserHistory",
    "adam_step",
    "bce_loss",
    "build_corpus",
    "channel_mix",
    "compute_tag_representations",
    "embed_tag_set",
    "encode_all",
    "encode_internal",
    "encode_tokens",
    "evaluate_split",
    "forward_backward",
    "forward_stack",
    "fusion_mix",
    "grad_check",
    "history_window",
    "ingest_jsonl",
    "ingest_stackexchange",
    "layer_norm",
    "load_corpus",
    "load_precomputed",
    "metrics_at_k",
    "pool_history",
    "predict_scores",
    "read_embeddings",
    "save_corpus",
    "sequence_mix",
    "split_leave_one_out",
    "sweep_history_length",
    "top_b",
    "train_loop",
    "write_embeddings",
]
