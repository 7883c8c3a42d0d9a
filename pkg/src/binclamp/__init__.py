"""Approximately binary clamping (ABC) for learning true binary codes.

Layers, schedules, losses and a small autodiff engine for training hashing
networks, plus bit-packed Hamming retrieval and mAP evaluation.
"""

from .activations import (
    BatchNormState,
    abc_backward,
    abc_forward,
    batchnorm_forward,
    extract_binary_codes,
    scaled_tanh_backward,
    scaled_tanh_forward,
)
from .codes import PackedCodeMatrix, RetrievalIndex, build_index, hamming_distance, rank_all, search_topk
from .config import ExperimentConfig
from .estimator import BinaryHashEncoder, HammingRetriever
from .evaluation import RelevanceJudge, average_precision, is_relevant, mean_average_precision
from .schedules import SchedulePolicy, alpha_at, coupled_decay, get_policy, lr_at, r_at
from .trainer import HashingModel, MetricsLog, train

__version__ = "0.1.0"

__all__ = [
    "BatchNormState",
    "BinaryHashEncoder",
    "ExperimentConfig",
    "HammingRetriever",
    "HashingModel",
    "MetricsLog",
    "PackedCodeMatrix",
    "RelevanceJudge",
    "RetrievalIndex",
    "SchedulePolicy",
    "abc_backward",
    "abc_forward",
    "alpha_at",
    "average_precision",
    "batchnorm_forward",
    "build_index",
    "coupled_decay",
    "extract_binary_codes",
    "get_policy",
    "hamming_distance",
    "is_relevant",
    "lr_at",
    "mean_average_precision",
    "r_at",
    "rank_all",
    "scaled_tanh_backward",
    "scaled_tanh_forward",
    "search_topk",
    "train",
]
