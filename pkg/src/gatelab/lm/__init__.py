"""Tabular bigram language model lab: model, data and preference training."""

from .data import PreferencePair, SyntheticSpec, eval_variants, make_synthetic_dataset, sft_initialize
from .model import TabularLM, load_checkpoint, save_checkpoint, score_sequence
from .train import OptimizerConfig, TrainRecord, evaluate, sweep, train

__all__ = [
    "PreferencePair",
    "SyntheticSpec",
    "eval_variants",
    "make_synthetic_dataset",
    "sft_initialize",
    "TabularLM",
    "load_checkpoint",
    "save_checkpoint",
    "score_sequence",
    "OptimizerConfig",
    "TrainRecord",
    "evaluate",
    "sweep",
    "train",
]
