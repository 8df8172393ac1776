"""Toy question-answering harness: synthetic data, models, and comparisons."""

from .attention import context_match
from .data import (
    DatasetBundle,
    QAExample,
    SyntheticTaskSpec,
    generate_dataset,
    load_dataset,
    save_dataset,
)
from .models import DualStreamModel, StreamModel, build_model

__all__ = [
    "DatasetBundle",
    "DualStreamModel",
    "QAExample",
    "StreamModel",
    "SyntheticTaskSpec",
    "build_model",
    "context_match",
    "generate_dataset",
    "load_dataset",
    "save_dataset",
]
