"""Sorting-based attention vs. softmax attention, at desk scale.

The package provides a small float64 autodiff engine (``tensor``), the
two attention mechanisms (``attention``), a trainable encoder
classifier (``encoder``), deterministic datasets (``data``), Adam
training (``training``), diagnostics and benchmarks (``analysis``),
finite-difference gradient verification (``gradcheck``), and a CSV-
emitting CLI (``cli``, installed as the ``sortattn`` command).
"""

from .attention import (
    MhaParams,
    PermutationRecord,
    SliceSortParams,
    SortKind,
    SortStrategy,
    extract_permutation_matrix,
    max_exchange,
    mha_forward,
    slice_sort_backward,
    slice_sort_forward,
    sort_direction,
)
from .data import LabeledSequence, Rng, batch_iterator, gen_listops_lite, gen_multiset_majority, load_idx
from .encoder import (
    AttentionKind,
    EncoderConfig,
    EncoderParams,
    count_params,
    encoder_block_forward,
    init_encoder_params,
    model_forward,
    sinusoidal_pe,
)
from .tensor import Graph, Tensor, backward
from .training import AdamState, TrainSettings, adam_step, evaluate, train_loop

__all__ = [
    "AdamState",
    "AttentionKind",
    "EncoderConfig",
    "EncoderParams",
    "Graph",
    "LabeledSequence",
    "MhaParams",
    "PermutationRecord",
    "Rng",
    "SliceSortParams",
    "SortKind",
    "SortStrategy",
    "Tensor",
    "TrainSettings",
    "adam_step",
    "backward",
    "batch_iterator",
    "count_params",
    "encoder_block_forward",
    "evaluate",
    "extract_permutation_matrix",
    "gen_listops_lite",
    "gen_multiset_majority",
    "init_encoder_params",
    "load_idx",
    "max_exchange",
    "mha_forward",
    "model_forward",
    "sinusoidal_pe",
    "slice_sort_backward",
    "slice_sort_forward",
    "sort_direction",
    "train_loop",
]
