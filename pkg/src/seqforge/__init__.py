"""seqforge: a self-contained neural machine translation toolkit.

Data preprocessing, an attentional encoder-decoder trained from scratch on
a tape-based reverse-mode autodiff core, and a beam-search inference engine,
all in numpy with numba-compiled hot kernels.
"""

from .data import (
    Batch,
    Example,
    ParallelDataset,
    Vocab,
    VocabBundle,
    build_vocab,
    encode_line,
    make_batches,
    sample_dataset,
)
from .decoding import DecodeOptions, Hypothesis, beam_search, translate_batch
from .kernels import BACKEND
from .model import (
    DecoderState,
    ModelConfig,
    ModelParams,
    attention,
    decode_step,
    embed,
    encode_sequence,
    generator_logprobs,
    init_params,
    lstm_cell,
    shape_manifest,
)
from .tensor import Tape, Tensor, backward
from .trainer import (
    TrainConfig,
    TrainState,
    evaluate_perplexity,
    nll_loss,
    sgd_update,
    train,
    update_learning_rate,
)

__version__ = "0.1.0"

__all__ = [
    "BACKEND",
    "Batch",
    "DecodeOptions",
    "DecoderState",
    "Example",
    "Hypothesis",
    "ModelConfig",
    "ModelParams",
    "ParallelDataset",
    "Tape",
    "Tensor",
    "TrainConfig",
    "TrainState",
    "Vocab",
    "VocabBundle",
    "attention",
    "backward",
    "beam_search",
    "build_vocab",
    "decode_step",
    "embed",
    "encode_line",
    "encode_sequence",
    "evaluate_perplexity",
    "generator_logprobs",
    "init_params",
    "lstm_cell",
    "make_batches",
    "nll_loss",
    "sample_dataset",
    "sgd_update",
    "shape_manifest",
    "train",
    "translate_batch",
    "update_learning_rate",
]
