"""SGD training loop: loss, clipped updates, decay schedule, checkpoints.

Every source of randomness is derived from (rng_seed, epoch) so a run is
bit-reproducible and a resumed run retraces the exact remaining epochs.
"""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field, fields
from typing import Optional, Sequence

import numpy as np

from .data import PAD_ID, Example, ParallelDataset, make_batches, sample_dataset
from .errors import (
    ConfigError,
    EmptyDatasetError,
    GatherIndexError,
    NonFiniteGradientError,
    NonFiniteLossError,
    SeqforgeError,
)
from .model import ModelConfig, ModelParams, teacher_forced_logprobs
from .tensor import Tape, Tensor, backward, record

log = logging.getLogger("seqforge.train")


@dataclass
class TrainConfig:
    epochs: int = 13
    batch_size: int = 64
    learning_rate: float = 1.0
    decay_rate: float = 0.5
    start_decay_at: int = 9
    max_grad_norm: float = 5.0
    sample_fraction: float = 1.0
    rng_seed: int = 3435
    dropout: float = 0.0

    def validate(self) -> "TrainConfig":
        if self.epochs < 0:
            raise ConfigError("epochs", f"must be >= 0, got {self.epochs}")
        if self.batch_size < 1:
            raise ConfigError("batch_size", f"must be >= 1, got {self.batch_size}")
        if self.learning_rate <= 0:
            raise ConfigError("learning_rate", f"must be > 0, got {self.learning_rate}")
        if not (0.0 < self.decay_rate <= 1.0):
            raise ConfigError("decay_rate", f"must be in (0, 1], got {self.decay_rate}")
        if self.max_grad_norm <= 0:
            raise ConfigError("max_grad_norm", f"must be > 0, got {self.max_grad_norm}")
        if not (0.0 < self.sample_fraction <= 1.0):
            raise ConfigError(
                "sample_fraction", f"must be in (0, 1], got {self.sample_fraction}"
            )
        if not (0.0 <= self.dropout < 1.0):
            raise ConfigError("dropout", f"must be in [0, 1), got {self.dropout}")
        return self


def train_config_from_dict(obj: dict) -> TrainConfig:
    known = {f.name for f in fields(TrainConfig)}
    for key in obj:
        if key not in known:
            raise ConfigError(key, "unknown training option")
    return TrainConfig(**obj).validate()


@dataclass
class TrainState:
    epoch: int = 0
    learning_rate: float = 1.0
    train_ppls: list = field(default_factory=list)
    valid_ppls: list = field(default_factory=list)
    best_valid_ppl: Optional[float] = None

    def to_json(self) -> dict:
        return {
            "epoch": self.epoch,
            "learning_rate": self.learning_rate,
            "train_ppls": self.train_ppls,
            "valid_ppls": self.valid_ppls,
            "best_valid_ppl": self.best_valid_ppl,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "TrainState":
        return cls(
            epoch=obj["epoch"],
            learning_rate=obj["learning_rate"],
            train_ppls=list(obj.get("train_ppls", [])),
            valid_ppls=list(obj.get("valid_ppls", [])),
            best_valid_ppl=obj.get("best_valid_ppl"),
        )


def nll_loss(logprobs: Tensor, targets: np.ndarray, pad_id: int = PAD_ID,
             tape: Optional[Tape] = None):
    """Negative log-likelihood summed over non-pad targets.

    Returns (scalar loss tensor, count of non-pad targets); pad positions
    contribute exactly zero to both.
    """
    targets = np.asarray(targets)
    if targets.ndim != 1 or targets.shape[0] != logprobs.shape[0]:
        raise GatherIndexError(
            f"targets length {targets.shape} does not match {logprobs.shape[0]} rows"
        )
    vocab = logprobs.shape[1]
    if targets.size and (targets.min() < 0 or targets.max() >= vocab):
        bad = targets[(targets < 0) | (targets >= vocab)][0]
        raise GatherIndexError(f"target id {bad} out of range for vocabulary {vocab}")
    keep = targets != pad_id
    rows = np.flatnonzero(keep)
    picked = logprobs.data[rows, targets[rows]]
    loss = Tensor(np.array([-picked.sum()], dtype=logprobs.data.dtype))
    loss.requires_grad = logprobs.requires_grad
    ntokens = int(keep.sum())
    if tape is not None and loss.requires_grad:

        def bwd(g):
            d = np.zeros_like(logprobs.data)
            d[rows, targets[rows]] = -g[0]
            return (d,)

        record(tape, (logprobs,), (loss,), bwd)
    return loss, ntokens


def grad_global_norm(params: ModelParams) -> float:
    total = 0.0
    for name, p in params.items():
        if p.grad is None:
            raise SeqforgeError(f"parameter '{name}' has no gradient")
        if not np.isfinite(p.grad).all():
            raise NonFiniteGradientError(name)
        total += float(np.sum(p.grad.astype(np.float64) ** 2))
    return math.sqrt(total)


def sgd_update(params: ModelParams, learning_rate: float, max_grad_norm: float) -> float:
    """Clip the global gradient norm, take one SGD step, zero the gradients.

    The caller is responsible for any per-token normalization beforehand.
    Returns the pre-clip global norm.
    """
    gnorm = grad_global_norm(params)
    scale = max_grad_norm / gnorm if gnorm > max_grad_norm else 1.0
    for _, p in params.items():
        step = p.grad if scale == 1.0 else p.grad * p.data.dtype.type(scale)
        p.data -= p.data.dtype.type(learning_rate) * step
        p.grad = None
    return gnorm


def update_learning_rate(state: TrainState, config: TrainConfig) -> float:
    """Halve (by decay_rate) at most once per epoch.

    Triggers: the completed epoch has reached start_decay_at, or the latest
    validation perplexity did not improve on the previous one.
    """
    ppls = state.valid_ppls
    worse = len(ppls) >= 2 and ppls[-1] > ppls[-2]
    if state.epoch >= config.start_decay_at or worse:
        state.learning_rate *= config.decay_rate
    return state.learning_rate


def evaluate_perplexity(
    params: ModelParams,
    config: ModelConfig,
    examples: Sequence[Example],
    batch_size: int = 32,
) -> float:
    """exp(total NLL / total tokens) over the whole dataset, dropout off."""
    if not examples:
        raise EmptyDatasetError("cannot evaluate perplexity on an empty dataset")
    total_loss = 0.0
    total_tokens = 0
    for batch in make_batches(examples, batch_size, rng_seed=None):
        logprobs, targets = teacher_forced_logprobs(batch, params, config)
        loss, ntokens = nll_loss(logprobs, targets)
        total_loss += float(loss.data[0])
        total_tokens += ntokens
    return math.exp(total_loss / total_tokens)


def train(
    params: ModelParams,
    dataset: ParallelDataset,
    tconf: TrainConfig,
    save_prefix: Optional[str] = None,
    state: Optional[TrainState] = None,
) -> TrainState:
    """Run SGD epochs with per-epoch sampling, validation, decay, checkpoints.

    Per batch: forward, backward, gradients normalized by the batch's non-pad
    target count, clipped update. Resuming from a checkpointed state retraces
    the remaining epochs exactly because all seeds derive from (seed, epoch).
    """
    from . import checkpoint as ckpt

    tconf.validate()
    config = params.config
    if state is None:
        state = TrainState(epoch=0, learning_rate=tconf.learning_rate)
    if save_prefix is not None and state.epoch == 0:
        ckpt.save_checkpoint(
            f"{save_prefix}_epoch0.ckpt", params, tconf, state, dataset.vocabs
        )
    for epoch in range(state.epoch + 1, tconf.epochs + 1):
        sampled = sample_dataset(
            dataset.train, tconf.sample_fraction, [tconf.rng_seed, epoch, 11]
        )
        batches = make_batches(sampled, tconf.batch_size, [tconf.rng_seed, epoch, 13])
        dropout_rng = np.random.default_rng([tconf.rng_seed, epoch, 17])
        epoch_loss = 0.0
        epoch_tokens = 0
        started = time.perf_counter()
        for bi, batch in enumerate(batches):
            tape = Tape()
            logprobs, targets = teacher_forced_logprobs(
                batch, params, config, tape, dropout_rng, tconf.dropout
            )
            loss, ntokens = nll_loss(logprobs, targets, PAD_ID, tape)
            loss_val = float(loss.data[0])
            if not math.isfinite(loss_val):
                raise NonFiniteLossError(
                    f"non-finite loss at epoch {epoch}, batch {bi}"
                )
            backward(loss, tape)
            inv = params.dtype.type(1.0 / ntokens)
            for _, p in params.items():
                if p.grad is not None:
                    p.grad *= inv
            sgd_update(params, state.learning_rate, tconf.max_grad_norm)
            epoch_loss += loss_val
            epoch_tokens += ntokens
        elapsed = max(time.perf_counter() - started, 1e-9)
        train_ppl = math.exp(epoch_loss / max(epoch_tokens, 1))
        valid_ppl = evaluate_perplexity(params, config, dataset.valid, tconf.batch_size)
        lr_used = state.learning_rate
        state.epoch = epoch
        state.train_ppls.append(train_ppl)
        state.valid_ppls.append(valid_ppl)
        if state.best_valid_ppl is None or valid_ppl < state.best_valid_ppl:
            state.best_valid_ppl = valid_ppl
        update_learning_rate(state, tconf)
        log.info(
            "%d\t%.6f\t%.6f\t%.6g\t%.1f",
            epoch, train_ppl, valid_ppl, lr_used, epoch_tokens / elapsed,
        )
        if save_prefix is not None:
            ckpt.save_checkpoint(
                f"{save_prefix}_epoch{epoch}.ckpt", params, tconf, state, dataset.vocabs
            )
    return state
