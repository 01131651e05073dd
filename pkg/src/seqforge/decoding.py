"""Forward-only inference: beam search, n-best ranking, UNK replacement.

Nothing here records a tape, so decoding is the pure forward fast path over
frozen parameters; concurrent calls on one loaded model are safe.

Search rules (implementation-defined, relied on by tests):

* Each step expands every alive hypothesis over the full vocabulary and
  keeps the top beam_size candidates by cumulative log-probability, ties
  broken by (lower token id, lower parent beam index). Candidates emitting
  EOS move to the finished pool; the rest stay alive.
* A finished sequence's score includes its EOS step. Hypotheses still alive
  at max_len are force-finished: EOS is appended without a score
  contribution.
* Search stops early once no alive hypothesis could still beat the best
  finished score after length adjustment (with alpha > 0 the bound divides
  by the maximum reachable length).
* Final ranking sorts by score / length**alpha when alpha > 0, raw score
  otherwise; the normalization never affects in-loop pruning.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .data import (
    BOS_ID,
    EOS_ID,
    EOS_TOKEN,
    UNK_TOKEN,
    Example,
    VocabBundle,
    decode_ids,
    encode_line,
    make_batch,
    tokenize,
)
from .errors import ConfigError, EmptySourceError
from .model import (
    DecoderState,
    ModelConfig,
    ModelParams,
    decode_step,
    encode_sequence,
    generator_logprobs,
)
from .tensor import Tensor


@dataclass
class DecodeOptions:
    beam_size: int = 5
    n_best: int = 1
    max_len: int = 100
    length_alpha: float = 0.0
    replace_unk: bool = False

    def validate(self) -> "DecodeOptions":
        if self.beam_size < 1:
            raise ConfigError("beam_size", f"must be >= 1, got {self.beam_size}")
        if not (1 <= self.n_best <= self.beam_size):
            raise ConfigError(
                "n_best", f"must be in [1, beam_size], got {self.n_best}"
            )
        if self.max_len < 1:
            raise ConfigError("max_len", f"must be >= 1, got {self.max_len}")
        if self.length_alpha < 0:
            raise ConfigError(
                "length_alpha", f"must be >= 0, got {self.length_alpha}"
            )
        return self


@dataclass
class Hypothesis:
    """A finished output: emitted ids (ending in EOS), score, attention path."""

    tokens: list[int]
    score: float
    attn_positions: list[int]
    finished: bool = True

    def adjusted(self, alpha: float) -> float:
        if alpha > 0.0:
            return self.score / (len(self.tokens) ** alpha)
        return self.score


@dataclass
class BeamResult:
    hypotheses: list[Hypothesis]
    expansions: int = 0


def _gather_state(state: DecoderState, idx: np.ndarray) -> DecoderState:
    return DecoderState(
        layers=[(Tensor(h.data[idx]), Tensor(c.data[idx])) for h, c in state.layers],
        input_feed=Tensor(state.input_feed.data[idx]),
    )


def _tile_context(ctx_row: np.ndarray, n: int) -> Tensor:
    return Tensor(np.ascontiguousarray(np.broadcast_to(ctx_row, (n,) + ctx_row.shape)))


def beam_search(
    params: ModelParams,
    config: ModelConfig,
    src: Example,
    opts: DecodeOptions,
    encoded: Optional[tuple] = None,
) -> BeamResult:
    """Beam-search one source example; returns the n_best finished hypotheses.

    `encoded` may carry a precomputed (context_row [S, H], finals_row,
    src_length) triple from a batched encoder pass.
    """
    opts.validate()
    if not src.src_ids:
        raise EmptySourceError("cannot translate an empty source sentence")
    if encoded is None:
        batch = make_batch([src], [0])
        context, finals = encode_sequence(batch, params, config)
        ctx_row = context.data[0]
        finals_row = [(h.data[0], c.data[0]) for h, c in finals]
        src_len = int(batch.src_lengths[0])
    else:
        ctx_row, finals_row, src_len = encoded

    state = DecoderState(
        layers=[(Tensor(h[None, :]), Tensor(c[None, :])) for h, c in finals_row],
        input_feed=Tensor(np.zeros((1, config.rnn_size), dtype=params.dtype)),
    )
    alive_tokens: list[list[int]] = [[]]
    alive_attn: list[list[int]] = [[]]
    alive_scores = np.zeros(1, dtype=np.float64)
    prev_ids = np.array([BOS_ID], dtype=np.int64)
    finished: list[Hypothesis] = []
    expansions = 0
    max_total_len = opts.max_len + 1  # forced EOS can extend the token count by one

    for _ in range(opts.max_len):
        n = len(alive_tokens)
        ctx = _tile_context(ctx_row, n)
        lengths = np.full(n, src_len, dtype=np.int64)
        h_tilde, state, weights = decode_step(
            prev_ids, state, ctx, lengths, params, config
        )
        logprobs = generator_logprobs(h_tilde, params).data
        vocab = logprobs.shape[1]
        expansions += n * vocab

        attn_argmax = np.argmax(weights.data[:, :src_len], axis=1)
        totals = alive_scores[:, None] + logprobs.astype(np.float64)
        flat = totals.reshape(-1)
        parent = np.repeat(np.arange(n), vocab)
        token = np.tile(np.arange(vocab), n)
        # Primary key: score descending; ties by token id then parent index.
        order = np.lexsort((parent, token, -flat))[: opts.beam_size]

        new_tokens: list[list[int]] = []
        new_attn: list[list[int]] = []
        new_scores: list[float] = []
        new_prev: list[int] = []
        keep_rows: list[int] = []
        for cand in order:
            p = int(parent[cand])
            tok = int(token[cand])
            score = float(flat[cand])
            toks = alive_tokens[p] + [tok]
            attn = alive_attn[p] + [int(attn_argmax[p])]
            if tok == EOS_ID:
                finished.append(Hypothesis(toks, score, attn))
            else:
                new_tokens.append(toks)
                new_attn.append(attn)
                new_scores.append(score)
                new_prev.append(tok)
                keep_rows.append(p)
        if not new_tokens:
            # Every surviving candidate finished; nothing is left to extend.
            alive_tokens, alive_attn, alive_scores = [], [], np.zeros(0)
            break
        alive_tokens = new_tokens
        alive_attn = new_attn
        alive_scores = np.array(new_scores, dtype=np.float64)
        prev_ids = np.array(new_prev, dtype=np.int64)
        state = _gather_state(state, np.array(keep_rows, dtype=np.int64))

        if finished and len(finished) >= opts.n_best:
            best_done = max(h.adjusted(opts.length_alpha) for h in finished)
            if opts.length_alpha > 0.0:
                reachable = alive_scores / (max_total_len ** opts.length_alpha)
            else:
                reachable = alive_scores
            if best_done >= reachable.max():
                # No alive hypothesis can still beat the finished pool.
                alive_tokens, alive_attn, alive_scores = [], [], np.zeros(0)
                break

    # Force-finish whatever is still alive; the appended EOS scores nothing
    # and reuses the last step's attention position.
    for toks, attn, score in zip(alive_tokens, alive_attn, alive_scores):
        finished.append(Hypothesis(toks + [EOS_ID], float(score), attn + [attn[-1]]))

    finished.sort(key=lambda h: (-h.adjusted(opts.length_alpha), tuple(h.tokens)))
    return BeamResult(hypotheses=finished[: opts.n_best], expansions=expansions)


def replace_unknowns(
    tokens: Sequence[str],
    attn_positions: Sequence[int],
    src_tokens: Sequence[str],
) -> list[str]:
    """Swap each UNK for the source token its step attended to most."""
    return [
        src_tokens[attn_positions[i]] if tok == UNK_TOKEN else tok
        for i, tok in enumerate(tokens)
    ]


@dataclass
class Translation:
    text: str
    score: float
    tokens: list[str] = field(default_factory=list)
    attn_positions: list[int] = field(default_factory=list)


def translate_batch(
    params: ModelParams,
    config: ModelConfig,
    lines: Sequence[str],
    vocabs: VocabBundle,
    opts: DecodeOptions,
) -> list[list[Translation]]:
    """Translate text lines; returns an n-best Translation list per line.

    The encoder runs once over the whole padded batch; beam search then runs
    per sentence. Output order matches input order.
    """
    opts.validate()
    if not lines:
        return []
    examples = []
    for i, line in enumerate(lines):
        word_ids, feat_ids = encode_line(
            line, vocabs.src, vocabs.feats, "src", vocabs.feature_sep, line_no=i + 1
        )
        if not word_ids:
            raise EmptySourceError(f"line {i + 1}: empty source sentence")
        examples.append(Example(src_ids=word_ids, src_feat_ids=feat_ids))

    batch = make_batch(examples, list(range(len(examples))))
    context, finals = encode_sequence(batch, params, config)

    results = []
    for i, example in enumerate(examples):
        src_len = int(batch.src_lengths[i])
        encoded = (
            np.ascontiguousarray(context.data[i]),
            [(h.data[i], c.data[i]) for h, c in finals],
            src_len,
        )
        beam = beam_search(params, config, example, opts, encoded=encoded)
        src_tokens = [tokenize(lines[i])[t].split(vocabs.feature_sep)[0]
                      for t in range(src_len)]
        nbest = []
        for hyp in beam.hypotheses:
            out_tokens = decode_ids(hyp.tokens, vocabs.tgt, strip_specials=False)
            content = [t for t in out_tokens if t != EOS_TOKEN]
            positions = hyp.attn_positions[: len(content)]
            if opts.replace_unk:
                content = replace_unknowns(content, positions, src_tokens)
            nbest.append(
                Translation(
                    text=" ".join(content),
                    score=hyp.adjusted(opts.length_alpha),
                    tokens=content,
                    attn_positions=list(hyp.attn_positions),
                )
            )
        results.append(nbest)
    return results
