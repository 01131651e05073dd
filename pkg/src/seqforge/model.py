"""Attentional encoder-decoder network built on the tensor core.

The encoder is a stacked (optionally bidirectional) LSTM with residual
connections from layer 2 upward; the decoder is a stacked LSTM with input
feeding, global attention over the encoder context, and a log-softmax
generator. All learned tensors live in ModelParams under manifest names so
checkpoints are a pure function of ModelConfig.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple, Optional

import numpy as np

from . import tensor as T
from .data import Batch
from .errors import ConfigError, ShapeError
from .tensor import Tape, Tensor


@dataclass
class ModelConfig:
    src_vocab_size: int
    tgt_vocab_size: int
    layers: int = 2
    rnn_size: int = 500
    word_vec_size: int = 500
    feat_vec_size: int = 20
    feat_vocab_sizes: tuple = ()
    bidirectional: bool = False
    residual: bool = False
    input_feed: bool = True
    dropout: float = 0.0

    @property
    def num_features(self) -> int:
        return len(self.feat_vocab_sizes)

    @property
    def embed_size(self) -> int:
        return self.word_vec_size + self.num_features * self.feat_vec_size

    def validate(self) -> "ModelConfig":
        for key in ("layers", "rnn_size", "word_vec_size",
                    "src_vocab_size", "tgt_vocab_size"):
            if getattr(self, key) < 1:
                raise ConfigError(key, f"must be >= 1, got {getattr(self, key)}")
        if self.num_features and self.feat_vec_size < 1:
            raise ConfigError("feat_vec_size", "must be >= 1 when features are used")
        if self.bidirectional and self.rnn_size % 2:
            raise ConfigError(
                "rnn_size", f"must be even for a bidirectional encoder, got {self.rnn_size}"
            )
        if not (0.0 <= self.dropout < 1.0):
            raise ConfigError("dropout", f"must be in [0, 1), got {self.dropout}")
        return self


def model_config_from_dict(obj: dict) -> ModelConfig:
    from dataclasses import fields as dc_fields

    known = {f.name for f in dc_fields(ModelConfig)}
    for key in obj:
        if key not in known:
            raise ConfigError(key, "unknown model option")
    obj = dict(obj)
    if "feat_vocab_sizes" in obj:
        obj["feat_vocab_sizes"] = tuple(obj["feat_vocab_sizes"])
    return ModelConfig(**obj).validate()


class LSTMWeights(NamedTuple):
    wx: Tensor   # [in_dim, 4H] input projection
    wh: Tensor   # [H, 4H] recurrent projection
    b: Tensor    # [4H]


def shape_manifest(config: ModelConfig) -> list[tuple[str, tuple]]:
    """Ordered (name, shape) list for every learned tensor."""
    h = config.rnn_size
    manifest: list[tuple[str, tuple]] = [
        ("src_embedding", (config.src_vocab_size, config.word_vec_size)),
    ]
    for k, vsize in enumerate(config.feat_vocab_sizes):
        manifest.append((f"feat_embedding_{k}", (vsize, config.feat_vec_size)))
    manifest.append(("tgt_embedding", (config.tgt_vocab_size, config.word_vec_size)))

    enc_width = h // 2 if config.bidirectional else h
    directions = ("fwd", "bwd") if config.bidirectional else ("fwd",)
    for layer in range(config.layers):
        in_dim = config.embed_size if layer == 0 else h
        for d in directions:
            manifest += [
                (f"enc_l{layer}_{d}_wx", (in_dim, 4 * enc_width)),
                (f"enc_l{layer}_{d}_wh", (enc_width, 4 * enc_width)),
                (f"enc_l{layer}_{d}_b", (4 * enc_width,)),
            ]
    for layer in range(config.layers):
        if layer == 0:
            in_dim = config.word_vec_size + (h if config.input_feed else 0)
        else:
            in_dim = h
        manifest += [
            (f"dec_l{layer}_wx", (in_dim, 4 * h)),
            (f"dec_l{layer}_wh", (h, 4 * h)),
            (f"dec_l{layer}_b", (4 * h,)),
        ]
    manifest += [
        ("attn_wa", (h, h)),
        ("attn_wc", (h, 2 * h)),
        ("generator_w", (config.tgt_vocab_size, h)),
        ("generator_b", (config.tgt_vocab_size,)),
    ]
    return manifest


class ModelParams:
    """All learned tensors, keyed and ordered by the shape manifest."""

    def __init__(self, config: ModelConfig, tensors: dict[str, Tensor]):
        self.config = config
        self.manifest = shape_manifest(config)
        for name, shape in self.manifest:
            if name not in tensors:
                raise ShapeError(f"missing parameter {name}")
            if tensors[name].shape != shape:
                raise ShapeError(
                    f"parameter {name} has shape {tensors[name].shape}, expected {shape}"
                )
        self.tensors = {name: tensors[name] for name, _ in self.manifest}

    def __getitem__(self, name: str) -> Tensor:
        return self.tensors[name]

    def items(self):
        return self.tensors.items()

    def param_count(self) -> int:
        return sum(int(np.prod(s)) for _, s in self.manifest)

    @property
    def dtype(self):
        return self.tensors[self.manifest[0][0]].dtype

    def enc_weights(self, layer: int, direction: str) -> LSTMWeights:
        p = f"enc_l{layer}_{direction}"
        return LSTMWeights(self[f"{p}_wx"], self[f"{p}_wh"], self[f"{p}_b"])

    def dec_weights(self, layer: int) -> LSTMWeights:
        p = f"dec_l{layer}"
        return LSTMWeights(self[f"{p}_wx"], self[f"{p}_wh"], self[f"{p}_b"])


def init_params(config: ModelConfig, rng_seed, dtype=np.float32) -> ModelParams:
    """Draw every parameter i.i.d. uniform(-0.1, 0.1) from a seeded generator."""
    config.validate()
    rng = np.random.default_rng(rng_seed)
    tensors = {
        name: Tensor(
            rng.uniform(-0.1, 0.1, size=shape).astype(dtype), requires_grad=True
        )
        for name, shape in shape_manifest(config)
    }
    return ModelParams(config, tensors)


@dataclass
class DecoderState:
    """Per-layer (h, c) pairs plus the carried attentional output."""

    layers: list[tuple[Tensor, Tensor]]
    input_feed: Tensor


def lstm_cell(
    x: Tensor, h: Tensor, c: Tensor, weights: LSTMWeights, tape: Optional[Tape] = None
):
    """One LSTM step: gates [i, f, g, o] from x and h, then the fused update."""
    pre = T.add_bias(
        T.add(T.matmul(x, weights.wx, tape), T.matmul(h, weights.wh, tape), tape),
        weights.b,
        tape,
    )
    return T.lstm_gates(pre, c, tape)


def embed(
    ids: np.ndarray,
    feat_ids: list[np.ndarray],
    params: ModelParams,
    side: str = "src",
    tape: Optional[Tape] = None,
) -> Tensor:
    """Look up word (and feature) embeddings for an id matrix.

    Returns [batch, len, word_vec + num_features * feat_vec]; the feature
    channels are concatenated after the word channels.
    """
    ids = np.asarray(ids)
    b, length = ids.shape
    table = params["src_embedding" if side == "src" else "tgt_embedding"]
    word = T.reshape(
        T.gather_rows(table, ids.reshape(-1), tape), (b, length, table.shape[1]), tape
    )
    parts = [word]
    for k, f_ids in enumerate(feat_ids):
        ftable = params[f"feat_embedding_{k}"]
        parts.append(
            T.reshape(
                T.gather_rows(ftable, np.asarray(f_ids).reshape(-1), tape),
                (b, length, ftable.shape[1]),
                tape,
            )
        )
    return parts[0] if len(parts) == 1 else T.concat(parts, 2, tape)


def _zeros(batch: int, width: int, dtype) -> Tensor:
    return Tensor(np.zeros((batch, width), dtype=dtype))


def _step_mask(lengths: np.ndarray, t: int, width: int, dtype):
    """(mask, inverse) [batch, width] tensors for step t, or (None, None) if all live."""
    live = (lengths > t).astype(dtype)
    if live.all():
        return None, None
    m = np.repeat(live[:, None], width, axis=1)
    return Tensor(m), Tensor(1.0 - m)


def _masked_update(new: Tensor, prev: Tensor, m, m_inv, tape):
    # Rows past their true length keep the previous state bit-for-bit.
    if m is None:
        return new
    return T.add(T.mul(new, m, tape), T.mul(prev, m_inv, tape), tape)


def _run_direction(
    steps: list[Tensor],
    weights: LSTMWeights,
    lengths: np.ndarray,
    reverse: bool,
    tape: Optional[Tape],
):
    """One recurrence over the step list; returns per-step outputs and finals.

    Outputs are zeroed past each row's length; the reverse pass starts from
    the suffix so padded rows stay zero until their true span begins.
    """
    batch = steps[0].shape[0]
    width = weights.wh.shape[0]
    dtype = weights.wh.dtype
    h = _zeros(batch, width, dtype)
    c = _zeros(batch, width, dtype)
    order = range(len(steps) - 1, -1, -1) if reverse else range(len(steps))
    outputs: dict[int, Tensor] = {}
    for t in order:
        h_new, c_new = lstm_cell(steps[t], h, c, weights, tape)
        m, m_inv = _step_mask(lengths, t, width, dtype)
        h = _masked_update(h_new, h, m, m_inv, tape)
        c = _masked_update(c_new, c, m, m_inv, tape)
        outputs[t] = h if m is None else T.mul(h, m, tape)
    return [outputs[t] for t in range(len(steps))], h, c


def encode_sequence(batch: Batch, params: ModelParams, config: ModelConfig,
                    tape: Optional[Tape] = None,
                    dropout_rng: Optional[np.random.Generator] = None,
                    dropout: float = 0.0):
    """Run the stacked encoder.

    Returns (context [batch, src_len, rnn_size], finals) where finals is one
    (h, c) pair per layer, each [batch, rnn_size], taken at every row's true
    last position. Context rows past a row's length are exactly zero.
    """
    b, src_len = batch.src.shape
    lengths = batch.src_lengths
    embedded = embed(batch.src, batch.src_feats, params, "src", tape)
    if dropout_rng is not None and dropout > 0.0:
        embedded = T.dropout(embedded, dropout, dropout_rng, tape)
    steps = [
        T.reshape(T.slice_axis(embedded, 1, t, t + 1, tape), (b, config.embed_size), tape)
        for t in range(src_len)
    ]

    directions = ("fwd", "bwd") if config.bidirectional else ("fwd",)
    finals: list[tuple[Tensor, Tensor]] = []
    for layer in range(config.layers):
        per_dir = []
        dir_finals = []
        for d in directions:
            outs, h_fin, c_fin = _run_direction(
                steps, params.enc_weights(layer, d), lengths, d == "bwd", tape
            )
            per_dir.append(outs)
            dir_finals.append((h_fin, c_fin))
        if len(per_dir) == 1:
            outputs = per_dir[0]
            finals.append(dir_finals[0])
        else:
            outputs = [
                T.concat([per_dir[0][t], per_dir[1][t]], 1, tape)
                for t in range(src_len)
            ]
            finals.append(
                (
                    T.concat([dir_finals[0][0], dir_finals[1][0]], 1, tape),
                    T.concat([dir_finals[0][1], dir_finals[1][1]], 1, tape),
                )
            )
        if config.residual and layer >= 1:
            outputs = [T.add(o, s, tape) for o, s in zip(outputs, steps)]
        if layer + 1 < config.layers:
            if dropout_rng is not None and dropout > 0.0:
                outputs = [T.dropout(o, dropout, dropout_rng, tape) for o in outputs]
            steps = outputs

    context = T.concat(
        [T.reshape(o, (b, 1, config.rnn_size), tape) for o in outputs], 1, tape
    )
    return context, finals


def initial_decoder_state(
    finals: list[tuple[Tensor, Tensor]], config: ModelConfig, batch_size: int
) -> DecoderState:
    """Copy encoder finals layer-by-layer; input feed starts at zero."""
    dtype = finals[0][0].dtype
    return DecoderState(
        layers=[(h, c) for h, c in finals],
        input_feed=_zeros(batch_size, config.rnn_size, dtype),
    )


def _lengths_mask(lengths: np.ndarray, width: int) -> np.ndarray:
    return np.arange(width)[None, :] < np.asarray(lengths)[:, None]


def attention(
    h_t: Tensor,
    context: Tensor,
    src_lengths: np.ndarray,
    params: ModelParams,
    tape: Optional[Tape] = None,
    wc_t: Optional[Tensor] = None,
):
    """Global attention with a bilinear score and tanh output mix.

    score(h_t, h_s) = h_t . (W_a h_s); weights are a masked softmax over true
    source positions; h_tilde = tanh(W_c [mix; h_t]).
    """
    q = T.matmul(h_t, params["attn_wa"], tape)
    scores = T.attn_scores(q, context, tape)
    weights = T.softmax_rows(scores, _lengths_mask(src_lengths, scores.shape[1]), tape)
    mixed = T.attn_mix(weights, context, tape)
    if wc_t is None:
        wc_t = T.transpose(params["attn_wc"], tape)
    h_tilde = T.tanh(T.matmul(T.concat([mixed, h_t], 1, tape), wc_t, tape), tape)
    return h_tilde, weights


def decode_step(
    y_prev: np.ndarray,
    state: DecoderState,
    context: Tensor,
    src_lengths: np.ndarray,
    params: ModelParams,
    config: ModelConfig,
    tape: Optional[Tape] = None,
    dropout_rng: Optional[np.random.Generator] = None,
    dropout: float = 0.0,
    wc_t: Optional[Tensor] = None,
):
    """Advance the decoder one target position.

    The step input is the previous token's embedding, concatenated with the
    carried attentional output when input feeding is on. Returns
    (h_tilde, new_state, attention_weights).
    """
    if len(state.layers) != config.layers:
        raise ShapeError(
            f"decoder state has {len(state.layers)} layers, config wants {config.layers}"
        )
    emb = T.gather_rows(params["tgt_embedding"], np.asarray(y_prev), tape)
    if dropout_rng is not None and dropout > 0.0:
        emb = T.dropout(emb, dropout, dropout_rng, tape)
    x = T.concat([emb, state.input_feed], 1, tape) if config.input_feed else emb

    new_layers: list[tuple[Tensor, Tensor]] = []
    for layer in range(config.layers):
        h_prev, c_prev = state.layers[layer]
        h_new, c_new = lstm_cell(x, h_prev, c_prev, params.dec_weights(layer), tape)
        new_layers.append((h_new, c_new))
        out = T.add(h_new, x, tape) if config.residual and layer >= 1 else h_new
        if layer + 1 < config.layers and dropout_rng is not None and dropout > 0.0:
            out = T.dropout(out, dropout, dropout_rng, tape)
        x = out

    h_tilde, weights = attention(x, context, src_lengths, params, tape, wc_t)
    return h_tilde, DecoderState(new_layers, h_tilde), weights


def generator_logprobs(
    h_tilde: Tensor,
    params: ModelParams,
    tape: Optional[Tape] = None,
    gen_wt: Optional[Tensor] = None,
) -> Tensor:
    """Log-softmax of the output projection; each row's logsumexp is 0."""
    if gen_wt is None:
        gen_wt = T.transpose(params["generator_w"], tape)
    logits = T.add_bias(T.matmul(h_tilde, gen_wt, tape), params["generator_b"], tape)
    return T.log_softmax_rows(logits, tape)


def teacher_forced_logprobs(
    batch: Batch,
    params: ModelParams,
    config: ModelConfig,
    tape: Optional[Tape] = None,
    dropout_rng: Optional[np.random.Generator] = None,
    dropout: float = 0.0,
):
    """Full training forward pass under teacher forcing.

    Returns (logprobs [steps*batch, tgt_vocab], flat_targets [steps*batch])
    where row t*batch+b scores target position t of row b.
    """
    b = batch.size
    context, finals = encode_sequence(batch, params, config, tape, dropout_rng, dropout)
    state = initial_decoder_state(finals, config, b)
    wc_t = T.transpose(params["attn_wc"], tape)
    gen_wt = T.transpose(params["generator_w"], tape)
    outputs = []
    for t in range(batch.tgt_in.shape[1]):
        h_tilde, state, _ = decode_step(
            batch.tgt_in[:, t], state, context, batch.src_lengths,
            params, config, tape, dropout_rng, dropout, wc_t,
        )
        outputs.append(h_tilde)
    stacked = outputs[0] if len(outputs) == 1 else T.concat(outputs, 0, tape)
    logprobs = generator_logprobs(stacked, params, tape, gen_wt)
    flat_targets = batch.tgt_out.T.reshape(-1)
    return logprobs, flat_targets
