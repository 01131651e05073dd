"""Dense tensors with reverse-mode automatic differentiation.

A Tensor wraps a row-major float array plus an optional gradient slot. Ops
are plain functions; passing a Tape records the backward rule, passing None
runs forward-only (the inference fast path). A Tape belongs to one forward/
backward pass on one thread; frozen tensors may be shared.

Determinism contract: every reduction inside the ops and kernels runs in a
fixed order, so identical inputs give bit-identical outputs run to run.
"""

from __future__ import annotations

from typing import Callable, Optional, Sequence

import numpy as np

from . import kernels as K
from .errors import (
    GatherIndexError,
    MaskedRowError,
    NonScalarLossError,
    ShapeError,
)

FLOAT_DTYPES = (np.float32, np.float64)


class Tensor:
    """A dense array with shape, data, and an optional gradient of equal size."""

    __slots__ = ("data", "requires_grad", "grad")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype.type not in FLOAT_DTYPES:
            arr = arr.astype(np.float64)
        arr = np.atleast_1d(arr)
        if arr.size == 0 or any(d < 1 for d in arr.shape):
            raise ShapeError(f"tensor dimensions must all be >= 1, got {arr.shape}")
        self.data = np.ascontiguousarray(arr)
        self.requires_grad = requires_grad
        self.grad: Optional[np.ndarray] = None

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype}{flag})"


class Tape:
    """Ordered record of executed ops for one forward pass.

    Entries are appended as ops execute, so the list is already topologically
    sorted; backward() walks it once in reverse.
    """

    __slots__ = ("entries",)

    def __init__(self):
        self.entries: list = []


class _Entry:
    __slots__ = ("inputs", "outputs", "backward")

    def __init__(self, inputs, outputs, backward):
        self.inputs = inputs
        self.outputs = outputs
        self.backward = backward


def record(
    tape: Tape,
    inputs: Sequence[Tensor],
    outputs: Sequence[Tensor],
    backward: Callable,
) -> None:
    """Append a custom op to the tape.

    `backward` receives one gradient array per output and returns one
    gradient array (or None) per input.
    """
    tape.entries.append(_Entry(tuple(inputs), tuple(outputs), backward))


def _result(data, inputs, tape, backward) -> Tensor:
    out = Tensor(data)
    out.requires_grad = any(t.requires_grad for t in inputs)
    if tape is not None and out.requires_grad:
        record(tape, inputs, (out,), backward)
    return out


def backward(loss: Tensor, tape: Tape) -> None:
    """Accumulate d(loss)/d(tensor) into .grad for everything on the tape.

    Gradients add across fan-out; leaf gradients persist until explicitly
    zeroed, so separate backward passes accumulate.
    """
    if loss.data.size != 1:
        raise NonScalarLossError(f"loss must be scalar, got shape {loss.shape}")
    # Intermediate grads belong to this walk alone; only leaves accumulate
    # across separate backward calls.
    for entry in tape.entries:
        for o in entry.outputs:
            o.grad = None
    _accumulate(loss, np.ones_like(loss.data))
    for entry in reversed(tape.entries):
        out_grads = [o.grad for o in entry.outputs]
        if all(g is None for g in out_grads):
            continue
        out_grads = [
            g if g is not None else np.zeros_like(o.data)
            for g, o in zip(out_grads, entry.outputs)
        ]
        in_grads = entry.backward(*out_grads)
        for t, g in zip(entry.inputs, in_grads):
            if g is not None and t.requires_grad:
                _accumulate(t, g)


def _accumulate(t: Tensor, g: np.ndarray) -> None:
    if t.grad is None:
        t.grad = g.astype(t.data.dtype, copy=True).reshape(t.data.shape)
    else:
        t.grad += g.reshape(t.data.shape)


# ---------------------------------------------------------------------------
# Linear algebra
# ---------------------------------------------------------------------------

def matmul(a: Tensor, b: Tensor, tape: Optional[Tape] = None) -> Tensor:
    """Matrix product of two 2-D tensors, inner index summed in fixed order."""
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} x {b.shape}")

    def bwd(g):
        ga = K.matmul(g, np.ascontiguousarray(b.data.T)) if a.requires_grad else None
        gb = K.matmul(np.ascontiguousarray(a.data.T), g) if b.requires_grad else None
        return ga, gb

    return _result(K.matmul(a.data, b.data), (a, b), tape, bwd)


def transpose(a: Tensor, tape: Optional[Tape] = None) -> Tensor:
    if a.data.ndim != 2:
        raise ShapeError(f"transpose expects a 2-D tensor, got {a.shape}")
    return _result(a.data.T.copy(), (a,), tape, lambda g: (g.T,))


# ---------------------------------------------------------------------------
# Pointwise and shape ops
# ---------------------------------------------------------------------------

def add(a: Tensor, b: Tensor, tape: Optional[Tape] = None) -> Tensor:
    if a.shape != b.shape:
        raise ShapeError(f"add: shapes differ {a.shape} vs {b.shape}")
    return _result(a.data + b.data, (a, b), tape, lambda g: (g, g))


def add_bias(x: Tensor, bias: Tensor, tape: Optional[Tape] = None) -> Tensor:
    """Add a length-n bias vector to every row of an [m, n] tensor."""
    if x.data.ndim != 2 or bias.data.ndim != 1 or x.shape[1] != bias.shape[0]:
        raise ShapeError(f"add_bias: shapes {x.shape} and {bias.shape} do not align")
    return _result(
        x.data + bias.data, (x, bias), tape, lambda g: (g, g.sum(axis=0))
    )


def mul(a: Tensor, b: Tensor, tape: Optional[Tape] = None) -> Tensor:
    if a.shape != b.shape:
        raise ShapeError(f"mul: shapes differ {a.shape} vs {b.shape}")

    def bwd(g):
        return (
            g * b.data if a.requires_grad else None,
            g * a.data if b.requires_grad else None,
        )

    return _result(a.data * b.data, (a, b), tape, bwd)


def scale(a: Tensor, factor: float, tape: Optional[Tape] = None) -> Tensor:
    factor = a.data.dtype.type(factor)
    return _result(a.data * factor, (a,), tape, lambda g: (g * factor,))


def tanh(a: Tensor, tape: Optional[Tape] = None) -> Tensor:
    y = np.tanh(a.data)
    return _result(y, (a,), tape, lambda g: (g * (1.0 - y * y),))


def sigmoid(a: Tensor, tape: Optional[Tape] = None) -> Tensor:
    y = _sigmoid_stable(a.data)
    return _result(y, (a,), tape, lambda g: (g * y * (1.0 - y),))


def _sigmoid_stable(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def concat(parts: Sequence[Tensor], axis: int, tape: Optional[Tape] = None) -> Tensor:
    if not parts:
        raise ShapeError("concat of zero tensors")
    base = list(parts[0].shape)
    for p in parts[1:]:
        other = list(p.shape)
        if len(other) != len(base) or any(
            o != b for d, (o, b) in enumerate(zip(other, base)) if d != axis
        ):
            raise ShapeError(
                f"concat axis {axis}: off-axis shapes differ "
                f"({parts[0].shape} vs {p.shape})"
            )
    sizes = [p.shape[axis] for p in parts]
    offsets = np.cumsum([0] + sizes)

    def bwd(g):
        return tuple(
            np.take(g, range(offsets[i], offsets[i + 1]), axis=axis)
            if p.requires_grad
            else None
            for i, p in enumerate(parts)
        )

    data = np.concatenate([p.data for p in parts], axis=axis)
    return _result(data, tuple(parts), tape, bwd)


def slice_axis(
    a: Tensor, axis: int, start: int, stop: int, tape: Optional[Tape] = None
) -> Tensor:
    """Contiguous sub-range [start, stop) along one axis."""
    if not (0 <= start < stop <= a.shape[axis]):
        raise ShapeError(
            f"slice [{start}:{stop}] out of range for axis {axis} of {a.shape}"
        )
    idx = tuple(
        slice(start, stop) if d == axis else slice(None) for d in range(a.data.ndim)
    )

    def bwd(g):
        full = np.zeros_like(a.data)
        full[idx] = g
        return (full,)

    return _result(a.data[idx].copy(), (a,), tape, bwd)


def reshape(a: Tensor, shape: Sequence[int], tape: Optional[Tape] = None) -> Tensor:
    shape = tuple(shape)
    if int(np.prod(shape)) != a.data.size:
        raise ShapeError(f"reshape {a.shape} -> {shape}: element count differs")
    return _result(
        a.data.reshape(shape).copy(), (a,), tape, lambda g: (g.reshape(a.shape),)
    )


def gather_rows(table: Tensor, ids: np.ndarray, tape: Optional[Tape] = None) -> Tensor:
    """Pick rows of a 2-D table by index; backward scatter-adds into the table."""
    ids = np.asarray(ids)
    if table.data.ndim != 2 or ids.ndim != 1:
        raise ShapeError("gather_rows expects a 2-D table and 1-D indices")
    nrows = table.shape[0]
    if ids.size and (ids.min() < 0 or ids.max() >= nrows):
        bad = ids[(ids < 0) | (ids >= nrows)][0]
        raise GatherIndexError(f"index {bad} out of range for {nrows} rows")

    def bwd(g):
        dt = np.zeros_like(table.data)
        K.scatter_add_rows(dt, ids.astype(np.int64), np.ascontiguousarray(g))
        return (dt,)

    return _result(table.data[ids], (table,), tape, bwd)


def dropout(
    x: Tensor, rate: float, rng: np.random.Generator, tape: Optional[Tape] = None
) -> Tensor:
    """Inverted dropout; identity when rate is 0."""
    if rate == 0.0:
        return x
    keep = (rng.random(x.shape) >= rate).astype(x.data.dtype)
    keep *= x.data.dtype.type(1.0 / (1.0 - rate))
    return _result(x.data * keep, (x,), tape, lambda g: (g * keep,))


def sum_all(a: Tensor, tape: Optional[Tape] = None) -> Tensor:
    """Sum of every element, as a shape-(1,) scalar tensor."""
    total = np.array([a.data.sum()], dtype=a.data.dtype)
    return _result(
        total, (a,), tape, lambda g: (np.full_like(a.data, g[0]),)
    )


# ---------------------------------------------------------------------------
# Row-normalized outputs
# ---------------------------------------------------------------------------

def softmax_rows(
    x: Tensor, mask: Optional[np.ndarray] = None, tape: Optional[Tape] = None
) -> Tensor:
    """Rowwise softmax of a 2-D tensor.

    `mask` (boolean, same shape) excludes positions: they come out exactly 0
    and receive no gradient. Every row must keep at least one live position.
    """
    if x.data.ndim != 2:
        raise ShapeError(f"softmax_rows expects 2-D input, got {x.shape}")
    if mask is None:
        mask_arr = np.ones(x.shape, dtype=np.bool_)
    else:
        mask_arr = np.asarray(mask, dtype=np.bool_)
        if mask_arr.shape != x.shape:
            raise ShapeError(
                f"softmax mask shape {mask_arr.shape} differs from input {x.shape}"
            )
        if not mask_arr.any(axis=1).all():
            row = int(np.flatnonzero(~mask_arr.any(axis=1))[0])
            raise MaskedRowError(f"softmax row {row} is fully masked")
    y = K.softmax_rows(x.data, mask_arr)
    return _result(y, (x,), tape, lambda g: (K.softmax_rows_bwd(y, g),))


def log_softmax_rows(x: Tensor, tape: Optional[Tape] = None) -> Tensor:
    """Rowwise log-softmax; each row's logsumexp is 0."""
    if x.data.ndim != 2:
        raise ShapeError(f"log_softmax_rows expects 2-D input, got {x.shape}")
    y = K.log_softmax_rows(x.data)
    return _result(y, (x,), tape, lambda g: (K.log_softmax_rows_bwd(y, g),))


# ---------------------------------------------------------------------------
# Fused recurrent / attention ops
# ---------------------------------------------------------------------------

def lstm_gates(preact: Tensor, c_prev: Tensor, tape: Optional[Tape] = None):
    """Fused LSTM gate activation.

    `preact` is [batch, 4H] packed as [input, forget, candidate, output]
    blocks; returns the new hidden and cell states, each [batch, H]:
    c' = sigmoid(f)*c + sigmoid(i)*tanh(g), h' = sigmoid(o)*tanh(c').
    """
    if (
        preact.data.ndim != 2
        or c_prev.data.ndim != 2
        or preact.shape[0] != c_prev.shape[0]
        or preact.shape[1] != 4 * c_prev.shape[1]
    ):
        raise ShapeError(
            f"lstm_gates: preact {preact.shape} must be [batch, 4*{c_prev.shape}]"
        )
    h, c, i, f, g, o, tc = K.lstm_gates(preact.data, c_prev.data)
    h_t = Tensor(h)
    c_t = Tensor(c)
    needs = preact.requires_grad or c_prev.requires_grad
    h_t.requires_grad = needs
    c_t.requires_grad = needs
    if tape is not None and needs:

        def bwd(dh, dc):
            dpre, dc_prev = K.lstm_gates_bwd(dh, dc, i, f, g, o, c_prev.data, tc)
            return dpre, dc_prev

        record(tape, (preact, c_prev), (h_t, c_t), bwd)
    return h_t, c_t


def attn_scores(q: Tensor, ctx: Tensor, tape: Optional[Tape] = None) -> Tensor:
    """Batched dot product: scores[b, t] = q[b] . ctx[b, t]."""
    if (
        q.data.ndim != 2
        or ctx.data.ndim != 3
        or q.shape[0] != ctx.shape[0]
        or q.shape[1] != ctx.shape[2]
    ):
        raise ShapeError(f"attn_scores: q {q.shape} vs context {ctx.shape}")

    def bwd(g):
        dq, dctx = K.attn_scores_bwd(g, q.data, ctx.data)
        return (
            dq if q.requires_grad else None,
            dctx if ctx.requires_grad else None,
        )

    return _result(K.attn_scores(q.data, ctx.data), (q, ctx), tape, bwd)


def attn_mix(w: Tensor, ctx: Tensor, tape: Optional[Tape] = None) -> Tensor:
    """Weighted mix of context vectors: out[b] = sum_t w[b, t] * ctx[b, t]."""
    if (
        w.data.ndim != 2
        or ctx.data.ndim != 3
        or w.shape[0] != ctx.shape[0]
        or w.shape[1] != ctx.shape[1]
    ):
        raise ShapeError(f"attn_mix: weights {w.shape} vs context {ctx.shape}")

    def bwd(g):
        dw, dctx = K.attn_mix_bwd(g, w.data, ctx.data)
        return (
            dw if w.requires_grad else None,
            dctx if ctx.requires_grad else None,
        )

    return _result(K.attn_mix(w.data, ctx.data), (w, ctx), tape, bwd)
