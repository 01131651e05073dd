"""Pure-numpy reference implementations of the hot kernels.

Reductions that feed determinism guarantees accumulate sequentially over the
contracted index (a Python loop of vectorized updates), so results are
bit-identical to the numba backend's scalar loops and to a naive oracle.
"""

import numpy as np


def matmul(a, b):
    """C = A @ B with the contraction index summed in ascending order."""
    m, k = a.shape
    n = b.shape[1]
    out = np.zeros((m, n), dtype=a.dtype)
    for p in range(k):
        out += a[:, p, None] * b[p, :]
    return out


def softmax_rows(x, mask):
    """Row softmax; positions where mask is False get exactly 0.

    Max-subtraction keeps large magnitudes from overflowing. Each row must
    have at least one unmasked position (checked by the caller). The row sum
    runs left to right so appending masked columns cannot perturb a row.
    """
    neg_inf = np.array(-np.inf, dtype=x.dtype)
    shifted = np.where(mask, x, neg_inf)
    shifted = shifted - shifted.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    s = np.zeros(x.shape[0], dtype=x.dtype)
    for t in range(x.shape[1]):
        s += e[:, t]
    return e / s[:, None]


def softmax_rows_bwd(y, dy):
    inner = np.zeros(y.shape[0], dtype=y.dtype)
    for t in range(y.shape[1]):
        inner += dy[:, t] * y[:, t]
    return y * (dy - inner[:, None])


def log_softmax_rows(x):
    mx = x.max(axis=1, keepdims=True)
    shifted = x - mx
    lse = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    return shifted - lse


def log_softmax_rows_bwd(y, dy):
    total = dy.sum(axis=1, keepdims=True)
    return dy - np.exp(y) * total


def _sigmoid(x):
    # Branch on sign so exp never overflows.
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def lstm_gates(preact, c_prev):
    """Fused gate activation: preact is [batch, 4H] packed as [i, f, g, o].

    Returns (h, c, i, f, g, o, tc) where tc = tanh(c) is kept for backward.
    """
    hsize = c_prev.shape[1]
    i = _sigmoid(preact[:, 0 * hsize:1 * hsize])
    f = _sigmoid(preact[:, 1 * hsize:2 * hsize])
    g = np.tanh(preact[:, 2 * hsize:3 * hsize])
    o = _sigmoid(preact[:, 3 * hsize:4 * hsize])
    c = f * c_prev + i * g
    tc = np.tanh(c)
    h = o * tc
    return h, c, i, f, g, o, tc


def lstm_gates_bwd(dh, dc, i, f, g, o, c_prev, tc):
    """Gradients of lstm_gates w.r.t. the packed preactivation and c_prev."""
    do = dh * tc
    dc_tot = dc + dh * o * (1.0 - tc * tc)
    di = dc_tot * g
    dg = dc_tot * i
    df = dc_tot * c_prev
    dc_prev = dc_tot * f
    dpre = np.concatenate(
        [
            di * i * (1.0 - i),
            df * f * (1.0 - f),
            dg * (1.0 - g * g),
            do * o * (1.0 - o),
        ],
        axis=1,
    )
    return dpre, dc_prev


def attn_scores(q, ctx):
    """scores[b, t] = sum_h q[b, h] * ctx[b, t, h], h ascending."""
    b, s, h = ctx.shape
    out = np.zeros((b, s), dtype=q.dtype)
    for j in range(h):
        out += q[:, j, None] * ctx[:, :, j]
    return out


def attn_scores_bwd(ds, q, ctx):
    b, s, h = ctx.shape
    dq = np.zeros_like(q)
    for t in range(s):
        dq += ds[:, t, None] * ctx[:, t, :]
    dctx = ds[:, :, None] * q[:, None, :]
    return dq, dctx


def attn_mix(w, ctx):
    """mixed[b, h] = sum_t w[b, t] * ctx[b, t, h], t ascending."""
    b, s, h = ctx.shape
    out = np.zeros((b, h), dtype=w.dtype)
    for t in range(s):
        out += w[:, t, None] * ctx[:, t, :]
    return out


def attn_mix_bwd(dm, w, ctx):
    b, s, h = ctx.shape
    dw = np.zeros_like(w)
    for j in range(h):
        dw += dm[:, j, None] * ctx[:, :, j]
    dctx = w[:, :, None] * dm[:, None, :]
    return dw, dctx


def scatter_add_rows(table, ids, g):
    """table[ids[r]] += g[r] for each row r, in ascending row order."""
    np.add.at(table, ids, g)
