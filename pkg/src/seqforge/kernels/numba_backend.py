"""Numba-compiled hot kernels.

Every reduction runs sequentially over its contracted index (no fastmath, no
fused multiply-add), so results are bit-identical to the numpy backend's
accumulation loops and to naive scalar oracles, for float32 and float64
alike. Kernels stay single-threaded to keep summation order fixed.
"""

import math

import numpy as np
from numba import njit

_JIT = dict(cache=True, nogil=True)


@njit(**_JIT)
def matmul(a, b):
    m, k = a.shape
    n = b.shape[1]
    out = np.zeros((m, n), dtype=a.dtype)
    for i in range(m):
        for p in range(k):
            aip = a[i, p]
            for j in range(n):
                out[i, j] += aip * b[p, j]
    return out


@njit(**_JIT)
def softmax_rows(x, mask):
    m, n = x.shape
    out = np.zeros((m, n), dtype=x.dtype)
    for i in range(m):
        mx = -np.inf
        for j in range(n):
            if mask[i, j] and x[i, j] > mx:
                mx = x[i, j]
        s = x.dtype.type(0.0)
        for j in range(n):
            if mask[i, j]:
                e = math.exp(x[i, j] - mx)
                out[i, j] = e
                s += e
        for j in range(n):
            if mask[i, j]:
                out[i, j] /= s
    return out


@njit(**_JIT)
def softmax_rows_bwd(y, dy):
    m, n = y.shape
    dx = np.empty_like(y)
    for i in range(m):
        inner = y.dtype.type(0.0)
        for j in range(n):
            inner += dy[i, j] * y[i, j]
        for j in range(n):
            dx[i, j] = y[i, j] * (dy[i, j] - inner)
    return dx


@njit(**_JIT)
def log_softmax_rows(x):
    m, n = x.shape
    out = np.empty_like(x)
    for i in range(m):
        mx = x[i, 0]
        for j in range(1, n):
            if x[i, j] > mx:
                mx = x[i, j]
        s = x.dtype.type(0.0)
        for j in range(n):
            s += math.exp(x[i, j] - mx)
        lse = math.log(s)
        for j in range(n):
            out[i, j] = x[i, j] - mx - lse
    return out


@njit(**_JIT)
def log_softmax_rows_bwd(y, dy):
    m, n = y.shape
    dx = np.empty_like(y)
    for i in range(m):
        total = y.dtype.type(0.0)
        for j in range(n):
            total += dy[i, j]
        for j in range(n):
            dx[i, j] = dy[i, j] - math.exp(y[i, j]) * total
    return dx


@njit(**_JIT)
def _sigmoid_scalar(x):
    if x >= 0:
        return type(x)(1.0) / (type(x)(1.0) + math.exp(-x))
    e = math.exp(x)
    return e / (type(x)(1.0) + e)


@njit(**_JIT)
def lstm_gates(preact, c_prev):
    b, hsize = c_prev.shape
    h = np.empty_like(c_prev)
    c = np.empty_like(c_prev)
    i_g = np.empty_like(c_prev)
    f_g = np.empty_like(c_prev)
    g_g = np.empty_like(c_prev)
    o_g = np.empty_like(c_prev)
    tc = np.empty_like(c_prev)
    for r in range(b):
        for j in range(hsize):
            i = _sigmoid_scalar(preact[r, j])
            f = _sigmoid_scalar(preact[r, hsize + j])
            g = math.tanh(preact[r, 2 * hsize + j])
            o = _sigmoid_scalar(preact[r, 3 * hsize + j])
            cv = f * c_prev[r, j] + i * g
            t = math.tanh(cv)
            i_g[r, j] = i
            f_g[r, j] = f
            g_g[r, j] = g
            o_g[r, j] = o
            c[r, j] = cv
            tc[r, j] = t
            h[r, j] = o * t
    return h, c, i_g, f_g, g_g, o_g, tc


@njit(**_JIT)
def lstm_gates_bwd(dh, dc, i, f, g, o, c_prev, tc):
    b, hsize = c_prev.shape
    dpre = np.empty((b, 4 * hsize), dtype=c_prev.dtype)
    dc_prev = np.empty_like(c_prev)
    one = c_prev.dtype.type(1.0)
    for r in range(b):
        for j in range(hsize):
            do = dh[r, j] * tc[r, j]
            dc_tot = dc[r, j] + dh[r, j] * o[r, j] * (one - tc[r, j] * tc[r, j])
            di = dc_tot * g[r, j]
            dg = dc_tot * i[r, j]
            df = dc_tot * c_prev[r, j]
            dc_prev[r, j] = dc_tot * f[r, j]
            dpre[r, j] = di * i[r, j] * (one - i[r, j])
            dpre[r, hsize + j] = df * f[r, j] * (one - f[r, j])
            dpre[r, 2 * hsize + j] = dg * (one - g[r, j] * g[r, j])
            dpre[r, 3 * hsize + j] = do * o[r, j] * (one - o[r, j])
    return dpre, dc_prev


@njit(**_JIT)
def attn_scores(q, ctx):
    b, s, h = ctx.shape
    out = np.zeros((b, s), dtype=q.dtype)
    for r in range(b):
        for t in range(s):
            acc = q.dtype.type(0.0)
            for j in range(h):
                acc += q[r, j] * ctx[r, t, j]
            out[r, t] = acc
    return out


@njit(**_JIT)
def attn_scores_bwd(ds, q, ctx):
    b, s, h = ctx.shape
    dq = np.zeros_like(q)
    dctx = np.empty_like(ctx)
    for r in range(b):
        for t in range(s):
            dst = ds[r, t]
            for j in range(h):
                dq[r, j] += dst * ctx[r, t, j]
                dctx[r, t, j] = dst * q[r, j]
    return dq, dctx


@njit(**_JIT)
def attn_mix(w, ctx):
    b, s, h = ctx.shape
    out = np.zeros((b, h), dtype=w.dtype)
    for r in range(b):
        for t in range(s):
            wt = w[r, t]
            for j in range(h):
                out[r, j] += wt * ctx[r, t, j]
    return out


@njit(**_JIT)
def attn_mix_bwd(dm, w, ctx):
    b, s, h = ctx.shape
    dw = np.zeros_like(w)
    dctx = np.empty_like(ctx)
    for r in range(b):
        for t in range(s):
            acc = w.dtype.type(0.0)
            for j in range(h):
                acc += dm[r, j] * ctx[r, t, j]
                dctx[r, t, j] = w[r, t] * dm[r, j]
            dw[r, t] = acc
    return dw, dctx


@njit(**_JIT)
def scatter_add_rows(table, ids, g):
    rows, cols = g.shape
    for r in range(rows):
        dest = ids[r]
        for j in range(cols):
            table[dest, j] += g[r, j]
