"""Backend parity and summation-order exactness for the hot kernels."""

import numpy as np
import pytest

from seqforge.kernels import numba_backend, numpy_backend
from oracles import naive_matmul

BACKENDS = [numpy_backend, numba_backend]


@pytest.fixture(params=BACKENDS, ids=["numpy", "numba"])
def backend(request):
    return request.param


@pytest.mark.parametrize("dtype", [np.float32, np.float64])
def test_matmul_bitwise_equals_naive_oracle(backend, dtype):
    rng = np.random.default_rng(7)
    for _ in range(10):
        m, k, n = rng.integers(1, 6, size=3)
        a = rng.standard_normal((m, k)).astype(dtype)
        b = rng.standard_normal((k, n)).astype(dtype)
        assert (backend.matmul(a, b) == naive_matmul(a, b)).all()


def test_matmul_backends_bitwise_identical():
    rng = np.random.default_rng(8)
    a = rng.standard_normal((17, 33))
    b = rng.standard_normal((33, 9))
    assert (numba_backend.matmul(a, b) == numpy_backend.matmul(a, b)).all()


def test_softmax_rows_parity_and_masking(backend):
    rng = np.random.default_rng(9)
    x = rng.standard_normal((6, 7))
    mask = rng.random((6, 7)) > 0.3
    mask[:, 0] = True
    y = backend.softmax_rows(x, mask)
    assert np.all(y[~mask] == 0.0)
    np.testing.assert_allclose(y.sum(axis=1), 1.0, atol=1e-12)
    other = numpy_backend if backend is numba_backend else numba_backend
    np.testing.assert_allclose(y, other.softmax_rows(x, mask), rtol=1e-13, atol=1e-15)


def test_softmax_rows_stable_at_large_magnitudes(backend):
    x = np.array([[1000.0, 1000.0], [-1000.0, -1000.0]])
    y = backend.softmax_rows(x, np.ones_like(x, dtype=bool))
    np.testing.assert_allclose(y, 0.5)


def test_log_softmax_parity(backend):
    rng = np.random.default_rng(10)
    x = rng.standard_normal((5, 12))
    y = backend.log_softmax_rows(x)
    np.testing.assert_allclose(np.exp(y).sum(axis=1), 1.0, atol=1e-12)
    other = numpy_backend if backend is numba_backend else numba_backend
    np.testing.assert_allclose(y, other.log_softmax_rows(x), rtol=1e-13, atol=1e-15)


def test_lstm_gates_parity(backend):
    rng = np.random.default_rng(11)
    pre = rng.standard_normal((4, 12))
    c = rng.standard_normal((4, 3))
    got = backend.lstm_gates(pre, c)
    other = numpy_backend if backend is numba_backend else numba_backend
    want = other.lstm_gates(pre, c)
    for g, w in zip(got, want):
        np.testing.assert_allclose(g, w, rtol=1e-13, atol=1e-15)


def test_attention_kernels_parity(backend):
    rng = np.random.default_rng(12)
    q = rng.standard_normal((3, 5))
    ctx = rng.standard_normal((3, 6, 5))
    w = rng.random((3, 6))
    other = numpy_backend if backend is numba_backend else numba_backend
    assert (backend.attn_scores(q, ctx) == other.attn_scores(q, ctx)).all()
    assert (backend.attn_mix(w, ctx) == other.attn_mix(w, ctx)).all()
    ds = rng.standard_normal((3, 6))
    dm = rng.standard_normal((3, 5))
    for got, want in zip(
        backend.attn_scores_bwd(ds, q, ctx) + backend.attn_mix_bwd(dm, w, ctx),
        other.attn_scores_bwd(ds, q, ctx) + other.attn_mix_bwd(dm, w, ctx),
    ):
        assert (got == want).all()


def test_scatter_add_rows_accumulates_duplicates(backend):
    table = np.zeros((4, 2))
    ids = np.array([1, 1, 3], dtype=np.int64)
    g = np.array([[1.0, 2.0], [10.0, 20.0], [5.0, 6.0]])
    backend.scatter_add_rows(table, ids, g)
    np.testing.assert_array_equal(
        table, [[0, 0], [11, 22], [0, 0], [5, 6]]
    )
