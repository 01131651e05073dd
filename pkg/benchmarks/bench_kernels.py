#!/usr/bin/env python3
"""Benchmark the numba kernels against the pure-numpy fallback.

Times each hot kernel at training-scale shapes, then one full training step
of the desk-scale copy-task model under whichever backend is active plus the
other one. Run:

    python benchmarks/bench_kernels.py [--dtype float32|float64] [--repeat N]
"""

import argparse
import time

import numpy as np

from seqforge.kernels import numba_backend, numpy_backend


def timeit(fn, repeat):
    fn()  # warm-up (and numba compilation)
    best = float("inf")
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def kernel_cases(dtype, rng):
    b, s, h, v = 32, 10, 64, 24
    a = rng.standard_normal((b, 96)).astype(dtype)
    w = rng.standard_normal((96, 4 * h)).astype(dtype)
    x = rng.standard_normal((b * s, v)).astype(dtype)
    mask = np.ones((b, s), dtype=bool)
    scores = rng.standard_normal((b, s)).astype(dtype)
    pre = rng.standard_normal((b, 4 * h)).astype(dtype)
    c = rng.standard_normal((b, h)).astype(dtype)
    q = rng.standard_normal((b, h)).astype(dtype)
    ctx = rng.standard_normal((b, s, h)).astype(dtype)
    return [
        ("matmul [32,96]x[96,256]", lambda k: k.matmul(a, w)),
        ("softmax_rows [32,10]", lambda k: k.softmax_rows(scores, mask)),
        ("log_softmax [320,24]", lambda k: k.log_softmax_rows(x)),
        ("lstm_gates [32,256]", lambda k: k.lstm_gates(pre, c)),
        ("attn_scores [32,10,64]", lambda k: k.attn_scores(q, ctx)),
        ("attn_mix [32,10,64]", lambda k: k.attn_mix(scores, ctx)),
    ]


def bench_kernels(dtype, repeat):
    rng = np.random.default_rng(0)
    print(f"\nkernels ({np.dtype(dtype).name}, best of {repeat}):")
    print(f"{'kernel':28s} {'numpy':>10s} {'numba':>10s} {'speedup':>8s}")
    for name, call in kernel_cases(dtype, rng):
        t_np = timeit(lambda: call(numpy_backend), repeat)
        t_nb = timeit(lambda: call(numba_backend), repeat)
        print(f"{name:28s} {t_np * 1e6:9.1f}us {t_nb * 1e6:9.1f}us "
              f"{t_np / t_nb:7.1f}x")


def bench_training_step(dtype, repeat):
    from seqforge.data import BOS_ID, EOS_ID, Example, make_batch
    from seqforge.model import ModelConfig, init_params, teacher_forced_logprobs
    from seqforge.tensor import Tape, backward
    from seqforge.trainer import nll_loss, sgd_update

    rng = np.random.default_rng(1)
    config = ModelConfig(
        src_vocab_size=24, tgt_vocab_size=24, layers=1, rnn_size=64,
        word_vec_size=32, input_feed=True,
    ).validate()
    params = init_params(config, 0, dtype=dtype)
    examples = []
    for _ in range(32):
        seq = rng.integers(4, 24, size=8).tolist()
        examples.append(Example(seq, [], [BOS_ID] + seq + [EOS_ID]))
    batch = make_batch(examples, list(range(32)))

    def step():
        tape = Tape()
        logprobs, targets = teacher_forced_logprobs(batch, params, config, tape)
        loss, ntokens = nll_loss(logprobs, targets, tape=tape)
        backward(loss, tape)
        inv = params.dtype.type(1.0 / ntokens)
        for _, p in params.items():
            p.grad *= inv
        sgd_update(params, 0.0, 5.0)

    t = timeit(step, repeat)
    print(f"full train step (batch 32, len 8, rnn 64): {t * 1e3:.2f}ms")


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--dtype", choices=("float32", "float64"), default="float64")
    ap.add_argument("--repeat", type=int, default=20)
    args = ap.parse_args()
    dtype = np.dtype(args.dtype)

    bench_kernels(dtype, args.repeat)

    import seqforge.kernels as K
    print(f"\nactive backend for the end-to-end step: {K.BACKEND} "
          f"(set SEQFORGE_BACKEND to switch)")
    bench_training_step(dtype, max(args.repeat // 2, 3))


if __name__ == "__main__":
    main()
