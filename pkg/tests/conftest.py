import numpy as np
import pytest

from seqforge.data import Example
from seqforge.model import ModelConfig, init_params


def rel_error(analytic, numeric):
    return np.abs(analytic - numeric) / np.maximum(
        1.0, np.maximum(np.abs(analytic), np.abs(numeric))
    )


def finite_difference_check(tensors, loss_fn, tol=1e-6, eps=1e-5):
    """Compare analytic gradients to central differences, entry by entry.

    `loss_fn()` must rebuild the forward pass from the tensors' current data
    and return a python float. Analytic gradients are read from .grad (the
    caller runs backward first).
    """
    for t in tensors:
        assert t.grad is not None, "missing analytic gradient"
        flat = t.data.reshape(-1)
        numeric = np.zeros_like(flat)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            up = loss_fn()
            flat[i] = orig - eps
            down = loss_fn()
            flat[i] = orig
            numeric[i] = (up - down) / (2.0 * eps)
        err = rel_error(t.grad.reshape(-1), numeric)
        assert err.max() < tol, f"gradient mismatch: max rel error {err.max():.3g}"


def tiny_config(**overrides) -> ModelConfig:
    base = dict(
        src_vocab_size=11,
        tgt_vocab_size=11,
        layers=1,
        rnn_size=4,
        word_vec_size=3,
        feat_vec_size=2,
        feat_vocab_sizes=(),
        bidirectional=False,
        residual=False,
        input_feed=True,
        dropout=0.0,
    )
    base.update(overrides)
    return ModelConfig(**base).validate()


def tiny_params(config, seed=0):
    return init_params(config, seed, dtype=np.float64)


def random_example(rng, config, src_len, tgt_len) -> Example:
    src = rng.integers(4, config.src_vocab_size, size=src_len).tolist()
    feats = [
        rng.integers(4, v, size=src_len).tolist() for v in config.feat_vocab_sizes
    ]
    tgt = [2] + rng.integers(4, config.tgt_vocab_size, size=tgt_len).tolist() + [3]
    return Example(src_ids=src, src_feat_ids=feats, tgt_ids=tgt)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
