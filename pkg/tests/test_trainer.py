"""Loss, SGD updates, decay schedule, perplexity, and the epoch loop."""

import math

import numpy as np
import pytest

from seqforge.data import PAD_ID, ParallelDataset, VocabBundle, Vocab, make_batch
from seqforge.errors import (
    EmptyDatasetError,
    GatherIndexError,
    NonFiniteGradientError,
)
from seqforge.model import teacher_forced_logprobs
from seqforge.tensor import Tape, Tensor, backward
from seqforge.trainer import (
    TrainConfig,
    TrainState,
    evaluate_perplexity,
    nll_loss,
    sgd_update,
    train,
    update_learning_rate,
)
from conftest import random_example, tiny_config, tiny_params


class TestNllLoss:
    def test_perfect_model_zero_loss(self):
        logprobs = Tensor(np.log(np.array([[1.0, 1e-300], [1e-300, 1.0]])))
        loss, ntokens = nll_loss(logprobs, np.array([0, 1]), pad_id=-1)
        assert loss.data[0] == 0.0 and ntokens == 2

    def test_uniform_closed_form(self):
        logprobs = Tensor(np.full((4, 10), -math.log(10.0)))
        loss, ntokens = nll_loss(logprobs, np.array([3, 7, PAD_ID, 2]))
        assert ntokens == 3
        np.testing.assert_allclose(loss.data[0], 3 * math.log(10.0), rtol=1e-12)

    def test_all_pad_contributes_nothing(self):
        logprobs = Tensor(np.full((3, 5), -1.0))
        loss, ntokens = nll_loss(logprobs, np.full(3, PAD_ID))
        assert loss.data[0] == 0.0 and ntokens == 0

    def test_target_out_of_range(self):
        with pytest.raises(GatherIndexError, match="target id 9"):
            nll_loss(Tensor(np.zeros((2, 5))), np.array([1, 9]))

    def test_gradient_only_at_targets(self):
        logprobs = Tensor(np.log(np.full((2, 4), 0.25)), requires_grad=True)
        tape = Tape()
        loss, _ = nll_loss(logprobs, np.array([2, PAD_ID]), tape=tape)
        backward(loss, tape)
        expected = np.zeros((2, 4))
        expected[0, 2] = -1.0
        np.testing.assert_array_equal(logprobs.grad, expected)


class TestSgdUpdate:
    def test_zero_learning_rate_keeps_params(self, rng):
        config = tiny_config()
        params = tiny_params(config)
        before = {n: p.data.copy() for n, p in params.items()}
        for _, p in params.items():
            p.grad = rng.standard_normal(p.shape)
        sgd_update(params, learning_rate=0.0, max_grad_norm=5.0)
        for n, p in params.items():
            np.testing.assert_array_equal(p.data, before[n])

    def test_clip_rescales_to_max_norm(self):
        config = tiny_config()
        params = tiny_params(config)
        for _, p in params.items():
            p.grad = np.zeros_like(p.data)
        first = params["src_embedding"]
        first.grad[0, 0] = 3.0
        first.grad[0, 1] = 4.0
        before = first.data[0, :2].copy()
        sgd_update(params, learning_rate=1.0, max_grad_norm=2.5)
        applied = before - first.data[0, :2]
        np.testing.assert_allclose(applied, [1.5, 2.0], rtol=1e-12)

    def test_no_clip_below_threshold(self):
        config = tiny_config()
        params = tiny_params(config)
        for _, p in params.items():
            p.grad = np.zeros_like(p.data)
        first = params["src_embedding"]
        first.grad[0, 0] = 0.3
        before = first.data[0, 0]
        gnorm = sgd_update(params, learning_rate=1.0, max_grad_norm=5.0)
        np.testing.assert_allclose(before - first.data[0, 0], 0.3, rtol=1e-12)
        np.testing.assert_allclose(gnorm, 0.3, rtol=1e-12)

    def test_clip_preserves_direction(self, rng):
        config = tiny_config()
        params = tiny_params(config)
        grads = {}
        for n, p in params.items():
            p.grad = rng.standard_normal(p.shape) * 10
            grads[n] = p.grad.copy()
        before = {n: p.data.copy() for n, p in params.items()}
        sgd_update(params, learning_rate=1.0, max_grad_norm=2.0)
        flat_step = np.concatenate(
            [(before[n] - p.data).reshape(-1) for n, p in params.items()]
        )
        flat_grad = np.concatenate([grads[n].reshape(-1) for n in grads])
        cos = flat_step @ flat_grad / (
            np.linalg.norm(flat_step) * np.linalg.norm(flat_grad)
        )
        np.testing.assert_allclose(cos, 1.0, atol=1e-12)
        np.testing.assert_allclose(np.linalg.norm(flat_step), 2.0, atol=1e-9)

    def test_non_finite_gradient_names_tensor(self):
        config = tiny_config()
        params = tiny_params(config)
        for _, p in params.items():
            p.grad = np.zeros_like(p.data)
        params["attn_wa"].grad[0, 0] = np.nan
        with pytest.raises(NonFiniteGradientError, match="attn_wa"):
            sgd_update(params, learning_rate=1.0, max_grad_norm=5.0)

    def test_gradients_zeroed_after_step(self):
        config = tiny_config()
        params = tiny_params(config)
        for _, p in params.items():
            p.grad = np.ones_like(p.data)
        sgd_update(params, learning_rate=0.1, max_grad_norm=1e9)
        assert all(p.grad is None for _, p in params.items())

    def test_small_step_decreases_loss(self, rng):
        config = tiny_config(layers=1, rnn_size=4)
        params = tiny_params(config, seed=23)
        batch = make_batch([random_example(rng, config, 3, 3)], [0])

        def current_loss(tape=None):
            logprobs, targets = teacher_forced_logprobs(batch, params, config, tape)
            loss, _ = nll_loss(logprobs, targets, PAD_ID, tape)
            return loss

        tape = Tape()
        before = float(current_loss(tape).data[0])
        backward(current_loss(tape), tape)
        sgd_update(params, learning_rate=1e-3, max_grad_norm=1e9)
        assert float(current_loss().data[0]) < before


class TestUpdateLearningRate:
    def test_no_trigger_before_threshold(self):
        state = TrainState(epoch=3, learning_rate=1.0, valid_ppls=[5.0, 4.0])
        config = TrainConfig(start_decay_at=9)
        assert update_learning_rate(state, config) == 1.0

    def test_epoch_threshold_triggers(self):
        state = TrainState(epoch=9, learning_rate=1.0, valid_ppls=[5.0, 4.0])
        assert update_learning_rate(state, TrainConfig(start_decay_at=9)) == 0.5

    def test_both_triggers_decay_once(self):
        state = TrainState(epoch=9, learning_rate=1.0, valid_ppls=[4.0, 5.0])
        assert update_learning_rate(state, TrainConfig(start_decay_at=9)) == 0.5

    def test_worse_validation_triggers(self):
        state = TrainState(epoch=2, learning_rate=1.0, valid_ppls=[4.0, 4.5])
        assert update_learning_rate(state, TrainConfig(start_decay_at=9)) == 0.5


def tiny_dataset(rng, config, n_train=6, n_valid=3):
    vocabs = VocabBundle(
        src=Vocab([f"w{i}" for i in range(config.src_vocab_size - 4)]),
        tgt=Vocab([f"w{i}" for i in range(config.tgt_vocab_size - 4)]),
    )
    train_ex = [random_example(rng, config, 3, 3) for _ in range(n_train)]
    valid_ex = [random_example(rng, config, 3, 3) for _ in range(n_valid)]
    return ParallelDataset(vocabs, train_ex, valid_ex)


class TestEvaluatePerplexity:
    def test_uniform_model_gives_vocab_size(self, rng):
        config = tiny_config(tgt_vocab_size=10)
        params = tiny_params(config)
        params["generator_w"].data[:] = 0.0
        params["generator_b"].data[:] = 0.0
        dataset = tiny_dataset(rng, config)
        ppl = evaluate_perplexity(params, config, dataset.valid)
        np.testing.assert_allclose(ppl, 10.0, atol=1e-6)

    def test_batch_size_invariant(self, rng):
        config = tiny_config()
        params = tiny_params(config, seed=29)
        dataset = tiny_dataset(rng, config, n_valid=7)
        a = evaluate_perplexity(params, config, dataset.valid, batch_size=1)
        b = evaluate_perplexity(params, config, dataset.valid, batch_size=4)
        assert abs(a - b) < 1e-6

    def test_empty_dataset_rejected(self, rng):
        config = tiny_config()
        params = tiny_params(config)
        with pytest.raises(EmptyDatasetError):
            evaluate_perplexity(params, config, [])

    def test_matches_scalar_oracle_two_sentences(self, rng):
        config = tiny_config(layers=1)
        params = tiny_params(config, seed=31)
        examples = [random_example(rng, config, 2, 2),
                    random_example(rng, config, 3, 4)]
        total_nll = 0.0
        count = 0
        for e in examples:
            batch = make_batch([e], [0])
            logprobs, targets = teacher_forced_logprobs(batch, params, config)
            for row, tgt in enumerate(targets):
                if tgt != PAD_ID:
                    total_nll += -float(logprobs.data[row, tgt])
                    count += 1
        want = math.exp(total_nll / count)
        got = evaluate_perplexity(params, config, examples, batch_size=2)
        np.testing.assert_allclose(got, want, rtol=1e-10)


class TestTrainLoop:
    def test_zero_epochs_only_initial_checkpoint(self, rng, tmp_path):
        config = tiny_config(layers=1)
        params = tiny_params(config)
        dataset = tiny_dataset(rng, config)
        prefix = str(tmp_path / "model")
        state = train(params, dataset, TrainConfig(epochs=0), save_prefix=prefix)
        assert state.epoch == 0 and state.valid_ppls == []
        assert (tmp_path / "model_epoch0.ckpt").exists()
        assert list(tmp_path.glob("*.ckpt")) == [tmp_path / "model_epoch0.ckpt"]

    def test_same_seed_bit_identical_runs(self, rng):
        config = tiny_config(layers=1)
        dataset = tiny_dataset(rng, config, n_train=8)
        tconf = TrainConfig(epochs=3, batch_size=3, rng_seed=77, start_decay_at=2)
        params_a = tiny_params(config, seed=41)
        state_a = train(params_a, dataset, tconf)
        params_b = tiny_params(config, seed=41)
        state_b = train(params_b, dataset, tconf)
        assert state_a.train_ppls == state_b.train_ppls
        assert state_a.valid_ppls == state_b.valid_ppls
        for (_, pa), (_, pb) in zip(params_a.items(), params_b.items()):
            np.testing.assert_array_equal(pa.data, pb.data)

    def test_learning_rate_non_increasing(self, rng):
        config = tiny_config(layers=1)
        dataset = tiny_dataset(rng, config)
        tconf = TrainConfig(epochs=4, batch_size=4, start_decay_at=2)
        params = tiny_params(config)
        rates = []
        state = TrainState(epoch=0, learning_rate=tconf.learning_rate)
        for _ in range(tconf.epochs):
            partial = TrainConfig(**{**tconf.__dict__, "epochs": state.epoch + 1})
            state = train(params, dataset, partial, state=state)
            rates.append(state.learning_rate)
        assert all(a >= b for a, b in zip(rates, rates[1:]))

    def test_sampling_fraction_respected(self, rng):
        config = tiny_config(layers=1)
        dataset = tiny_dataset(rng, config, n_train=8)
        tconf = TrainConfig(epochs=1, batch_size=2, sample_fraction=0.5)
        params = tiny_params(config)
        state = train(params, dataset, tconf)
        assert state.epoch == 1

    def test_epoch_log_line_is_tab_separated(self, rng, caplog):
        import logging

        config = tiny_config(layers=1)
        dataset = tiny_dataset(rng, config)
        params = tiny_params(config)
        with caplog.at_level(logging.INFO, logger="seqforge.train"):
            train(params, dataset, TrainConfig(epochs=1, batch_size=4))
        line = caplog.records[-1].getMessage()
        epoch, train_ppl, valid_ppl, lr, tps = line.split("\t")
        assert epoch == "1"
        assert float(train_ppl) > 0 and float(valid_ppl) > 0
        assert float(lr) == 1.0 and float(tps) > 0
