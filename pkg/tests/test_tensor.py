"""Tensor core: forward semantics, shape errors, and gradient oracles."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from seqforge import tensor as T
from seqforge.errors import (
    GatherIndexError,
    MaskedRowError,
    NonScalarLossError,
    ShapeError,
)
from conftest import finite_difference_check


def t(data, grad=True):
    return T.Tensor(data, requires_grad=grad)


class TestMatmul:
    def test_identity(self):
        a = t([[1.0, 2.0], [3.0, 4.0]])
        eye = t(np.eye(2), grad=False)
        np.testing.assert_array_equal(T.matmul(a, eye).data, a.data)

    def test_hand_computed_product(self):
        a = t([[1.0, 2.0], [3.0, 4.0]])
        b = t([[5.0, 6.0], [7.0, 8.0]])
        np.testing.assert_array_equal(
            T.matmul(a, b).data, [[19.0, 22.0], [43.0, 50.0]]
        )

    def test_shape_mismatch_names_both_shapes(self):
        with pytest.raises(ShapeError, match=r"\(2, 3\) x \(2, 3\)"):
            T.matmul(t(np.ones((2, 3))), t(np.ones((2, 3))))

    def test_gradients(self, rng):
        a = t(rng.standard_normal((3, 4)))
        b = t(rng.standard_normal((4, 2)))

        def loss_fn(tape=None):
            prod = T.matmul(a, b, tape)
            return T.sum_all(T.mul(prod, prod, tape), tape)

        tape = T.Tape()
        T.backward(loss_fn(tape), tape)
        finite_difference_check([a, b], lambda: float(loss_fn().data[0]))


class TestSoftmaxRows:
    def test_uniform_on_equal_inputs(self):
        y = T.softmax_rows(t([[0.0, 0.0, 0.0]]))
        np.testing.assert_allclose(y.data, [[1 / 3, 1 / 3, 1 / 3]], atol=1e-12)

    def test_closed_form_log2(self):
        y = T.softmax_rows(t([[0.0, math.log(2.0)]]))
        np.testing.assert_allclose(y.data, [[1 / 3, 2 / 3]], atol=1e-12)

    def test_large_inputs_stay_finite(self):
        y = T.softmax_rows(t([[1000.0, 1000.0]]))
        np.testing.assert_allclose(y.data, [[0.5, 0.5]])

    def test_masked_positions_exactly_zero(self):
        mask = np.array([[True, False, True]])
        y = T.softmax_rows(t([[1.0, 50.0, 2.0]]), mask)
        assert y.data[0, 1] == 0.0
        np.testing.assert_allclose(y.data.sum(), 1.0, atol=1e-12)

    def test_fully_masked_row_rejected(self):
        with pytest.raises(MaskedRowError, match="row 1"):
            T.softmax_rows(
                t(np.zeros((2, 2))), np.array([[True, True], [False, False]])
            )

    @settings(max_examples=50, deadline=None)
    @given(
        st.lists(
            st.floats(min_value=-1e3, max_value=1e3, allow_nan=False),
            min_size=1,
            max_size=8,
        )
    )
    def test_rows_sum_to_one(self, row):
        y = T.softmax_rows(t([row]))
        assert abs(y.data.sum() - 1.0) < 1e-6
        assert (y.data >= 0).all()

    def test_gradient(self, rng):
        x = t(rng.standard_normal((2, 5)))
        w = t(rng.standard_normal((2, 5)), grad=False)

        def loss_fn(tape=None):
            return T.sum_all(T.mul(T.softmax_rows(x, None, tape), w, tape), tape)

        tape = T.Tape()
        T.backward(loss_fn(tape), tape)
        finite_difference_check([x], lambda: float(loss_fn().data[0]))


class TestPointwiseAndShape:
    def test_fixed_points(self):
        assert T.tanh(t([0.0])).data[0] == 0.0
        assert T.sigmoid(t([0.0])).data[0] == 0.5

    def test_concat_shape(self):
        out = T.concat([t(np.ones((2, 3))), t(np.zeros((2, 2)))], axis=1)
        assert out.shape == (2, 5)

    def test_concat_off_axis_mismatch(self):
        with pytest.raises(ShapeError):
            T.concat([t(np.ones((2, 3))), t(np.ones((3, 3)))], axis=1)

    def test_gather_rows(self):
        table = t([[1.0], [2.0], [3.0]])
        out = T.gather_rows(table, np.array([2, 0]))
        np.testing.assert_array_equal(out.data, [[3.0], [1.0]])

    def test_gather_index_out_of_range(self):
        with pytest.raises(GatherIndexError, match="index 3"):
            T.gather_rows(t(np.ones((3, 1))), np.array([0, 3]))

    def test_gather_gradient_accumulates_duplicates(self):
        table = t([[1.0], [2.0]])
        tape = T.Tape()
        out = T.gather_rows(table, np.array([0, 0, 1]), tape)
        T.backward(T.sum_all(out, tape), tape)
        np.testing.assert_array_equal(table.grad, [[2.0], [1.0]])

    def test_slice_and_reshape_roundtrip(self, rng):
        x = t(rng.standard_normal((2, 6)))
        tape = T.Tape()
        left = T.slice_axis(x, 1, 0, 3, tape)
        right = T.slice_axis(x, 1, 3, 6, tape)
        back = T.concat([left, right], 1, tape)
        np.testing.assert_array_equal(back.data, x.data)
        T.backward(T.sum_all(back, tape), tape)
        np.testing.assert_array_equal(x.grad, np.ones_like(x.data))

    def test_add_requires_equal_shapes(self):
        with pytest.raises(ShapeError):
            T.add(t(np.ones((2, 2))), t(np.ones((2, 3))))

    def test_add_bias_and_scale_gradients(self, rng):
        x = t(rng.standard_normal((3, 4)))
        b = t(rng.standard_normal(4))

        def loss_fn(tape=None):
            y = T.add_bias(x, b, tape)
            y = T.tanh(T.scale(y, 0.5, tape), tape)
            return T.sum_all(y, tape)

        tape = T.Tape()
        T.backward(loss_fn(tape), tape)
        finite_difference_check([x, b], lambda: float(loss_fn().data[0]))

    def test_transpose_gradient(self, rng):
        x = t(rng.standard_normal((2, 3)))
        w = t(rng.standard_normal((3, 2)), grad=False)

        def loss_fn(tape=None):
            return T.sum_all(T.mul(T.transpose(x, tape), w, tape), tape)

        tape = T.Tape()
        T.backward(loss_fn(tape), tape)
        np.testing.assert_array_equal(x.grad, w.data.T)


class TestLogSoftmaxRows:
    def test_rows_logsumexp_zero(self, rng):
        y = T.log_softmax_rows(t(rng.standard_normal((4, 9)) * 50))
        np.testing.assert_allclose(np.exp(y.data).sum(axis=1), 1.0, atol=1e-6)

    def test_gradient(self, rng):
        x = t(rng.standard_normal((3, 6)))
        w = t(rng.standard_normal((3, 6)), grad=False)

        def loss_fn(tape=None):
            return T.sum_all(T.mul(T.log_softmax_rows(x, tape), w, tape), tape)

        tape = T.Tape()
        T.backward(loss_fn(tape), tape)
        finite_difference_check([x], lambda: float(loss_fn().data[0]))


class TestDropoutGradient:
    def test_backward_applies_the_same_mask(self):
        x = t(np.ones((3, 3)))
        tape = T.Tape()
        y = T.dropout(x, 0.5, np.random.default_rng(4), tape)
        T.backward(T.sum_all(y, tape), tape)
        np.testing.assert_array_equal(x.grad, y.data)


class TestLstmGatesOp:
    def test_matches_equation_composition(self, rng):
        pre = t(rng.standard_normal((3, 8)))
        c = t(rng.standard_normal((3, 2)))
        h_out, c_out = T.lstm_gates(pre, c)
        sig = lambda v: 1.0 / (1.0 + np.exp(-v))
        i, f, g, o = (pre.data[:, k * 2:(k + 1) * 2] for k in range(4))
        c_ref = sig(f) * c.data + sig(i) * np.tanh(g)
        np.testing.assert_allclose(c_out.data, c_ref, rtol=1e-12)
        np.testing.assert_allclose(h_out.data, sig(o) * np.tanh(c_ref), rtol=1e-12)

    def test_gradients_through_both_outputs(self, rng):
        pre = t(rng.standard_normal((2, 12)))
        c = t(rng.standard_normal((2, 3)))
        wh = t(rng.standard_normal((2, 3)), grad=False)
        wc = t(rng.standard_normal((2, 3)), grad=False)

        def loss_fn(tape=None):
            h_out, c_out = T.lstm_gates(pre, c, tape)
            return T.sum_all(
                T.add(T.mul(h_out, wh, tape), T.mul(c_out, wc, tape), tape), tape
            )

        tape = T.Tape()
        T.backward(loss_fn(tape), tape)
        finite_difference_check([pre, c], lambda: float(loss_fn().data[0]))


class TestAttentionOps:
    def test_gradients(self, rng):
        q = t(rng.standard_normal((2, 3)))
        ctx = t(rng.standard_normal((2, 4, 3)))
        w = t(rng.standard_normal((2, 4)))

        def loss_fn(tape=None):
            s = T.attn_scores(q, ctx, tape)
            m = T.attn_mix(w, ctx, tape)
            return T.add(T.sum_all(s, tape), T.sum_all(m, tape), tape)

        tape = T.Tape()
        T.backward(loss_fn(tape), tape)
        finite_difference_check([q, ctx, w], lambda: float(loss_fn().data[0]))


class TestBackward:
    def test_bilinear_form_gradient(self, rng):
        a = t(rng.standard_normal((2, 3)))
        b = t(rng.standard_normal((2, 3)), grad=False)
        tape = T.Tape()
        T.backward(T.sum_all(T.mul(a, b, tape), tape), tape)
        np.testing.assert_array_equal(a.grad, b.data)

    def test_tanh_slope_one_at_origin(self):
        x = t([0.0])
        tape = T.Tape()
        T.backward(T.tanh(x, tape), tape)
        assert x.grad[0] == 1.0

    def test_non_scalar_loss_rejected(self):
        x = t([1.0, 2.0])
        tape = T.Tape()
        y = T.scale(x, 2.0, tape)
        with pytest.raises(NonScalarLossError):
            T.backward(y, tape)

    def test_fanout_gradients_add(self, rng):
        x = t(rng.standard_normal((2, 2)))
        tape = T.Tape()
        # x feeds two branches; the total gradient is the branch sum.
        branch1 = T.scale(x, 3.0, tape)
        branch2 = T.mul(x, x, tape)
        T.backward(T.sum_all(T.add(branch1, branch2, tape), tape), tape)
        np.testing.assert_allclose(x.grad, 3.0 + 2.0 * x.data, rtol=1e-12)

    def test_random_composite_graph_matches_finite_differences(self, rng):
        # Frozen derived case: three chained ops over random [-1, 1] inputs.
        a = t(rng.uniform(-1, 1, (3, 3)))
        b = t(rng.uniform(-1, 1, (3, 3)))

        def loss_fn(tape=None):
            y = T.tanh(T.matmul(a, b, tape), tape)
            z = T.sigmoid(T.add(y, b, tape), tape)
            return T.sum_all(z, tape)

        tape = T.Tape()
        T.backward(loss_fn(tape), tape)
        finite_difference_check([a, b], lambda: float(loss_fn().data[0]), tol=1e-6)

    def test_gradients_accumulate_across_backward_calls(self):
        x = t([2.0])
        tape = T.Tape()
        y = T.scale(x, 5.0, tape)
        T.backward(y, tape)
        T.backward(y, tape)
        assert x.grad[0] == 10.0


class TestTensorInvariants:
    def test_scalar_gets_shape_one(self):
        assert T.Tensor(3.0).shape == (1,)

    def test_zero_size_rejected(self):
        with pytest.raises(ShapeError):
            T.Tensor(np.zeros((0, 2)))

    def test_dropout_identity_at_zero_and_scales_otherwise(self, rng):
        x = t(np.ones((4, 4)))
        assert T.dropout(x, 0.0, rng) is x
        y = T.dropout(x, 0.5, np.random.default_rng(0))
        assert set(np.unique(y.data)) <= {0.0, 2.0}
