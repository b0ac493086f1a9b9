"""Unit tests for the deterministic numeric primitives."""

import math

import numpy as np
import pytest

from reuserec.errors import DegenerateInputError, NumericalError, ShapeError
from reuserec.numerics import (AdamState, OpCounter, Rng, adam_step,
                               cosine_similarity, gelu, gelu_grad,
                               masked_softmax, matmul, relu, sigmoid, softplus)


def triple_loop_matmul(a, b):
    """Independent oracle: scalar triple loop, ascending shared index."""
    out = np.empty((a.shape[0], b.shape[1]))
    for i in range(a.shape[0]):
        for j in range(b.shape[1]):
            s = 0.0
            for k in range(a.shape[1]):
                s += float(a[i, k]) * float(b[k, j])
            out[i, j] = s
    return out


class TestMatmul:
    def test_forced_arithmetic(self):
        got = matmul([[1, 2], [3, 4]], [[0], [1]])
        assert got.tolist() == [[2.0], [4.0]]

    def test_exact_vs_triple_loop_oracle(self):
        gen = np.random.default_rng(3)
        a = gen.standard_normal((5, 7))
        b = gen.standard_normal((7, 3))
        got = matmul(a, b)
        want = triple_loop_matmul(a, b)
        assert np.array_equal(got, want)  # bit-exact, not approximate

    def test_shape_errors(self):
        with pytest.raises(ShapeError):
            matmul(np.ones((2, 3)), np.ones((2, 3)))
        with pytest.raises(ShapeError):
            matmul(np.ones(3), np.ones((3, 2)))

    def test_counter_counts_scalar_multiplies(self):
        c = OpCounter()
        matmul(np.ones((4, 5)), np.ones((5, 6)), counter=c)
        assert c.multiplies == 4 * 5 * 6


class TestMaskedSoftmax:
    def test_symmetry(self):
        out = masked_softmax(np.full(4, 2.5), np.ones(4, dtype=bool))
        assert np.allclose(out, 0.25)

    def test_single_valid_slot(self):
        out = masked_softmax(np.array([5.0, 123.0]), np.array([True, False]))
        assert out.tolist() == [1.0, 0.0]

    def test_derived_example(self):
        out = masked_softmax(np.array([1.0, 2.0, 3.0]), np.ones(3, dtype=bool))
        assert np.allclose(out, [0.09003, 0.24473, 0.66524], atol=1e-5)

    def test_shift_invariance(self):
        gen = np.random.default_rng(0)
        logits = gen.standard_normal(10)
        mask = gen.random(10) > 0.3
        a = masked_softmax(logits, mask)
        b = masked_softmax(logits + 17.25, mask)
        assert np.allclose(a, b, atol=1e-9)
        assert abs(a[mask].sum() - 1.0) < 1e-9
        assert (a[~mask] == 0.0).all()

    def test_all_masked_is_degenerate(self):
        with pytest.raises(DegenerateInputError):
            masked_softmax(np.zeros(3), np.zeros(3, dtype=bool))

    def test_nonfinite_valid_logit(self):
        with pytest.raises(NumericalError):
            masked_softmax(np.array([np.nan, 0.0]), np.ones(2, dtype=bool))

    def test_large_logits_stable(self):
        out = masked_softmax(np.array([1e4, 1e4 - 1]), np.ones(2, dtype=bool))
        assert np.isfinite(out).all()


class TestActivations:
    def test_relu(self):
        assert relu(-3.0) == 0.0
        assert relu(2.0) == 2.0

    def test_gelu_center_and_derived(self):
        assert gelu(0.0) == 0.0
        assert abs(float(gelu(1.0)) - 0.84134) < 1e-4

    def test_gelu_grad_matches_fd(self):
        xs = np.linspace(-3, 3, 25)
        fd = (gelu(xs + 1e-6) - gelu(xs - 1e-6)) / 2e-6
        assert np.allclose(gelu_grad(xs), fd, atol=1e-7)


class TestSigmoidSoftplus:
    def test_values(self):
        assert float(sigmoid(0.0)) == 0.5
        assert abs(float(softplus(0.0)) - math.log(2)) < 1e-12

    def test_no_overflow(self):
        assert np.isfinite(softplus(1e4))
        assert float(sigmoid(-1e4)) >= 0.0


class TestCosine:
    def test_orthogonal(self):
        assert cosine_similarity([1, 0], [0, 1]) == 0.0

    def test_derived(self):
        assert abs(cosine_similarity([1, 2, 3], [4, 5, 6]) - 0.97463) < 1e-5

    def test_zero_norm(self):
        with pytest.raises(DegenerateInputError):
            cosine_similarity([0, 0], [1, 1])


class TestAdam:
    def test_zero_grad_is_a_noop(self):
        params = {"w": np.array([[1.0, -2.0]])}
        state = AdamState.for_params(params)
        adam_step(params, {"w": np.zeros((1, 2))}, state)
        assert params["w"].tolist() == [[1.0, -2.0]]
        assert state.step_count == 1

    def test_first_step_closed_form(self):
        params = {"w": np.array([[0.0]])}
        state = AdamState.for_params(params, learning_rate=0.1)
        adam_step(params, {"w": np.array([[1.0]])}, state)
        assert abs(params["w"][0, 0] + 0.1) < 1e-8

    def test_frozen_row_never_moves(self):
        params = {"V": np.zeros((3, 2))}
        state = AdamState.for_params(params)
        for _ in range(5):
            adam_step(params, {"V": np.ones((3, 2))}, state, frozen_rows={"V": 0})
        assert (params["V"][0] == 0.0).all()
        assert (params["V"][1:] != 0.0).all()

    def test_shape_mismatch(self):
        params = {"w": np.zeros((2, 2))}
        state = AdamState.for_params(params)
        with pytest.raises(ShapeError):
            adam_step(params, {"w": np.zeros((2, 3))}, state)


class TestRng:
    def test_bit_identical_streams(self):
        a = Rng(11).stream("perm", 3).random(8)
        b = Rng(11).stream("perm", 3).random(8)
        assert np.array_equal(a, b)

    def test_streams_are_independent(self):
        a = Rng(11).stream("perm", 3).random(8)
        b = Rng(11).stream("neg", 3).random(8)
        c = Rng(12).stream("perm", 3).random(8)
        assert not np.array_equal(a, b)
        assert not np.array_equal(a, c)
