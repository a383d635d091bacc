"""Tape mechanics, backward rules, SGD, and the finite-difference suite."""

import numpy as np
import numpy.testing as npt
import pytest

from asymfuse import autograd as ag
from asymfuse import gradcheck
from asymfuse import nn
from asymfuse.errors import (
    DisconnectedLossError,
    LabelOutOfRangeError,
    NonScalarLossError,
)


def rand_f32(rng, shape, lo=-1.0, hi=1.0):
    return rng.uniform(lo, hi, size=shape).astype(np.float32)


class TestBackwardRules:
    def test_relu_gradient_zero_at_kink_and_negatives(self):
        x = ag.Parameter(np.array([-1.0, 0.0, 2.0, 3.0], np.float32), "x")
        tape = ag.Tape()
        loss = ag.weighted_sum(ag.relu(tape.parameter(x)), np.ones(4))
        ag.backward(tape, loss)
        npt.assert_array_equal(x.grad, np.array([0.0, 0.0, 1.0, 1.0], np.float32))

    def test_broadcast_backward_sums_over_replicated_axes(self):
        a = ag.Parameter(np.zeros((3, 1, 1), np.float32), "a")
        b = ag.Parameter(np.zeros((3, 2, 2), np.float32), "b")
        tape = ag.Tape()
        loss = ag.weighted_sum(ag.add(tape.parameter(a), tape.parameter(b)),
                               np.ones((3, 2, 2)))
        ag.backward(tape, loss)
        npt.assert_array_equal(a.grad, np.full((3, 1, 1), 4.0, np.float32))
        npt.assert_array_equal(b.grad, np.ones((3, 2, 2), np.float32))

    def test_broadcast_backward_law_exact(self):
        # grad of the broadcast operand == full-shape grad summed over
        # the broadcast axes, exactly.
        rng = np.random.default_rng(80)
        a = ag.Parameter(rand_f32(rng, (4, 1, 3)), "a")
        b = ag.Parameter(rand_f32(rng, (4, 5, 3)), "b")
        proj = rng.uniform(-1, 1, size=(4, 5, 3))
        tape = ag.Tape()
        loss = ag.weighted_sum(ag.add(tape.parameter(a), tape.parameter(b)), proj)
        ag.backward(tape, loss)
        expected_a = proj.sum(axis=1, keepdims=True).astype(np.float32)
        npt.assert_array_equal(a.grad, expected_a)
        npt.assert_array_equal(b.grad, proj.astype(np.float32))

    def test_conv_param_gradients_match_finite_differences(self):
        rng = np.random.default_rng(81)
        x = ag.Parameter(rand_f32(rng, (2, 5, 5)), "x")
        k = ag.Parameter(rand_f32(rng, (3, 2, 3, 3)), "k")
        proj = rng.uniform(-1, 1, size=(3, 3, 3))

        def loss_value():
            out = nn.conv2d_valid(x.value, k.value)
            return float((out.astype(np.float64) * proj).sum())

        tape = ag.Tape()
        loss = ag.weighted_sum(ag.conv2d(tape.parameter(x), tape.parameter(k)), proj)
        ag.backward(tape, loss)
        for p in (x, k):
            numeric = ag.finite_diff_grad(loss_value, p, eps=1e-2)
            scale = max(np.abs(numeric).max(), 1e-8)
            assert np.abs(p.grad - numeric).max() / scale < 1e-3

    def test_mean_pool_spreads_gradient_uniformly(self):
        x = ag.Parameter(np.arange(12, dtype=np.float32).reshape(3, 2, 2), "x")
        tape = ag.Tape()
        loss = ag.weighted_sum(ag.mean_pool(tape.parameter(x)), np.array([1.0, 0.0, 2.0]))
        ag.backward(tape, loss)
        expected = np.stack([np.full((2, 2), w / 4.0) for w in (1.0, 0.0, 2.0)])
        npt.assert_allclose(x.grad, expected.astype(np.float32), atol=1e-7)

    def test_taped_forward_matches_plain_forward_bitwise(self):
        rng = np.random.default_rng(82)
        x = ag.Parameter(rand_f32(rng, (2, 6, 6)), "x")
        k = ag.Parameter(rand_f32(rng, (4, 2, 3, 3)), "k")
        tape = ag.Tape()
        node = ag.relu(ag.conv2d(tape.parameter(x), tape.parameter(k)))
        expected = np.maximum(nn.conv2d_valid(x.value, k.value), 0)
        npt.assert_array_equal(node.value, expected)


class TestSoftmaxXent:
    def test_uniform_two_way_is_log2(self):
        logits = ag.Parameter(np.zeros(2, np.float32), "logits")
        tape = ag.Tape()
        loss = ag.softmax_xent(tape.parameter(logits), 0)
        assert float(loss.value) == pytest.approx(np.log(2.0), abs=1e-6)

    def test_large_logits_stay_finite(self):
        logits = ag.Parameter(np.array([1000.0, 0.0, -1000.0], np.float32), "logits")
        tape = ag.Tape()
        loss = ag.softmax_xent(tape.parameter(logits), 0)
        assert np.isfinite(float(loss.value))
        assert float(loss.value) == pytest.approx(0.0, abs=1e-6)
        ag.backward(tape, loss)
        assert np.isfinite(logits.grad).all()

    def test_matches_float64_formula(self):
        rng = np.random.default_rng(83)
        for _ in range(20):
            z = rand_f32(rng, (6,), -5.0, 5.0)
            label = int(rng.integers(0, 6))
            logits = ag.Parameter(z, "logits")
            tape = ag.Tape()
            loss = ag.softmax_xent(tape.parameter(logits), label)
            z64 = z.astype(np.float64)
            shifted = z64 - z64.max()
            expected = np.log(np.exp(shifted).sum()) - shifted[label]
            assert float(loss.value) == pytest.approx(expected, rel=1e-5)

    def test_gradient_is_probs_minus_onehot(self):
        z = np.array([1.0, 2.0, 0.5], np.float32)
        logits = ag.Parameter(z, "logits")
        tape = ag.Tape()
        loss = ag.softmax_xent(tape.parameter(logits), 1)
        ag.backward(tape, loss)
        e = np.exp(z.astype(np.float64) - z.max())
        probs = e / e.sum()
        probs[1] -= 1.0
        npt.assert_allclose(logits.grad, probs.astype(np.float32), atol=1e-6)

    def test_label_out_of_range(self):
        logits = ag.Parameter(np.zeros(3, np.float32), "logits")
        tape = ag.Tape()
        with pytest.raises(LabelOutOfRangeError):
            ag.softmax_xent(tape.parameter(logits), 3)
        with pytest.raises(LabelOutOfRangeError):
            ag.softmax_xent(tape.parameter(logits), -1)


class TestBackwardContract:
    def test_non_scalar_loss_rejected(self):
        x = ag.Parameter(np.ones((2, 2), np.float32), "x")
        tape = ag.Tape()
        node = ag.relu(tape.parameter(x))
        with pytest.raises(NonScalarLossError):
            ag.backward(tape, node)

    def test_disconnected_loss_rejected(self):
        x = ag.Parameter(np.ones(3, np.float32), "x")
        tape_a = ag.Tape()
        tape_b = ag.Tape()
        loss = ag.weighted_sum(ag.relu(tape_a.parameter(x)), np.ones(3))
        with pytest.raises(DisconnectedLossError):
            ag.backward(tape_b, loss)

    def test_grads_reset_between_backward_calls(self):
        x = ag.Parameter(np.array([2.0], np.float32), "x")
        for _ in range(2):
            tape = ag.Tape()
            loss = ag.weighted_sum(ag.relu(tape.parameter(x)), np.ones(1))
            ag.backward(tape, loss)
            npt.assert_array_equal(x.grad, np.ones(1, np.float32))  # not doubled

    def test_parameter_reused_twice_accumulates(self):
        x = ag.Parameter(np.array([3.0], np.float32), "x")
        tape = ag.Tape()
        node = tape.parameter(x)
        loss = ag.weighted_sum(ag.add(node, node), np.ones(1))
        ag.backward(tape, loss)
        npt.assert_array_equal(x.grad, np.array([2.0], np.float32))

    def test_returns_reached_parameters(self):
        x = ag.Parameter(np.ones(2, np.float32), "x")
        unused = ag.Parameter(np.ones(2, np.float32), "unused")
        tape = ag.Tape()
        tape.parameter(unused)
        loss = ag.weighted_sum(ag.relu(tape.parameter(x)), np.ones(2))
        reached = ag.backward(tape, loss)
        assert x in reached
        assert unused not in reached
        npt.assert_array_equal(unused.grad, np.zeros(2, np.float32))


class TestSgd:
    def test_single_step(self):
        p = ag.Parameter(np.array([1.0], np.float32), "p")
        p.grad[:] = 2.0
        ag.sgd_step([p], lr=0.5)
        npt.assert_array_equal(p.value, np.array([0.0], np.float32))
        npt.assert_array_equal(p.grad, np.zeros(1, np.float32))

    def test_zero_gradient_is_fixed_point(self):
        p = ag.Parameter(np.array([1.5, -2.0], np.float32), "p")
        ag.sgd_step([p], lr=0.1)
        npt.assert_array_equal(p.value, np.array([1.5, -2.0], np.float32))

    def test_two_steps_on_quadratic(self):
        # f(x) = x^2 from x=1 with lr 0.25: 1 -> 0.5 -> 0.25.
        p = ag.Parameter(np.array([1.0], np.float32), "p")
        for expected in (0.5, 0.25):
            p.grad[:] = 2.0 * p.value  # df/dx of x^2
            ag.sgd_step([p], lr=0.25)
            assert float(p.value[0]) == pytest.approx(expected, abs=1e-6)

    def test_non_positive_lr_rejected(self):
        p = ag.Parameter(np.ones(1, np.float32), "p")
        with pytest.raises(ValueError):
            ag.sgd_step([p], lr=0.0)


class TestFiniteDiff:
    def test_sum_of_squares(self):
        p = ag.Parameter(np.array([1.0, 2.0], np.float32), "p")

        def f():
            return float((p.value.astype(np.float64) ** 2).sum())

        grad = ag.finite_diff_grad(f, p, eps=1e-3)
        npt.assert_allclose(grad, np.array([2.0, 4.0]), atol=1e-3)

    def test_linear_function_is_exact(self):
        p = ag.Parameter(np.array([0.5, -1.5, 2.0], np.float32), "p")
        coeffs = np.array([3.0, -1.0, 0.5])

        def f():
            return float((p.value.astype(np.float64) * coeffs).sum())

        grad = ag.finite_diff_grad(f, p, eps=1e-2)
        npt.assert_allclose(grad, coeffs, atol=1e-4)

    def test_value_restored_after_probing(self):
        p = ag.Parameter(np.array([1.0, 2.0], np.float32), "p")
        before = p.value.copy()
        ag.finite_diff_grad(lambda: float(p.value.sum()), p, eps=1e-2)
        npt.assert_array_equal(p.value, before)

    def test_zero_eps_rejected(self):
        p = ag.Parameter(np.ones(1, np.float32), "p")
        with pytest.raises(ValueError):
            ag.finite_diff_grad(lambda: 0.0, p, eps=0.0)


class TestGradientSuite:
    def test_all_ops_pass_at_default_tolerance(self):
        results = gradcheck.gradient_check_suite(seed=0, eps=1e-2, tol=1e-2)
        ops = {r.op for r in results}
        assert {"broadcast_add", "relu", "conv2d", "head1x1", "depthwise_corr",
                "xcorr", "affine", "mlp3", "batchnorm_infer", "softmax_xent",
                "acm_block"} <= ops
        failed = [r for r in results if not r.passed]
        assert not failed, failed

    def test_injected_error_is_caught(self):
        results = gradcheck.gradient_check_suite(seed=0, inject_error=True)
        assert any(not r.passed for r in results)

    def test_deterministic_given_seed(self):
        a = gradcheck.gradient_check_suite(seed=123)
        b = gradcheck.gradient_check_suite(seed=123)
        assert [(r.op, r.param, r.rel_error) for r in a] == \
               [(r.op, r.param, r.rel_error) for r in b]
