"""Tests for the reverse-mode tape."""

import numpy as np
import pytest

from langevin_control import ControlError
from langevin_control.tape import (
    OP_KINDS,
    Tape,
    evaluate,
    finite_diff_check,
    value_and_grad,
)


# ---------------------------------------------------------------------------
# Forward values
# ---------------------------------------------------------------------------


class TestForward:
    def test_relu(self):
        out = evaluate(lambda t, x: t.relu(x), np.array([-1.0, 2.0]))
        np.testing.assert_array_equal(out, [0.0, 2.0])

    def test_positive_part(self):
        assert evaluate(lambda t, x: t.positive_part(x), 0.5) == 0.5
        assert evaluate(lambda t, x: t.positive_part(x), -0.3) == 0.0

    def test_matvec_identity(self):
        out = evaluate(lambda t, w, x: t.matvec(w, x), np.eye(2), np.array([3.0, 4.0]))
        np.testing.assert_array_equal(out, [3.0, 4.0])

    def test_matvec_batched(self):
        w = np.array([[1.0, 2.0], [0.0, 1.0]])
        x = np.array([[1.0, 1.0], [2.0, 0.0]])
        out = evaluate(lambda t, a, b: t.matvec(a, b), w, x)
        np.testing.assert_array_equal(out, [[3.0, 1.0], [2.0, 0.0]])

    def test_concat_and_slice(self):
        def fn(t, a, b):
            return t.concat(a, b)[1:3]

        out = evaluate(fn, np.array([1.0, 2.0]), np.array([3.0]))
        np.testing.assert_array_equal(out, [2.0, 3.0])

    def test_sum_reduces_last_axis(self):
        out = evaluate(lambda t, x: t.sum(x), np.ones((3, 4)))
        np.testing.assert_array_equal(out, [4.0, 4.0, 4.0])

    def test_min_const(self):
        out = evaluate(lambda t, x: t.min_const(x, 5.0), np.array([3.0, 7.0]))
        np.testing.assert_array_equal(out, [3.0, 5.0])

    def test_minimum(self):
        out = evaluate(lambda t, a, b: t.minimum(a, b), np.array([1.0, 4.0]), np.array([2.0, 3.0]))
        np.testing.assert_array_equal(out, [1.0, 3.0])

    def test_array_on_the_left(self):
        tape = Tape(grad_enabled=False)
        x = tape.constant(np.array([1.0, 2.0]))
        out = np.array([3.0, 3.0]) - x
        np.testing.assert_array_equal(out.value, [2.0, 1.0])

    def test_shape_mismatch_names_op(self):
        tape = Tape(grad_enabled=False)
        a = tape.constant(np.ones(3))
        b = tape.constant(np.ones(2))
        with pytest.raises(ControlError, match="dot: incompatible shapes"):
            tape.dot(a, b)

    def test_unknown_op(self):
        tape = Tape()
        with pytest.raises(ControlError, match="Unknown"):
            tape.forward("conv", [])

    def test_missing_input(self):
        tape = Tape()
        with pytest.raises(ControlError, match="does not exist"):
            tape.forward("relu", [3])

    def test_inputs_precede_node(self):
        tape = Tape(np.array([1.0, 2.0]))
        x = tape.parameter(0, 2)
        y = tape.sum(tape.square(tape.relu(x)))
        for node in tape.nodes[: y.id + 1]:
            assert all(i < node.id for i in node.input_ids)

    def test_every_op_kind_is_known(self):
        assert "schur_mul" in OP_KINDS
        assert "min_const" in OP_KINDS


# ---------------------------------------------------------------------------
# Backward
# ---------------------------------------------------------------------------


class TestBackward:
    def test_square(self):
        value, grad = value_and_grad(lambda t: t.sum(t.square(t.parameter(0, 1))), np.array([3.0]))
        assert value == 9.0
        np.testing.assert_array_equal(grad, [6.0])

    def test_relu_flat_on_negatives(self):
        _, grad = value_and_grad(lambda t: t.sum(t.relu(t.parameter(0, 1))), np.array([-1.0]))
        np.testing.assert_array_equal(grad, [0.0])

    def test_kinks_have_zero_subgradient(self):
        theta = np.zeros(1)
        for op in ("relu", "positive_part", "abs"):
            _, grad = value_and_grad(lambda t: t.sum(getattr(t, op)(t.parameter(0, 1))), theta)
            assert grad[0] == 0.0, op

    def test_min_const_passes_only_below(self):
        def f(t):
            return t.sum(t.min_const(t.parameter(0, 2), 1.0))

        _, grad = value_and_grad(f, np.array([0.5, 1.0]))
        np.testing.assert_array_equal(grad, [1.0, 0.0])

    def test_non_scalar_root(self):
        tape = Tape(np.ones(2))
        x = tape.parameter(0, 2)
        with pytest.raises(ControlError, match="scalar root"):
            tape.backward(x)

    def test_evaluation_tape_has_no_backward(self):
        tape = Tape(np.ones(1), grad_enabled=False)
        y = tape.sum(tape.parameter(0, 1))
        with pytest.raises(ControlError, match="grad_enabled"):
            tape.backward(y)

    def test_shared_parameter_node(self):
        tape = Tape(np.arange(4.0))
        a = tape.parameter(0, 4, (2, 2))
        b = tape.parameter(0, 4, (2, 2))
        assert a.id == b.id

    def test_broadcast_adjoint_sums_back(self):
        def f(t):
            b = t.parameter(0, 2)
            return t.mean(t.sum(t.constant(np.ones((3, 2))) * b))

        _, grad = value_and_grad(f, np.array([1.0, 2.0]))
        np.testing.assert_allclose(grad, [1.0, 1.0])

    def test_linearity(self, rng):
        theta = rng.normal(size=6)

        def f(t):
            return t.mean(t.sum(t.sigmoid(t.parameter(0, 6, (2, 3)))))

        def g(t):
            x = t.parameter(0, 6)
            return t.dot(x, x)

        _, gf = value_and_grad(f, theta)
        _, gg = value_and_grad(g, theta)
        _, gfg = value_and_grad(lambda t: f(t) * 2.0 + g(t) * -3.0, theta)
        np.testing.assert_allclose(gfg, 2.0 * gf - 3.0 * gg, atol=1e-12)

    def test_replay_is_bitwise(self, rng):
        theta = rng.normal(size=5)

        def f(t):
            x = t.parameter(0, 5)
            return t.sum(t.exp(x) * t.log(t.square(x) + 1.0))

        _, g1 = value_and_grad(f, theta)
        _, g2 = value_and_grad(f, theta)
        assert g1.tobytes() == g2.tobytes()


# ---------------------------------------------------------------------------
# Finite differences
# ---------------------------------------------------------------------------


class TestFiniteDiff:
    def test_quadratic(self):
        def f(t):
            x = t.parameter(0, 2)
            return t.dot(x, x)

        assert finite_diff_check(f, np.array([1.0, 2.0]), 1e-5) < 1e-9

    @pytest.mark.parametrize(
        "op", ["sigmoid", "exp", "square", "relu", "abs", "positive_part", "log"]
    )
    def test_elementwise_ops(self, op, rng):
        theta = rng.uniform(0.5, 2.0, size=4) * rng.choice([-1.0, 1.0], size=4)
        if op == "log":
            theta = np.abs(theta)

        def f(t):
            x = t.parameter(0, 4)
            return t.sum(getattr(t, op)(x) * np.array([1.0, -2.0, 0.5, 3.0]))

        assert finite_diff_check(f, theta) < 1e-6

    def test_mlp_through_euler_recursion(self, rng):
        sizes = [(4, 2), (4, 4), (1, 4)]
        counts = [o * i + o for o, i in sizes]
        theta = rng.normal(scale=0.5, size=sum(counts))
        noise = rng.normal(size=(5, 3, 2))

        def f(t):
            x = t.constant(np.ones((3, 2)))
            for k in range(5):
                h, offset = x, 0
                for j, (o, i) in enumerate(sizes):
                    w = t.parameter(offset, offset + o * i, (o, i))
                    b = t.parameter(offset + o * i, offset + o * i + o)
                    h = t.matvec(w, h) + b
                    if j < len(sizes) - 1:
                        h = t.sigmoid(h)
                    offset += o * i + o
                x = x + h * 0.2 + noise[k] * np.sqrt(0.2) * 0.1
            return t.mean(t.sum(t.square(x)))

        assert finite_diff_check(f, theta) < 1e-6

    def test_nan_propagates(self):
        def f(t):
            return t.sum(t.log(t.parameter(0, 1)))

        assert np.isnan(finite_diff_check(f, np.array([-1.0])))

    def test_relative_floor(self):
        def f(t):
            x = t.parameter(0, 2)
            return t.dot(x, x * np.array([1.0, 1e-12]))

        loose = finite_diff_check(f, np.array([1.0, 1.0]), relative_floor=1e-6)
        assert loose < 1e-4
