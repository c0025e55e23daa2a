"""Gradient correctness: finite differences vs the reverse-mode tape."""

import numpy as np
import pytest

from gshield.numerics import (
    AdamState,
    GradientMissingError,
    ParamGraph,
    Tensor,
    adam_step,
    bce,
    conv2d,
    conv_transpose2d,
    dense,
    grad_check,
    graph_fragment,
    leaky_relu,
    mean,
    mse,
    mul,
    sigmoid,
    tsum,
)


def build_graph(entries):
    g = ParamGraph()
    for name, arr in entries.items():
        g.add(name, arr, dtype=np.float64)
    return g


class TestGradCheck:
    def test_linear_layer(self):
        rng = np.random.default_rng(0)
        g = build_graph({"w": rng.standard_normal((4, 3)), "b": rng.standard_normal(4)})
        x = rng.standard_normal((2, 3))

        def fwd(graph):
            return mse(dense(Tensor(x, dtype=np.float64), graph["w"], graph["b"]), np.zeros((2, 4)))

        fn, params = graph_fragment(fwd, g)
        report = grad_check(fn, params, tolerance=1e-4)
        assert report.passed, report.failures()

    def test_conv2d_3x3_on_6x6(self):
        rng = np.random.default_rng(1)
        g = build_graph(
            {"w": 0.5 * rng.standard_normal((2, 1, 3, 3)), "b": rng.standard_normal(2)}
        )
        x = rng.standard_normal((1, 1, 6, 6))

        def fwd(graph):
            return mse(conv2d(Tensor(x, dtype=np.float64), graph["w"], graph["b"], 1, 0), np.zeros((1, 2, 4, 4)))

        fn, params = graph_fragment(fwd, g)
        report = grad_check(fn, params, tolerance=1e-3)
        assert report.passed, report.failures()

    def test_conv_transpose2d(self):
        rng = np.random.default_rng(2)
        g = build_graph(
            {"w": 0.5 * rng.standard_normal((2, 3, 4, 4)), "b": rng.standard_normal(3)}
        )
        x = rng.standard_normal((1, 2, 3, 3))

        def fwd(graph):
            out = conv_transpose2d(Tensor(x, dtype=np.float64), graph["w"], graph["b"], 2, 1)
            return tsum(mul(out, out))

        fn, params = graph_fragment(fwd, g)
        report = grad_check(fn, params, tolerance=1e-3)
        assert report.passed, report.failures()

    def test_two_layer_conv_sigmoid_bce(self):
        rng = np.random.default_rng(3)
        g = build_graph(
            {
                "w1": 0.4 * rng.standard_normal((2, 1, 3, 3)),
                "b1": 0.1 * rng.standard_normal(2),
                "w2": 0.4 * rng.standard_normal((1, 2, 3, 3)),
                "b2": 0.1 * rng.standard_normal(1),
            }
        )
        x = rng.standard_normal((1, 1, 8, 8))
        labels = np.ones((1, 1, 4, 4))

        def fwd(graph):
            h = leaky_relu(conv2d(Tensor(x, dtype=np.float64), graph["w1"], graph["b1"], 1, 1))
            out = sigmoid(conv2d(h, graph["w2"], graph["b2"], 2, 1))
            return bce(out, labels)

        fn, params = graph_fragment(fwd, g)
        report = grad_check(fn, params, tolerance=1e-3)
        assert report.passed, report.failures()

    def test_input_gradients_via_fragment(self):
        rng = np.random.default_rng(4)
        w = rng.standard_normal((2, 1, 3, 3))
        b = rng.standard_normal(2)
        g = build_graph({"x": rng.standard_normal((1, 1, 5, 5))})

        def fwd(graph):
            out = conv2d(graph["x"], Tensor(w, dtype=np.float64), Tensor(b, dtype=np.float64), 2, 1)
            return mean(mul(out, out))

        fn, params = graph_fragment(fwd, g)
        report = grad_check(fn, params, tolerance=1e-3)
        assert report.passed, report.failures()


class TestAdam:
    def test_zero_gradient_keeps_parameters(self):
        p = {"w": np.array([1.0, -2.0], dtype=np.float64)}
        state = AdamState(learning_rate=0.1)
        adam_step(p, {"w": np.zeros(2)}, state)
        np.testing.assert_array_equal(p["w"], [1.0, -2.0])
        assert state.t == 1

    def test_first_step_closed_form(self):
        p = {"w": np.array([0.0], dtype=np.float64)}
        state = AdamState(learning_rate=0.1)
        adam_step(p, {"w": np.array([1.0])}, state)
        expected = -0.1 * 1.0 / (1.0 + state.eps)
        assert p["w"][0] == pytest.approx(expected, abs=1e-6)

    def test_two_steps_match_scalar_reference(self):
        # independent scalar Adam, written out longhand
        lr, b1, b2, eps = 0.05, 0.9, 0.999, 1e-8
        grads = [0.7, -0.3]
        w_ref, m, v = 0.4, 0.0, 0.0
        for step, g in enumerate(grads, start=1):
            m = b1 * m + (1 - b1) * g
            v = b2 * v + (1 - b2) * g * g
            mhat = m / (1 - b1**step)
            vhat = v / (1 - b2**step)
            w_ref -= lr * mhat / (np.sqrt(vhat) + eps)

        p = {"w": np.array([0.4], dtype=np.float64)}
        state = AdamState(learning_rate=lr, beta1=b1, beta2=b2, eps=eps)
        for g in grads:
            adam_step(p, {"w": np.array([g])}, state)
        assert p["w"][0] == pytest.approx(w_ref, rel=1e-12)
        assert state.t == 2

    def test_missing_gradient_raises(self):
        p = {"w": np.array([1.0])}
        with pytest.raises(GradientMissingError):
            adam_step(p, {}, AdamState(0.1))

    def test_paramgraph_update_determinism(self):
        def run():
            g = ParamGraph()
            g.add("w", np.full((2, 2), 0.3), dtype=np.float32)
            state = AdamState(learning_rate=0.01)
            for _ in range(5):
                loss = mse(g["w"], np.ones((2, 2), dtype=np.float32))
                g.backward(loss)
                adam_step(g, g.grads(), state)
            return g["w"].data.copy()

        assert np.array_equal(run(), run())
