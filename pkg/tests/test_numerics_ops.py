"""Layer-level tests against brute-force loop oracles."""

import numpy as np
import pytest

from gshield.numerics import (
    ParamGraph,
    ShapeError,
    Tensor,
    bce,
    conv2d,
    conv_transpose2d,
    dense,
    leaky_relu,
    mse,
    relu,
    sigmoid,
)


def ref_conv2d(x, w, b, stride, padding):
    """Direct nested-loop cross-correlation, written independently of the kernel."""
    B, Cin, H, W = x.shape
    Cout, _, k, _ = w.shape
    xp = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    Ho = (H + 2 * padding - k) // stride + 1
    Wo = (W + 2 * padding - k) // stride + 1
    out = np.zeros((B, Cout, Ho, Wo), dtype=np.float64)
    for bi in range(B):
        for co in range(Cout):
            for i in range(Ho):
                for j in range(Wo):
                    acc = 0.0
                    for ci in range(Cin):
                        for ki in range(k):
                            for kj in range(k):
                                acc += xp[bi, ci, i * stride + ki, j * stride + kj] * w[co, ci, ki, kj]
                    out[bi, co, i, j] = acc + b[co]
    return out


def ref_conv_transpose2d(x, w, b, stride, padding):
    """Nested-loop transposed convolution: scatter each input onto the output."""
    B, Cin, H, W = x.shape
    _, Cout, k, _ = w.shape
    Ho = (H - 1) * stride - 2 * padding + k
    Wo = (W - 1) * stride - 2 * padding + k
    out = np.zeros((B, Cout, Ho, Wo), dtype=np.float64)
    for bi in range(B):
        for ci in range(Cin):
            for i in range(H):
                for j in range(W):
                    for co in range(Cout):
                        for ki in range(k):
                            for kj in range(k):
                                oi = i * stride + ki - padding
                                oj = j * stride + kj - padding
                                if 0 <= oi < Ho and 0 <= oj < Wo:
                                    out[bi, co, oi, oj] += x[bi, ci, i, j] * w[ci, co, ki, kj]
    for co in range(Cout):
        out[:, co] += b[co]
    return out


def ref_matmul(x, w, b):
    B, N = x.shape
    M = w.shape[0]
    out = np.zeros((B, M), dtype=np.float64)
    for bi in range(B):
        for m in range(M):
            acc = 0.0
            for n in range(N):
                acc += x[bi, n] * w[m, n]
            out[bi, m] = acc + b[m]
    return out


def t(arr, dtype=np.float64):
    return Tensor(arr, dtype=dtype)


class TestConv2d:
    def test_identity_1x1(self):
        x = t(np.random.default_rng(0).random((1, 1, 1, 1)))
        w = t(np.ones((1, 1, 1, 1)))
        b = t(np.zeros(1))
        out = conv2d(x, w, b, stride=1, padding=0)
        np.testing.assert_allclose(out.data, x.data)

    def test_all_ones_sum(self):
        x = t(np.ones((1, 1, 3, 3)))
        w = t(np.ones((1, 1, 3, 3)))
        b = t(np.zeros(1))
        out = conv2d(x, w, b, stride=1, padding=0)
        assert out.data.shape == (1, 1, 1, 1)
        assert out.data[0, 0, 0, 0] == pytest.approx(9.0)

    def test_matches_loop_oracle(self):
        rng = np.random.default_rng(1)
        x = rng.standard_normal((1, 2, 5, 5))
        w = rng.standard_normal((3, 2, 3, 3))
        b = rng.standard_normal(3)
        out = conv2d(t(x), t(w), t(b), stride=2, padding=1)
        np.testing.assert_allclose(out.data, ref_conv2d(x, w, b, 2, 1), rtol=1e-12)

    def test_channel_mismatch_names_dimension(self):
        x = t(np.zeros((1, 2, 4, 4)))
        w = t(np.zeros((1, 3, 3, 3)))
        b = t(np.zeros(1))
        with pytest.raises(ShapeError) as exc:
            conv2d(x, w, b)
        assert exc.value.dimension == "in_channels"

    def test_linearity_without_bias(self):
        rng = np.random.default_rng(2)
        x = rng.standard_normal((1, 2, 6, 6))
        y = rng.standard_normal((1, 2, 6, 6))
        w = t(rng.standard_normal((2, 2, 3, 3)))
        b = t(np.zeros(2))
        a, bb = 0.7, -1.3
        lhs = conv2d(t(a * x + bb * y), w, b, 1, 1).data
        rhs = a * conv2d(t(x), w, b, 1, 1).data + bb * conv2d(t(y), w, b, 1, 1).data
        np.testing.assert_allclose(lhs, rhs, atol=1e-5)


class TestConvTranspose2d:
    def test_scalar_case(self):
        x = t(np.array([[[[2.5]]]]))
        w = t(np.array([[[[3.0]]]]))
        b = t(np.zeros(1))
        out = conv_transpose2d(x, w, b, stride=1, padding=0)
        assert out.data[0, 0, 0, 0] == pytest.approx(7.5)

    def test_stride2_upsampling_matches_loop_oracle(self):
        rng = np.random.default_rng(3)
        x = rng.standard_normal((1, 1, 2, 2))
        w = rng.standard_normal((1, 1, 2, 2))
        b = rng.standard_normal(1)
        out = conv_transpose2d(t(x), t(w), t(b), stride=2, padding=0)
        assert out.data.shape == (1, 1, 4, 4)
        np.testing.assert_allclose(out.data, ref_conv_transpose2d(x, w, b, 2, 0), rtol=1e-12)

    def test_matches_loop_oracle_padded(self):
        rng = np.random.default_rng(4)
        x = rng.standard_normal((2, 3, 4, 4))
        w = rng.standard_normal((3, 2, 4, 4))
        b = rng.standard_normal(2)
        out = conv_transpose2d(t(x), t(w), t(b), stride=2, padding=1)
        np.testing.assert_allclose(out.data, ref_conv_transpose2d(x, w, b, 2, 1), rtol=1e-12)

    @pytest.mark.parametrize("stride,padding,k,size", [(1, 0, 3, 5), (2, 1, 4, 6), (2, 0, 2, 4)])
    def test_adjoint_identity(self, stride, padding, k, size):
        # <conv2d(x, W), y> == <x, conv_transpose2d(y, W)> over 100 random draws
        rng = np.random.default_rng(5)
        zb = Tensor(np.zeros(3, dtype=np.float64))
        zb2 = Tensor(np.zeros(2, dtype=np.float64))
        for _ in range(100):
            x = rng.standard_normal((1, 2, size, size))
            w = rng.standard_normal((3, 2, k, k))
            fx = conv2d(t(x), t(w), zb, stride, padding).data
            y = rng.standard_normal(fx.shape)
            wty = conv_transpose2d(t(y), t(w), zb2, stride, padding).data
            lhs = float((fx * y).sum())
            rhs = float((x * wty).sum())
            assert lhs == pytest.approx(rhs, rel=1e-4)


class TestDense:
    def test_identity(self):
        x = t(np.random.default_rng(6).random((3, 4)))
        out = dense(x, t(np.eye(4)), t(np.zeros(4)))
        np.testing.assert_allclose(out.data, x.data)

    def test_zero_weight_gives_bias(self):
        b = np.array([1.0, -2.0])
        out = dense(t(np.ones((3, 5))), t(np.zeros((2, 5))), t(b))
        np.testing.assert_allclose(out.data, np.tile(b, (3, 1)))

    def test_matches_triple_loop(self):
        rng = np.random.default_rng(7)
        x = rng.standard_normal((2, 3))
        w = rng.standard_normal((4, 3))
        b = rng.standard_normal(4)
        out = dense(t(x), t(w), t(b))
        np.testing.assert_allclose(out.data, ref_matmul(x, w, b), rtol=1e-12)


class TestActivationsAndLosses:
    def test_pointwise_values(self):
        assert sigmoid(t(np.array(0.0))).item() == pytest.approx(0.5)
        assert relu(t(np.array(-1.0))).item() == 0.0
        assert relu(t(np.array(2.0))).item() == 2.0
        assert leaky_relu(t(np.array(-2.0)), 0.2).item() == pytest.approx(-0.4)

    def test_sigmoid_strictly_inside_unit_interval(self):
        x = t(np.array([-80.0, -5.0, 0.0, 5.0, 80.0]))
        out = sigmoid(x).data
        assert np.all(out > 0.0) and np.all(out < 1.0)

    def test_mse_self_is_zero(self):
        x = t(np.random.default_rng(8).random(10))
        assert mse(x, x).item() == 0.0

    def test_mse_matches_elementwise_oracle(self):
        rng = np.random.default_rng(9)
        a = rng.standard_normal(8)
        b = rng.standard_normal(8)
        expected = sum((ai - bi) ** 2 for ai, bi in zip(a, b)) / 8.0
        assert mse(t(a), t(b)).item() == pytest.approx(expected, rel=1e-12)

    def test_bce_at_half(self):
        out = bce(t(np.array([0.5])), np.array([1.0]))
        assert out.item() == pytest.approx(np.log(2.0), rel=1e-9)

    def test_bce_rejects_unclamped_probabilities(self):
        with pytest.raises(ValueError, match="sigmoid"):
            bce(t(np.array([1.5])), np.array([1.0]))
        with pytest.raises(ValueError, match="sigmoid"):
            bce(t(np.array([0.0])), np.array([0.0]))

    def test_bce_rejects_soft_labels(self):
        with pytest.raises(ValueError, match="labels"):
            bce(t(np.array([0.5])), np.array([0.3]))


class TestGraph:
    def test_unused_parameter_gets_zero_gradient(self):
        g = ParamGraph()
        used = g.add("used", np.ones((2, 2)), dtype=np.float64)
        unused = g.add("unused", np.ones(3), dtype=np.float64)
        loss = mse(used, np.zeros((2, 2)))
        g.backward(loss)
        assert unused.grad is not None
        np.testing.assert_array_equal(unused.grad, np.zeros(3))
        assert used.grad.shape == used.data.shape
        assert np.any(used.grad != 0)

    def test_detach_blocks_gradient(self):
        g = ParamGraph()
        p = g.add("p", np.array([2.0]), dtype=np.float64)
        out = mse(sigmoid(p).detach(), np.zeros(1))
        g.backward(out)
        np.testing.assert_array_equal(p.grad, np.zeros(1))

    def test_forward_determinism(self):
        rng = np.random.default_rng(10)
        x = rng.standard_normal((2, 3, 8, 8)).astype(np.float32)
        w = rng.standard_normal((4, 3, 3, 3)).astype(np.float32)
        b = rng.standard_normal(4).astype(np.float32)
        a1 = conv2d(Tensor(x), Tensor(w), Tensor(b), 2, 1).data
        a2 = conv2d(Tensor(x), Tensor(w), Tensor(b), 2, 1).data
        assert np.array_equal(a1, a2)
