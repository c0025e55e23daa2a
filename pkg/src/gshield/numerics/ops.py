"""Differentiable operations over :class:`~gshield.numerics.tensor.Tensor`.

Convolution is cross-correlation (no kernel flip) with floor output
arithmetic, layout (batch, channel, height, width).  ``conv_transpose2d``
is the exact adjoint of ``conv2d`` for matching hyperparameters and the
same weight array, which the test suite checks by inner products.
"""

import numpy as np

from .tensor import ShapeError, Tensor, make_result

BCE_CLAMP = 1e-7


def _as_tensor(x, like):
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=like.data.dtype), dtype=like.data.dtype)


# ---------------------------------------------------------------------------
# elementwise arithmetic (same-shape tensors or python scalars)


def _check_same_shape(a, b, op):
    if a.data.shape != b.data.shape:
        raise ShapeError(
            f"{op}: operand shapes {a.data.shape} and {b.data.shape} differ",
            dimension="shape",
        )


def add(a, b):
    b = _as_tensor(b, a)
    if b.data.ndim:
        _check_same_shape(a, b, "add")
    out = a.data + b.data

    def backward(g):
        if a.requires_grad:
            a._accumulate(g)
        if b.requires_grad:
            b._accumulate(g if b.data.ndim else g.sum())

    return make_result(out, (a, b), backward)


def sub(a, b):
    b = _as_tensor(b, a)
    if b.data.ndim:
        _check_same_shape(a, b, "sub")
    out = a.data - b.data

    def backward(g):
        if a.requires_grad:
            a._accumulate(g)
        if b.requires_grad:
            b._accumulate(-g if b.data.ndim else -g.sum())

    return make_result(out, (a, b), backward)


def mul(a, b):
    b = _as_tensor(b, a)
    if b.data.ndim:
        _check_same_shape(a, b, "mul")
    out = a.data * b.data

    def backward(g):
        if a.requires_grad:
            a._accumulate(g * b.data)
        if b.requires_grad:
            gb = g * a.data
            b._accumulate(gb if b.data.ndim else gb.sum())

    return make_result(out, (a, b), backward)


def div(a, b):
    b = _as_tensor(b, a)
    if b.data.ndim:
        _check_same_shape(a, b, "div")
    out = a.data / b.data

    def backward(g):
        if a.requires_grad:
            a._accumulate(g / b.data)
        if b.requires_grad:
            gb = -g * a.data / (b.data * b.data)
            b._accumulate(gb if b.data.ndim else gb.sum())

    return make_result(out, (a, b), backward)


def neg(a):
    def backward(g):
        if a.requires_grad:
            a._accumulate(-g)

    return make_result(-a.data, (a,), backward)


def absolute(a):
    out = np.abs(a.data)
    sign = np.sign(a.data)

    def backward(g):
        if a.requires_grad:
            a._accumulate(g * sign)

    return make_result(out, (a,), backward)


def square(a):
    def backward(g):
        if a.requires_grad:
            a._accumulate(2.0 * g * a.data)

    return make_result(a.data * a.data, (a,), backward)


def mean(a):
    out = np.asarray(a.data.mean(), dtype=a.data.dtype)
    n = a.data.size

    def backward(g):
        if a.requires_grad:
            a._accumulate(np.full_like(a.data, g / n))

    return make_result(out, (a,), backward)


def tsum(a):
    out = np.asarray(a.data.sum(), dtype=a.data.dtype)

    def backward(g):
        if a.requires_grad:
            a._accumulate(np.full_like(a.data, g))

    return make_result(out, (a,), backward)


def concat(tensors, axis=1):
    datas = [t.data for t in tensors]
    out = np.concatenate(datas, axis=axis)
    sizes = [d.shape[axis] for d in datas]
    offsets = np.cumsum([0] + sizes)

    def backward(g):
        for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
            if t.requires_grad:
                idx = [slice(None)] * g.ndim
                idx[axis] = slice(lo, hi)
                t._accumulate(g[tuple(idx)])

    return make_result(out, tuple(tensors), backward)


# ---------------------------------------------------------------------------
# activations


def relu(a):
    mask = a.data > 0
    out = np.where(mask, a.data, 0)

    def backward(g):
        if a.requires_grad:
            a._accumulate(g * mask)

    return make_result(out.astype(a.data.dtype), (a,), backward)


def leaky_relu(a, slope=0.2):
    mask = a.data > 0
    out = np.where(mask, a.data, slope * a.data)

    def backward(g):
        if a.requires_grad:
            a._accumulate(np.where(mask, g, slope * g))

    return make_result(out.astype(a.data.dtype), (a,), backward)


SIGMOID_MARGIN = 1e-7


def _sigmoid(x):
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    # keep the output strictly inside (0, 1) even when the exponent saturates
    return np.clip(out, SIGMOID_MARGIN, 1.0 - SIGMOID_MARGIN)


def sigmoid(a):
    out = _sigmoid(a.data)

    def backward(g):
        if a.requires_grad:
            a._accumulate(g * out * (1.0 - out))

    return make_result(out, (a,), backward)


# ---------------------------------------------------------------------------
# losses


def mse(a, b):
    b = _as_tensor(b, a)
    _check_same_shape(a, b, "mse")
    diff = a.data - b.data
    out = np.asarray(np.mean(diff * diff), dtype=a.data.dtype)
    n = diff.size

    def backward(g):
        scale = 2.0 * g / n
        if a.requires_grad:
            a._accumulate(scale * diff)
        if b.requires_grad:
            b._accumulate(-scale * diff)

    return make_result(out, (a, b), backward)


def bce(prob, label):
    """Binary cross-entropy, averaged over the batch.

    ``prob`` must already be a probability in (0, 1); values at or beyond
    the clamping margin signal a missing sigmoid and raise.
    """
    y = label.data if isinstance(label, Tensor) else np.asarray(label, dtype=prob.data.dtype)
    if y.shape != prob.data.shape:
        raise ShapeError(
            f"bce: prob shape {prob.data.shape} != label shape {y.shape}",
            dimension="shape",
        )
    if not np.all((y == 0) | (y == 1)):
        raise ValueError("bce: labels must be exactly 0 or 1")
    if prob.data.min() <= 0.0 or prob.data.max() >= 1.0:
        raise ValueError(
            "bce: probabilities outside (0, 1); apply a sigmoid before the loss"
        )
    p = np.clip(prob.data, BCE_CLAMP, 1.0 - BCE_CLAMP)
    n = p.size
    out = np.asarray(np.mean(-y * np.log(p) - (1.0 - y) * np.log1p(-p)), dtype=prob.data.dtype)

    def backward(g):
        if prob.requires_grad:
            prob._accumulate(g / n * (-y / p + (1.0 - y) / (1.0 - p)))

    return make_result(out, (prob,), backward)


# ---------------------------------------------------------------------------
# linear / convolutional layers


def dense(x, weight, bias):
    """Affine map: (B, N) x (M, N) + (M,) -> (B, M)."""
    if x.data.ndim != 2 or weight.data.ndim != 2:
        raise ShapeError("dense: expects 2-d input and weight", dimension="rank")
    if x.data.shape[1] != weight.data.shape[1]:
        raise ShapeError(
            f"dense: input features {x.data.shape[1]} != weight features {weight.data.shape[1]}",
            dimension="in_features",
        )
    if bias.data.shape != (weight.data.shape[0],):
        raise ShapeError(
            f"dense: bias shape {bias.data.shape} != ({weight.data.shape[0]},)",
            dimension="out_features",
        )
    out = x.data @ weight.data.T + bias.data

    def backward(g):
        if x.requires_grad:
            x._accumulate(g @ weight.data)
        if weight.requires_grad:
            weight._accumulate(g.T @ x.data)
        if bias.requires_grad:
            bias._accumulate(g.sum(axis=0))

    return make_result(out, (x, weight, bias), backward)


def conv_out_size(size, k, stride, padding):
    return (size + 2 * padding - k) // stride + 1


def _im2col(x, k, stride, padding):
    """(B, C, H, W) -> strided windows (B, C, Ho, Wo, k, k)."""
    if padding:
        x = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    win = np.lib.stride_tricks.sliding_window_view(x, (k, k), axis=(2, 3))
    return win[:, :, ::stride, ::stride, :, :]


def _col2im(dcols, shape, k, stride, padding):
    """Adjoint of _im2col: scatter (B, Ho*Wo, C*k*k) back onto (B, C, H, W)."""
    b, c, h, w = shape
    hp, wp = h + 2 * padding, w + 2 * padding
    ho = (hp - k) // stride + 1
    wo = (wp - k) // stride + 1
    dxp = np.zeros((b, c, hp, wp), dtype=dcols.dtype)
    d6 = dcols.reshape(b, ho, wo, c, k, k).transpose(0, 3, 1, 2, 4, 5)
    for ki in range(k):
        for kj in range(k):
            dxp[:, :, ki : ki + stride * ho : stride, kj : kj + stride * wo : stride] += d6[
                :, :, :, :, ki, kj
            ]
    if padding:
        dxp = dxp[:, :, padding : hp - padding, padding : wp - padding]
    return dxp


def _check_conv_args(k, stride, padding):
    if k < 1:
        raise ShapeError(f"conv: kernel size {k} < 1", dimension="kernel")
    if stride < 1:
        raise ShapeError(f"conv: stride {stride} < 1", dimension="stride")
    if padding < 0:
        raise ShapeError(f"conv: padding {padding} < 0", dimension="padding")


def conv2d(x, weight, bias, stride=1, padding=0):
    """Cross-correlation: (B, Cin, H, W) x (Cout, Cin, k, k) -> (B, Cout, H', W')."""
    _check_conv_args(weight.data.shape[-1], stride, padding)
    if x.data.ndim != 4 or weight.data.ndim != 4:
        raise ShapeError("conv2d: expects 4-d input and weight", dimension="rank")
    b, cin, h, w = x.data.shape
    cout, cin_w, k, k2 = weight.data.shape
    if k != k2:
        raise ShapeError(f"conv2d: kernel is {k}x{k2}, must be square", dimension="kernel")
    if cin != cin_w:
        raise ShapeError(
            f"conv2d: input channels {cin} != weight channels {cin_w}",
            dimension="in_channels",
        )
    if bias.data.shape != (cout,):
        raise ShapeError(
            f"conv2d: bias shape {bias.data.shape} != ({cout},)", dimension="out_channels"
        )
    ho = conv_out_size(h, k, stride, padding)
    wo = conv_out_size(w, k, stride, padding)
    if ho < 1 or wo < 1:
        raise ShapeError(
            f"conv2d: kernel {k} exceeds padded input {h + 2 * padding}x{w + 2 * padding}",
            dimension="height" if ho < 1 else "width",
        )

    win = _im2col(x.data, k, stride, padding)
    cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(b, ho * wo, cin * k * k)
    wmat = weight.data.reshape(cout, cin * k * k)
    out = (cols @ wmat.T).transpose(0, 2, 1).reshape(b, cout, ho, wo) + bias.data.reshape(
        1, cout, 1, 1
    )

    def backward(g):
        gmat = g.transpose(0, 2, 3, 1).reshape(b, ho * wo, cout)
        if weight.requires_grad:
            gw = np.einsum("blo,blk->ok", gmat, cols)
            weight._accumulate(gw.reshape(cout, cin, k, k))
        if bias.requires_grad:
            bias._accumulate(g.sum(axis=(0, 2, 3)))
        if x.requires_grad:
            dcols = gmat @ wmat
            x._accumulate(_col2im(dcols, x.data.shape, k, stride, padding))

    return make_result(out, (x, weight, bias), backward)


def conv_transpose2d(x, weight, bias, stride=1, padding=0):
    """Adjoint of conv2d: (B, Cin, H, W) x (Cin, Cout, k, k) -> (B, Cout, H'', W'').

    H'' = (H - 1) * stride - 2 * padding + k.
    """
    _check_conv_args(weight.data.shape[-1], stride, padding)
    if x.data.ndim != 4 or weight.data.ndim != 4:
        raise ShapeError("conv_transpose2d: expects 4-d input and weight", dimension="rank")
    b, cin, h, w = x.data.shape
    cin_w, cout, k, k2 = weight.data.shape
    if k != k2:
        raise ShapeError(
            f"conv_transpose2d: kernel is {k}x{k2}, must be square", dimension="kernel"
        )
    if cin != cin_w:
        raise ShapeError(
            f"conv_transpose2d: input channels {cin} != weight channels {cin_w}",
            dimension="in_channels",
        )
    if bias.data.shape != (cout,):
        raise ShapeError(
            f"conv_transpose2d: bias shape {bias.data.shape} != ({cout},)",
            dimension="out_channels",
        )
    ho = (h - 1) * stride - 2 * padding + k
    wo = (w - 1) * stride - 2 * padding + k
    if ho < 1 or wo < 1:
        raise ShapeError(
            f"conv_transpose2d: output {ho}x{wo} is empty", dimension="height" if ho < 1 else "width"
        )
    if conv_out_size(ho, k, stride, padding) != h or conv_out_size(wo, k, stride, padding) != w:
        raise ShapeError(
            "conv_transpose2d: shape arithmetic does not invert cleanly "
            f"for input {h}x{w}, kernel {k}, stride {stride}, padding {padding}",
            dimension="height",
        )

    xmat = x.data.transpose(0, 2, 3, 1).reshape(b, h * w, cin)
    vmat = weight.data.reshape(cin, cout * k * k)
    dcols = xmat @ vmat
    out = _col2im(dcols, (b, cout, ho, wo), k, stride, padding) + bias.data.reshape(
        1, cout, 1, 1
    )

    def backward(g):
        win = _im2col(g, k, stride, padding)
        cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(b, h * w, cout * k * k)
        if x.requires_grad:
            gx = cols @ vmat.T
            x._accumulate(gx.reshape(b, h, w, cin).transpose(0, 3, 1, 2))
        if weight.requires_grad:
            gv = np.einsum("bli,blj->ij", xmat, cols)
            weight._accumulate(gv.reshape(cin, cout, k, k))
        if bias.requires_grad:
            bias._accumulate(g.sum(axis=(0, 2, 3)))

    return make_result(out, (x, weight, bias), backward)


def global_avg_pool(x):
    """(B, C, H, W) -> (B, C) spatial mean."""
    if x.data.ndim != 4:
        raise ShapeError("global_avg_pool: expects 4-d input", dimension="rank")
    b, c, h, w = x.data.shape
    out = x.data.mean(axis=(2, 3))

    def backward(g):
        if x.requires_grad:
            x._accumulate(np.broadcast_to(g.reshape(b, c, 1, 1), x.data.shape) / (h * w))

    return make_result(out, (x,), backward)
