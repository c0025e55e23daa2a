"""Differentiable splat rendering and the victim's reconstruction loss.

Per pixel, Gaussians sorted ascending by depth key composite front to back:
C = sum_i c_i a_i prod_{j<i} (1 - a_j) + background * residual transmittance,
with a_i = o_i exp(-0.5 d^T Sigma^{-1} d).  Contributions are cut off where
the exponent exceeds QMAX (alpha below ~1e-7), and the same cutoff is used
by forward and backward so the analytic gradients match the rendered image.
"""

import numpy as np

from .. import metrics
from ..numerics import Tensor, absolute, add, mean, mul, sub
from . import backend
from .model import SplatError

QMAX = 32.0


class RenderContext:
    """Precomputed per-render arrays shared by forward and backward."""

    def __init__(self, scene, kernels):
        n = scene.count
        if n < 1:
            raise SplatError("cannot render an empty scene")
        sx = np.exp(scene.scale[:, 0])
        sy = np.exp(scene.scale[:, 1])
        bad = ~(np.isfinite(sx) & np.isfinite(sy) & np.isfinite(scene.rotation).reshape(n))
        if bad.any():
            raise SplatError(f"non-finite covariance for Gaussian index {int(np.argmax(bad))}")
        ct = np.cos(scene.rotation)
        st = np.sin(scene.rotation)
        u = 1.0 / (sx * sx)
        v = 1.0 / (sy * sy)
        a = ct * ct * u + st * st * v
        b = ct * st * (u - v)
        c = st * st * u + ct * ct * v
        abc = np.stack([a, b, c], axis=1)
        if not np.isfinite(abc).all():
            bad_idx = int(np.argmax(~np.isfinite(abc).all(axis=1)))
            raise SplatError(f"non-finite covariance for Gaussian index {bad_idx}")

        order = np.argsort(scene.depth_key, kind="stable")
        self.order = order
        self.mu = np.ascontiguousarray(scene.mu[order])
        self.abc = np.ascontiguousarray(abc[order])
        self.opacity = np.ascontiguousarray(scene.opacities()[order])
        self.color = np.ascontiguousarray(scene.color[order])
        self.u = u[order]
        self.v = v[order]
        self.ct = ct[order]
        self.st = st[order]

        # tight rectangle around the q <= QMAX ellipse, from the covariance diagonal
        sxx = (ct * ct * sx * sx + st * st * sy * sy)[order]
        syy = (st * st * sx * sx + ct * ct * sy * sy)[order]
        hx = np.sqrt(QMAX * sxx)
        hy = np.sqrt(QMAX * syy)
        c0 = np.clip(np.ceil(self.mu[:, 0] - hx), 0, scene.width - 1)
        c1 = np.clip(np.floor(self.mu[:, 0] + hx), 0, scene.width - 1)
        r0 = np.clip(np.ceil(self.mu[:, 1] - hy), 0, scene.height - 1)
        r1 = np.clip(np.floor(self.mu[:, 1] + hy), 0, scene.height - 1)
        off = (self.mu[:, 0] + hx < 0) | (self.mu[:, 0] - hx > scene.width - 1) | (
            self.mu[:, 1] + hy < 0
        ) | (self.mu[:, 1] - hy > scene.height - 1)
        r1 = np.where(off, -1.0, r1)
        r0 = np.where(off, 0.0, r0)
        self.bbox = np.ascontiguousarray(
            np.stack([r0, r1, c0, c1], axis=1).astype(np.int64)
        )
        self.scene = scene
        self.kernels = kernels


def render_with_ctx(scene, kernel_backend=None):
    """Render and keep the context needed for the backward pass.

    Returns (image (H, W, 3) in [0, 1], residual transmittance (H, W), ctx).
    """
    kernels = backend.get_backend(kernel_backend)
    ctx = RenderContext(scene, kernels)
    img, trans = kernels.forward(
        ctx.mu,
        ctx.abc,
        ctx.opacity,
        ctx.color,
        ctx.bbox,
        scene.background,
        scene.height,
        scene.width,
        QMAX,
    )
    return np.clip(img, 0.0, 1.0), trans, ctx


def render(scene, kernel_backend=None):
    """Composite the scene to an (H, W, 3) image in [0, 1]."""
    img, _, _ = render_with_ctx(scene, kernel_backend)
    return img


def render_backward(ctx, d_img):
    """Chain image-space gradients back to the Gaussian parameters.

    Returns gradients in the scene's original (unsorted) Gaussian order,
    keyed mu / scale / rotation / opacity_logit / color.  depth_key is
    frozen and receives no gradient.
    """
    d_img = np.ascontiguousarray(d_img, dtype=np.float64)
    g_mu_s, g_abc_s, g_o_s, g_color_s = ctx.kernels.backward(
        ctx.mu,
        ctx.abc,
        ctx.opacity,
        ctx.color,
        ctx.bbox,
        ctx.scene.background,
        ctx.scene.height,
        ctx.scene.width,
        QMAX,
        d_img,
    )
    ga, gb, gc = g_abc_s[:, 0], g_abc_s[:, 1], g_abc_s[:, 2]
    ct, st, u, v = ctx.ct, ctx.st, ctx.u, ctx.v
    g_u = ga * ct * ct + gb * ct * st + gc * st * st
    g_v = ga * st * st - gb * ct * st + gc * ct * ct
    g_scale_s = np.stack([g_u * (-2.0 * u), g_v * (-2.0 * v)], axis=1)
    g_rot_s = (u - v) * (-2.0 * ct * st * ga + (ct * ct - st * st) * gb + 2.0 * ct * st * gc)
    o = ctx.opacity
    g_logit_s = g_o_s * o * (1.0 - o)

    n = ctx.order.shape[0]
    inv = np.empty(n, dtype=np.int64)
    inv[ctx.order] = np.arange(n)
    return {
        "mu": g_mu_s[inv],
        "scale": g_scale_s[inv],
        "rotation": g_rot_s[inv],
        "opacity_logit": g_logit_s[inv],
        "color": g_color_s[inv],
    }


def _loss_graph(rendered, target, lam):
    """Loss tape over the rendered image; returns (loss tensor, image leaf)."""
    if rendered.shape != target.shape:
        raise SplatError(
            f"reconstruction_loss: image shapes {rendered.shape} and {target.shape} differ"
        )
    x = Tensor(np.ascontiguousarray(rendered.transpose(2, 0, 1)[:, None]), requires_grad=True, dtype=np.float64)
    y = Tensor(np.ascontiguousarray(target.transpose(2, 0, 1)[:, None]), dtype=np.float64)
    l1 = mean(absolute(sub(x, y)))
    if lam == 0.0:
        return l1, x
    dssim = mul(sub(Tensor(np.float64(1.0), dtype=np.float64), metrics.ssim_graph(x, y)), 0.5)
    loss = add(mul(l1, 1.0 - lam), mul(dssim, lam))
    return loss, x


def reconstruction_loss(rendered, target, lam):
    """(1 - lambda) * L1 + lambda * D-SSIM with D-SSIM = (1 - SSIM) / 2."""
    loss, _ = _loss_graph(np.asarray(rendered, dtype=np.float64), np.asarray(target, dtype=np.float64), lam)
    return loss.item()


def reconstruction_loss_grad(rendered, target, lam):
    """Loss value plus its gradient w.r.t. the rendered image, (H, W, 3)."""
    loss, x = _loss_graph(np.asarray(rendered, dtype=np.float64), np.asarray(target, dtype=np.float64), lam)
    loss.backward()
    d_img = x.grad[:, 0].transpose(1, 2, 0)
    return loss.item(), d_img
