"""Numpy fallback for the splat compositing kernels.

Same math as the compiled module: per pixel, Gaussians arrive pre-sorted
front-to-back and composite as C = sum_i c_i a_i prod_{j<i} (1 - a_j) with
a_i = o_i exp(-q_i / 2), contributions cut off at q > qmax.  Gaussians are
processed in chunks of full (n, H, W) maps to bound memory.
"""

import numpy as np

CHUNK = 128


def _alpha_maps(mu, abc, opacity, xs, ys, qmax):
    dx = xs[None, :, :] - mu[:, 0, None, None]
    dy = ys[None, :, :] - mu[:, 1, None, None]
    q = (
        abc[:, 0, None, None] * dx * dx
        + 2.0 * abc[:, 1, None, None] * dx * dy
        + abc[:, 2, None, None] * dy * dy
    )
    mask = q <= qmax
    g = np.exp(-0.5 * np.where(mask, q, qmax)) * mask
    return opacity[:, None, None] * g, g, dx, dy


def forward(mu, abc, opacity, color, bbox, background, height, width, qmax):
    n = mu.shape[0]
    ys, xs = np.mgrid[0:height, 0:width].astype(np.float64)
    trans = np.ones((height, width), dtype=np.float64)
    img = np.zeros((height, width, 3), dtype=np.float64)
    for lo in range(0, n, CHUNK):
        hi = min(lo + CHUNK, n)
        alpha, _, _, _ = _alpha_maps(mu[lo:hi], abc[lo:hi], opacity[lo:hi], xs, ys, qmax)
        cp = np.cumprod(1.0 - alpha, axis=0)
        excl = np.concatenate([np.ones((1, height, width)), cp[:-1]], axis=0)
        w = alpha * excl * trans[None, :, :]
        img += np.einsum("nhw,nc->hwc", w, color[lo:hi])
        trans = trans * cp[-1]
    img += trans[:, :, None] * background[None, None, :]
    return img, trans


def backward(mu, abc, opacity, color, bbox, background, height, width, qmax, d_img):
    n = mu.shape[0]
    ys, xs = np.mgrid[0:height, 0:width].astype(np.float64)

    # pass 1: transmittance entering each chunk
    entries = []
    trans = np.ones((height, width), dtype=np.float64)
    for lo in range(0, n, CHUNK):
        hi = min(lo + CHUNK, n)
        entries.append(trans)
        alpha, _, _, _ = _alpha_maps(mu[lo:hi], abc[lo:hi], opacity[lo:hi], xs, ys, qmax)
        trans = trans * np.prod(1.0 - alpha, axis=0)
    t_fin = trans

    g_mu = np.zeros((n, 2), dtype=np.float64)
    g_abc = np.zeros((n, 3), dtype=np.float64)
    g_o = np.zeros(n, dtype=np.float64)
    g_color = np.zeros((n, 3), dtype=np.float64)

    # pass 2, back chunk by chunk, keeping the color accumulated behind
    suffix = t_fin[:, :, None] * background[None, None, :]
    starts = list(range(0, n, CHUNK))
    for ci in range(len(starts) - 1, -1, -1):
        lo = starts[ci]
        hi = min(lo + CHUNK, n)
        alpha, g, dx, dy = _alpha_maps(mu[lo:hi], abc[lo:hi], opacity[lo:hi], xs, ys, qmax)
        cp = np.cumprod(1.0 - alpha, axis=0)
        excl = np.concatenate([np.ones((1, height, width)), cp[:-1]], axis=0)
        t_i = excl * entries[ci][None, :, :]
        w = alpha * t_i

        wc = w[:, :, :, None] * color[lo:hi, None, None, :]
        # suffix color behind gaussian i (within chunk plus everything after it)
        behind = np.cumsum(wc[::-1], axis=0)[::-1]
        behind = np.concatenate([behind[1:], np.zeros((1, height, width, 3))], axis=0)
        behind = behind + suffix[None, :, :, :]

        g_color[lo:hi] = np.einsum("hwc,nhw->nc", d_img, w)
        dc_da = t_i[:, :, :, None] * color[lo:hi, None, None, :] - behind / (
            1.0 - alpha[:, :, :, None]
        )
        g_alpha = np.einsum("hwc,nhwc->nhw", d_img, dc_da)
        # zero out non-contributing pixels (alpha exactly 0)
        g_alpha = np.where(alpha > 0.0, g_alpha, 0.0)

        g_o[lo:hi] = np.einsum("nhw,nhw->n", g_alpha, g)
        g_q = g_alpha * opacity[lo:hi, None, None] * g * (-0.5)
        a_ = abc[lo:hi, 0, None, None]
        b_ = abc[lo:hi, 1, None, None]
        c_ = abc[lo:hi, 2, None, None]
        g_dx = g_q * 2.0 * (a_ * dx + b_ * dy)
        g_dy = g_q * 2.0 * (b_ * dx + c_ * dy)
        g_mu[lo:hi, 0] = -g_dx.sum(axis=(1, 2))
        g_mu[lo:hi, 1] = -g_dy.sum(axis=(1, 2))
        g_abc[lo:hi, 0] = (g_q * dx * dx).sum(axis=(1, 2))
        g_abc[lo:hi, 1] = (g_q * 2.0 * dx * dy).sum(axis=(1, 2))
        g_abc[lo:hi, 2] = (g_q * dy * dy).sum(axis=(1, 2))

        suffix = suffix + wc.sum(axis=0)
    return g_mu, g_abc, g_o, g_color
