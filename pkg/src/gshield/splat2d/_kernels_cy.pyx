# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled splat compositing kernels.

Identical math to the numpy fallback; per-pixel loops walk only the
Gaussians whose bounding box covers the pixel's row, so the cost scales
with covered area instead of canvas x primitive count.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport exp

cnp.import_array()


cdef void _row_lists(long[:, ::1] bbox, int height,
                     long[::1] offsets, long[::1] entries):
    # offsets is pre-filled with per-row counts converted to start offsets;
    # entries receives gaussian indices row by row, preserving depth order.
    cdef Py_ssize_t n = bbox.shape[0]
    cdef Py_ssize_t i, r
    cdef long[::1] cursor = offsets.copy()
    for i in range(n):
        if bbox[i, 0] > bbox[i, 1]:
            continue
        for r in range(bbox[i, 0], bbox[i, 1] + 1):
            entries[cursor[r]] = i
            cursor[r] += 1


def _build_rows(long[:, ::1] bbox, int height):
    cdef Py_ssize_t n = bbox.shape[0]
    cdef Py_ssize_t i, r
    counts = np.zeros(height + 1, dtype=np.int64)
    cdef long[::1] counts_v = counts
    for i in range(n):
        if bbox[i, 0] > bbox[i, 1]:
            continue
        for r in range(bbox[i, 0], bbox[i, 1] + 1):
            counts_v[r + 1] += 1
    offsets = np.cumsum(counts).astype(np.int64)
    entries = np.empty(offsets[height], dtype=np.int64)
    cdef long[::1] entries_v = entries
    cdef long[::1] offsets_v = offsets[:height].copy()
    _row_lists(bbox, height, offsets_v, entries_v)
    return offsets, entries


def forward(double[:, ::1] mu, double[:, ::1] abc, double[::1] opacity,
            double[:, ::1] color, long[:, ::1] bbox, double[::1] background,
            int height, int width, double qmax):
    img_arr = np.zeros((height, width, 3), dtype=np.float64)
    trans_arr = np.ones((height, width), dtype=np.float64)
    cdef double[:, :, ::1] img = img_arr
    cdef double[:, ::1] trans = trans_arr

    offsets_arr, entries_arr = _build_rows(bbox, height)
    cdef long[::1] offsets = offsets_arr
    cdef long[::1] entries = entries_arr

    cdef Py_ssize_t r, c, e, n
    cdef double x, y, dx, dy, q, g, a, t, w
    for r in range(height):
        y = <double> r
        for c in range(width):
            x = <double> c
            t = 1.0
            for e in range(offsets[r], offsets[r + 1]):
                n = entries[e]
                if c < bbox[n, 2] or c > bbox[n, 3]:
                    continue
                dx = x - mu[n, 0]
                dy = y - mu[n, 1]
                q = abc[n, 0] * dx * dx + 2.0 * abc[n, 1] * dx * dy + abc[n, 2] * dy * dy
                if q > qmax:
                    continue
                g = exp(-0.5 * q)
                a = opacity[n] * g
                w = a * t
                img[r, c, 0] += w * color[n, 0]
                img[r, c, 1] += w * color[n, 1]
                img[r, c, 2] += w * color[n, 2]
                t *= 1.0 - a
            img[r, c, 0] += t * background[0]
            img[r, c, 1] += t * background[1]
            img[r, c, 2] += t * background[2]
            trans[r, c] = t
    return img_arr, trans_arr


def backward(double[:, ::1] mu, double[:, ::1] abc, double[::1] opacity,
             double[:, ::1] color, long[:, ::1] bbox, double[::1] background,
             int height, int width, double qmax, double[:, :, ::1] d_img):
    cdef Py_ssize_t total = mu.shape[0]
    g_mu_arr = np.zeros((total, 2), dtype=np.float64)
    g_abc_arr = np.zeros((total, 3), dtype=np.float64)
    g_o_arr = np.zeros(total, dtype=np.float64)
    g_color_arr = np.zeros((total, 3), dtype=np.float64)
    cdef double[:, ::1] g_mu = g_mu_arr
    cdef double[:, ::1] g_abc = g_abc_arr
    cdef double[::1] g_o = g_o_arr
    cdef double[:, ::1] g_color = g_color_arr

    offsets_arr, entries_arr = _build_rows(bbox, height)
    cdef long[::1] offsets = offsets_arr
    cdef long[::1] entries = entries_arr

    # per-pixel scratch for the reverse sweep
    idx_arr = np.empty(total, dtype=np.int64)
    alpha_arr = np.empty(total, dtype=np.float64)
    gval_arr = np.empty(total, dtype=np.float64)
    tval_arr = np.empty(total, dtype=np.float64)
    cdef long[::1] idx = idx_arr
    cdef double[::1] alpha_s = alpha_arr
    cdef double[::1] gval_s = gval_arr
    cdef double[::1] tval_s = tval_arr

    cdef Py_ssize_t r, c, e, n, m, j
    cdef double x, y, dx, dy, q, g, a, t, w, tj
    cdef double s0, s1, s2, d0, d1, d2, g_alpha, g_q, gdx, gdy, inv
    for r in range(height):
        y = <double> r
        for c in range(width):
            x = <double> c
            t = 1.0
            m = 0
            for e in range(offsets[r], offsets[r + 1]):
                n = entries[e]
                if c < bbox[n, 2] or c > bbox[n, 3]:
                    continue
                dx = x - mu[n, 0]
                dy = y - mu[n, 1]
                q = abc[n, 0] * dx * dx + 2.0 * abc[n, 1] * dx * dy + abc[n, 2] * dy * dy
                if q > qmax:
                    continue
                g = exp(-0.5 * q)
                a = opacity[n] * g
                idx[m] = n
                alpha_s[m] = a
                gval_s[m] = g
                tval_s[m] = t
                t *= 1.0 - a
                m += 1
            d0 = d_img[r, c, 0]
            d1 = d_img[r, c, 1]
            d2 = d_img[r, c, 2]
            s0 = t * background[0]
            s1 = t * background[1]
            s2 = t * background[2]
            for j in range(m - 1, -1, -1):
                n = idx[j]
                a = alpha_s[j]
                g = gval_s[j]
                tj = tval_s[j]
                w = a * tj
                g_color[n, 0] += d0 * w
                g_color[n, 1] += d1 * w
                g_color[n, 2] += d2 * w
                inv = 1.0 / (1.0 - a)
                g_alpha = (
                    d0 * (tj * color[n, 0] - s0 * inv)
                    + d1 * (tj * color[n, 1] - s1 * inv)
                    + d2 * (tj * color[n, 2] - s2 * inv)
                )
                g_o[n] += g_alpha * g
                g_q = g_alpha * opacity[n] * g * (-0.5)
                dx = x - mu[n, 0]
                dy = y - mu[n, 1]
                gdx = g_q * 2.0 * (abc[n, 0] * dx + abc[n, 1] * dy)
                gdy = g_q * 2.0 * (abc[n, 1] * dx + abc[n, 2] * dy)
                g_mu[n, 0] -= gdx
                g_mu[n, 1] -= gdy
                g_abc[n, 0] += g_q * dx * dx
                g_abc[n, 1] += g_q * 2.0 * dx * dy
                g_abc[n, 2] += g_q * dy * dy
                s0 += w * color[n, 0]
                s1 += w * color[n, 1]
                s2 += w * color[n, 2]
    return g_mu_arr, g_abc_arr, g_o_arr, g_color_arr
