"""Image-quality and cost metrics shared across the pipeline.

PSNR and SSIM follow the standard reference definitions (11x11 Gaussian
window, sigma 1.5, K1 = 0.01, K2 = 0.03, dynamic range 1.0, valid
windows).  SSIM is built on the autodiff ops so the victim's D-SSIM loss
term can differentiate through it.  The TV score is re-exported from the
attack module: it is the same quantity on both sides of the game.
"""

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .attack import tv_score
from .numerics import Tensor, add, div, mean, mul, sub
from .numerics.tensor import make_result

__all__ = [
    "MetricRow",
    "MetricsReport",
    "aggregate",
    "d_ssim",
    "gaussian_smooth",
    "psnr",
    "ssim",
    "ssim_graph",
    "tv_score",
]

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03


def psnr(a, b):
    """10 log10(1 / MSE) in dB for images in [0, 1]; inf for identical inputs."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"psnr: image shapes {a.shape} and {b.shape} differ")
    err = float(np.mean((a - b) ** 2))
    if err == 0.0:
        return math.inf
    return 10.0 * math.log10(1.0 / err)


def _window_1d():
    half = (SSIM_WINDOW - 1) / 2.0
    k = np.arange(SSIM_WINDOW) - half
    w1 = np.exp(-(k * k) / (2.0 * SSIM_SIGMA**2))
    return w1 / w1.sum()


def _corr_valid(x, k, axis):
    win = np.lib.stride_tricks.sliding_window_view(x, k.size, axis=axis)
    return win @ k


def _corr_full(x, k, axis):
    pad = [(0, 0)] * x.ndim
    pad[axis] = (k.size - 1, k.size - 1)
    win = np.lib.stride_tricks.sliding_window_view(np.pad(x, pad), k.size, axis=axis)
    return win @ k[::-1]


def _window_filter(x):
    """Valid-mode correlation of (..., H, W) with the separable SSIM window.

    The window is symmetric, so the backward pass is the zero-padded full
    correlation with the same kernel (the exact adjoint).
    """
    k = _window_1d()

    out = _corr_valid(_corr_valid(x.data, k, x.data.ndim - 2), k, x.data.ndim - 1)

    def backward(g):
        if x.requires_grad:
            x._accumulate(_corr_full(_corr_full(g, k, g.ndim - 2), k, g.ndim - 1))

    return make_result(out, (x,), backward)


def ssim_graph(x, y):
    """Differentiable SSIM over tensors shaped (C, 1, H, W).

    Channels ride along the batch axis, and the Gaussian window is applied
    as two separable 1-d correlations per filtered quantity.
    """
    c1 = SSIM_K1**2
    c2 = SSIM_K2**2

    mu1 = _window_filter(x)
    mu2 = _window_filter(y)
    mu1_sq = mul(mu1, mu1)
    mu2_sq = mul(mu2, mu2)
    mu1_mu2 = mul(mu1, mu2)
    sig1 = sub(_window_filter(mul(x, x)), mu1_sq)
    sig2 = sub(_window_filter(mul(y, y)), mu2_sq)
    sig12 = sub(_window_filter(mul(x, y)), mu1_mu2)

    num = mul(add(mul(mu1_mu2, 2.0), c1), add(mul(sig12, 2.0), c2))
    den = mul(add(add(mu1_sq, mu2_sq), c1), add(add(sig1, sig2), c2))
    return mean(div(num, den))


def _to_chw(img):
    img = np.asarray(img, dtype=np.float64)
    if img.ndim == 2:
        img = img[:, :, None]
    return np.ascontiguousarray(img.transpose(2, 0, 1)[:, None])


def ssim(a, b):
    """Mean SSIM over channels and window positions, in [-1, 1]."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"ssim: image shapes {a.shape} and {b.shape} differ")
    if min(a.shape[0], a.shape[1]) < SSIM_WINDOW:
        raise ValueError(
            f"ssim: image {a.shape[0]}x{a.shape[1]} smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} window"
        )
    return ssim_graph(Tensor(_to_chw(a), dtype=np.float64), Tensor(_to_chw(b), dtype=np.float64)).item()


def d_ssim(a, b):
    """Structural dissimilarity (1 - SSIM) / 2, in [0, 1]."""
    return (1.0 - ssim(a, b)) / 2.0


def gaussian_smooth(image, sigma):
    """Separable Gaussian blur, kernel radius ceil(3 sigma), reflect boundary."""
    if sigma <= 0:
        raise ValueError("gaussian_smooth: sigma must be positive")
    img = np.asarray(image, dtype=np.float64)
    r = int(math.ceil(3.0 * sigma))
    k = np.exp(-(np.arange(-r, r + 1) ** 2) / (2.0 * sigma**2))
    k /= k.sum()

    def blur_axis(arr, axis):
        pad = [(0, 0)] * arr.ndim
        pad[axis] = (r, r)
        padded = np.pad(arr, pad, mode="symmetric")
        win = np.lib.stride_tricks.sliding_window_view(padded, 2 * r + 1, axis=axis)
        return win @ k

    out = blur_axis(img, 0)
    out = blur_axis(out, 1)
    return out


@dataclass
class MetricRow:
    """One (scene, scenario) measurement with the Table-style column set."""

    scene_id: str
    scenario: str
    psnr: float = math.nan
    ssim: float = math.nan
    tv: float = math.nan
    proxy: float = math.nan
    gaussian_count: float = math.nan
    wall_seconds: float = math.nan

    def as_dict(self):
        return asdict(self)


_METRICS = ("psnr", "ssim", "tv", "proxy", "gaussian_count", "wall_seconds")


@dataclass
class MetricsReport:
    rows: list
    means: dict = field(default_factory=dict)
    medians: dict = field(default_factory=dict)
    ratios_vs_clean: dict = field(default_factory=dict)

    def scenario_rows(self, scenario):
        return [r for r in self.rows if r.scenario == scenario]


def _column(rows, metric):
    vals = np.array([getattr(r, metric) for r in rows], dtype=np.float64)
    return vals[~np.isnan(vals)]


def aggregate(rows):
    """Means, medians and per-scene median ratios against the clean scenario."""
    rows = list(rows)
    if not rows:
        raise ValueError("aggregate: no rows")
    scenarios = sorted({r.scenario for r in rows})
    means, medians = {}, {}
    for sc in scenarios:
        sub_rows = [r for r in rows if r.scenario == sc]
        means[sc] = {}
        medians[sc] = {}
        for metric in _METRICS:
            vals = _column(sub_rows, metric)
            if vals.size:
                means[sc][metric] = float(np.mean(vals))
                medians[sc][metric] = float(np.median(vals))

    ratios = {}
    clean = {(r.scene_id): r for r in rows if r.scenario == "clean"}
    if clean:
        for sc in scenarios:
            if sc == "clean":
                continue
            ratios[sc] = {}
            for metric in _METRICS:
                pairs = []
                for r in rows:
                    if r.scenario != sc or r.scene_id not in clean:
                        continue
                    base = getattr(clean[r.scene_id], metric)
                    val = getattr(r, metric)
                    if not (math.isnan(base) or math.isnan(val)) and base != 0.0:
                        pairs.append(val / base)
                if pairs:
                    ratios[sc][metric] = float(np.median(pairs))
    return MetricsReport(rows=rows, means=means, medians=medians, ratios_vs_clean=ratios)
