"""Victim training loop with adaptive density control.

Gradient descent on (1 - lambda) L1 + lambda D-SSIM, with periodic
densification sweeps: primitives whose mean positional-gradient magnitude
since the last sweep exceeds the threshold are cloned (small ones) or
split into two shrunken children sampled inside the parent footprint
(large ones); primitives whose opacity has collapsed are pruned.
"""

import time

import numpy as np

from ..numerics import AdamState, adam_step
from .model import FitReport, LOG_SCALE_MIN, OPACITY_LOGIT_LIMIT, SplatError, SplatScene
from .render import reconstruction_loss_grad, render_backward, render_with_ctx

# relative Adam rates per attribute; position moves fastest, shape slower
LR_SCALE = {
    "mu": 1.0,
    "scale": 0.25,
    "rotation": 0.25,
    "opacity_logit": 0.5,
    "color": 0.5,
}
SPLIT_SCALE_SHRINK = 1.6


class DensifyStats:
    """Accumulated |grad mu| statistics between densification sweeps."""

    def __init__(self, count):
        self.accum = np.zeros(count, dtype=np.float64)
        self.denom = np.zeros(count, dtype=np.float64)

    def update(self, grad_mu, norm_scale):
        self.accum += np.linalg.norm(grad_mu, axis=1) * norm_scale
        self.denom += 1.0

    def mean(self):
        return self.accum / np.maximum(self.denom, 1.0)


def init_scene(target, config, rng):
    """Jittered-grid initialization with colors sampled from the target."""
    h, w = target.shape[0], target.shape[1]
    n = config.n_init
    g = int(np.ceil(np.sqrt(n)))
    cell_w, cell_h = w / g, h / g
    idx = np.arange(n)
    gx = (idx % g + 0.5) * cell_w
    gy = (idx // g + 0.5) * cell_h
    mu = np.stack([gx, gy], axis=1)
    mu += rng.uniform(-0.4, 0.4, size=(n, 2)) * np.array([cell_w, cell_h])
    px = np.clip(np.round(mu[:, 0]).astype(int), 0, w - 1)
    py = np.clip(np.round(mu[:, 1]).astype(int), 0, h - 1)
    color = np.asarray(target, dtype=np.float64)[py, px]
    sigma0 = 0.5 * max(cell_w, cell_h)
    return SplatScene(
        mu=mu,
        scale=np.full((n, 2), np.log(sigma0)),
        rotation=np.zeros(n),
        opacity_logit=np.full(n, np.log(0.1 / 0.9)),
        color=color,
        depth_key=rng.random(n),
        width=w,
        height=h,
        background=np.full(3, 0.5),
    )


def densify_and_prune(scene, mean_grads, config, rng):
    """One density-control sweep; returns (new scene, kept mask, n added).

    Primitives above the threshold are cloned when their largest standard
    deviation is below ``split_scale_threshold`` pixels and otherwise
    split into two children with scales reduced by 1.6 and positions
    sampled from the parent footprint.  Primitives with opacity below
    ``prune_opacity`` are removed.  When ``max_gaussians`` is set the
    highest-gradient candidates win the remaining slots.
    """
    n = scene.count
    mean_grads = np.asarray(mean_grads, dtype=np.float64).reshape(n)
    over = mean_grads > config.densify_threshold
    max_std = np.exp(scene.scale).max(axis=1)
    clone_mask = over & (max_std < config.split_scale_threshold)
    split_mask = over & ~clone_mask

    # splits replace the parent with two children: net growth is one row
    # per candidate for both rules
    candidates = np.flatnonzero(clone_mask | split_mask)
    if config.max_gaussians > 0:
        budget = max(config.max_gaussians - n, 0)
        if candidates.size > budget:
            by_grad = candidates[np.argsort(-mean_grads[candidates], kind="stable")]
            keep_set = set(by_grad[:budget].tolist())
            clone_mask &= np.isin(np.arange(n), list(keep_set))
            split_mask &= np.isin(np.arange(n), list(keep_set))

    keep = ~split_mask  # split parents are replaced by their children
    opac = scene.opacities()
    keep &= opac >= config.prune_opacity
    if not keep.any() and not split_mask.any() and not clone_mask.any():
        keep[np.argmax(opac)] = True  # a scene never goes empty

    parts = {name: [getattr(scene, name)[keep]] for name in SplatScene.FIELDS}

    clone_rows = np.flatnonzero(clone_mask & (opac >= config.prune_opacity))
    if clone_rows.size:
        for name in SplatScene.FIELDS:
            parts[name].append(getattr(scene, name)[clone_rows].copy())
        parts["depth_key"][-1] = rng.random(clone_rows.size)

    split_rows = np.flatnonzero(split_mask)
    if split_rows.size:
        reps = np.repeat(split_rows, 2)
        std = np.exp(scene.scale[reps])
        z = rng.standard_normal((reps.size, 2)) * std
        ct = np.cos(scene.rotation[reps])
        st = np.sin(scene.rotation[reps])
        offset = np.stack([ct * z[:, 0] - st * z[:, 1], st * z[:, 0] + ct * z[:, 1]], axis=1)
        parts["mu"].append(scene.mu[reps] + offset)
        parts["scale"].append(scene.scale[reps] - np.log(SPLIT_SCALE_SHRINK))
        parts["rotation"].append(scene.rotation[reps].copy())
        parts["opacity_logit"].append(scene.opacity_logit[reps].copy())
        parts["color"].append(scene.color[reps].copy())
        parts["depth_key"].append(rng.random(reps.size))

    arrays = {name: np.concatenate(parts[name], axis=0) for name in SplatScene.FIELDS}
    new_scene = SplatScene(
        **arrays,
        width=scene.width,
        height=scene.height,
        background=scene.background.copy(),
    )
    if config.max_gaussians > 0 and new_scene.count > config.max_gaussians:
        raise SplatError("densify_and_prune exceeded max_gaussians; budget accounting is broken")
    return new_scene, keep, new_scene.count - int(keep.sum())


def _param_views(scene):
    return {name: getattr(scene, name) for name in ("mu", "scale", "rotation", "opacity_logit", "color")}


def _clamp(scene):
    np.clip(scene.opacity_logit, -OPACITY_LOGIT_LIMIT, OPACITY_LOGIT_LIMIT, out=scene.opacity_logit)
    hi = np.log(max(scene.width, scene.height))
    np.clip(scene.scale, LOG_SCALE_MIN, hi, out=scene.scale)
    np.clip(scene.color, 0.0, 1.0, out=scene.color)
    np.clip(scene.mu[:, 0], -0.5 * scene.width, 1.5 * scene.width, out=scene.mu[:, 0])
    np.clip(scene.mu[:, 1], -0.5 * scene.height, 1.5 * scene.height, out=scene.mu[:, 1])


def fit(target, config, rng=None):
    """Fit a splat scene to the target image; returns (scene, FitReport)."""
    config.validate()
    target = np.asarray(target, dtype=np.float64)
    if target.min() < -1e-9 or target.max() > 1.0 + 1e-9:
        raise SplatError("fit: target values outside [0, 1]")
    if rng is None:
        rng = np.random.default_rng(config.seed)
    t0 = time.perf_counter()

    scene = init_scene(target, config, rng)
    state = AdamState(config.learning_rate)
    stats = DensifyStats(scene.count)
    norm_scale = float(max(scene.width, scene.height))
    report = FitReport()

    for it in range(1, config.iterations + 1):
        img, _, ctx = render_with_ctx(scene)
        loss, d_img = reconstruction_loss_grad(img, target, config.lambda_dssim)
        if not np.isfinite(loss):
            raise SplatError(f"fit diverged: non-finite loss at iteration {it}")
        grads = render_backward(ctx, d_img)
        stats.update(grads["mu"], norm_scale)
        adam_step(_param_views(scene), grads, state, lr_scale=LR_SCALE)
        _clamp(scene)

        report.loss_trajectory.append(float(loss))
        report.count_trajectory.append(scene.count)

        if it % config.densify_interval == 0 and it < config.iterations:
            scene, keep, added = densify_and_prune(scene, stats.mean(), config, rng)
            for name in ("mu", "scale", "rotation", "opacity_logit", "color"):
                state.rows_kept(name, keep)
                state.rows_extended(name, added)
            stats = DensifyStats(scene.count)

    report.final_count = scene.count
    report.iterations_run = config.iterations
    report.wall_seconds = time.perf_counter() - t0
    return scene, report
