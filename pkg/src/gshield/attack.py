"""Total-variation poisoning inside an L-infinity ball.

The attack runs sign-gradient ascent on the isotropic TV score of the
image (optionally minus a proximity term that keeps adaptive variants
close to the clean source), projecting onto the epsilon-ball around the
clean image and clamping to [0, 1] after every step.
"""

import time
from dataclasses import dataclass, field

import numpy as np


class AttackError(Exception):
    pass


@dataclass
class AttackConfig:
    """Poisoning parameters.

    ``epsilon`` is the L-infinity radius in [0, 1] units (e.g. 26/255).
    ``adaptive_beta`` weights the mutual-information proximity surrogate:
    0 recovers the plain TV attack.  ``proxy_logging`` refits the splat
    victim every ``proxy_interval`` steps and records rendered-image TV
    and Gaussian counts; no gradient flows through the victim.
    """

    epsilon: float = 26.0 / 255.0
    step_size: float = None
    iterations: int = 100
    adaptive_beta: float = 0.0
    sigma_sq: float = 1.0
    proxy_logging: bool = False
    proxy_interval: int = 25
    seed: int = 0

    def __post_init__(self):
        if self.step_size is None:
            self.step_size = self.epsilon / 10.0
        if not 0.0 <= self.epsilon <= 1.0:
            raise AttackError(f"epsilon {self.epsilon} outside [0, 1]")
        if self.iterations < 0:
            raise AttackError("iterations must be >= 0")
        if self.adaptive_beta < 0:
            raise AttackError("adaptive_beta must be >= 0")
        if self.sigma_sq <= 0:
            raise AttackError("sigma_sq must be positive")


@dataclass
class PoisonResult:
    poisoned: list
    tv_before: float
    tv_after: float
    max_linf_deviation: float
    objective_trace: list
    tv_trace: list
    proxy_counts: list = field(default_factory=list)
    proxy_tv: list = field(default_factory=list)
    wall_seconds: float = 0.0


def tv_score(images):
    """Sum of isotropic forward-difference norms over images, pixels, channels.

    Forward differences are dropped (treated as zero) at the last row and
    column; the per-pixel norm is taken per channel and channels are
    summed afterwards.
    """
    if isinstance(images, np.ndarray):
        images = [images]
    if not images:
        raise AttackError("tv_score: image set is empty")
    total = 0.0
    for img in images:
        v = np.asarray(img, dtype=np.float64)
        dv = np.zeros_like(v)
        dh = np.zeros_like(v)
        dv[:-1] = v[1:] - v[:-1]
        dh[:, :-1] = v[:, 1:] - v[:, :-1]
        total += float(np.sqrt(dv * dv + dh * dh).sum())
    return total


def tv_gradient(image):
    """Exact gradient of tv_score where differentiable, 0 at zero-norm ties."""
    v = np.asarray(image, dtype=np.float64)
    dv = np.zeros_like(v)
    dh = np.zeros_like(v)
    dv[:-1] = v[1:] - v[:-1]
    dh[:, :-1] = v[:, 1:] - v[:, :-1]
    m = np.sqrt(dv * dv + dh * dh)
    with np.errstate(divide="ignore", invalid="ignore"):
        r = np.where(m > 0.0, 1.0 / m, 0.0)
    gx = dv * r
    gy = dh * r
    grad = -gx - gy
    grad[1:] += gx[:-1]
    grad[:, 1:] += gy[:, :-1]
    return grad


def _objective(img, clean, cfg):
    val = tv_score(img)
    if cfg.adaptive_beta > 0.0:
        dev = img - clean
        val -= cfg.adaptive_beta / (2.0 * cfg.sigma_sq) * float((dev * dev).sum())
    return val


def poison(clean_images, config):
    """T steps of projected sign-gradient ascent on the poisoning objective.

    The objective is S_TV(V) - (beta / (2 sigma^2)) ||V - V_cln||^2; with
    beta = 0 this is the plain TV attack.  The ascent starts from a
    seeded uniform point inside the ball (sign steps from the clean image
    itself stall in low-frequency patterns); the start noise scales with
    epsilon, so epsilon = 0 still returns the clean images bit-exactly,
    as does iterations = 0.  After every step the image is projected onto
    the epsilon-ball around its clean source and clamped to [0, 1], so
    the constraint holds at every iterate, not only at the end.  RNG is
    split per image from the run seed.
    """
    single = isinstance(clean_images, np.ndarray)
    if single:
        clean_images = [clean_images]
    if not clean_images:
        raise AttackError("poison: image set is empty")
    t0 = time.perf_counter()
    eps = config.epsilon
    poisoned = []
    obj_trace = np.zeros(config.iterations + 1, dtype=np.float64)
    tv_trace = np.zeros(config.iterations + 1, dtype=np.float64)
    tv_before = 0.0
    tv_after = 0.0
    max_dev = 0.0
    proxy_counts, proxy_tv = [], []

    for img_index, clean in enumerate(clean_images):
        clean = np.asarray(clean, dtype=np.float64)
        if clean.min() < 0.0 or clean.max() > 1.0:
            raise AttackError(f"poison: clean image {img_index} outside [0, 1]")
        lo = np.maximum(clean - eps, 0.0)
        hi = np.minimum(clean + eps, 1.0)
        if config.iterations > 0:
            rng = np.random.default_rng([config.seed, img_index])
            cur = np.clip(clean + rng.uniform(-eps, eps, clean.shape), lo, hi)
        else:
            cur = clean.copy()
        obj_trace[0] += _objective(cur, clean, config)
        tv_trace[0] += tv_score(cur)
        for it in range(1, config.iterations + 1):
            g = tv_gradient(cur)
            if config.adaptive_beta > 0.0:
                g -= config.adaptive_beta / config.sigma_sq * (cur - clean)
            cur = cur + config.step_size * np.sign(g)
            cur = np.clip(cur, clean - eps, clean + eps)
            cur = np.clip(cur, 0.0, 1.0)
            obj_trace[it] += _objective(cur, clean, config)
            tv_trace[it] += tv_score(cur)
            if config.proxy_logging and (it % config.proxy_interval == 0 or it == config.iterations):
                count, rtv = _proxy_refit(cur, config, img_index, it)
                proxy_counts.append((img_index, it, count))
                proxy_tv.append((img_index, it, rtv))
        assert np.all(cur >= lo - 1e-12) and np.all(cur <= hi + 1e-12)
        tv_before += tv_score(clean)
        tv_after += tv_score(cur)
        max_dev = max(max_dev, float(np.abs(cur - clean).max()))
        poisoned.append(cur)

    return PoisonResult(
        poisoned=poisoned[0] if single else poisoned,
        tv_before=tv_before,
        tv_after=tv_after,
        max_linf_deviation=max_dev,
        objective_trace=obj_trace.tolist(),
        tv_trace=tv_trace.tolist(),
        proxy_counts=proxy_counts,
        proxy_tv=proxy_tv,
        wall_seconds=time.perf_counter() - t0,
    )


def poison_adaptive(clean_images, config):
    """Adaptive variant: requires adaptive_beta > 0.

    By the Gaussian variational surrogate the mutual-information term
    becomes a scaled negative squared distance to the clean image, so
    larger beta yields poisons closer to the clean source at equal T.
    """
    if config.adaptive_beta <= 0.0:
        raise AttackError("poison_adaptive requires adaptive_beta > 0")
    return poison(clean_images, config)


def _proxy_refit(image, config, img_index, it):
    """Fit the splat victim on the current iterate and report (count, TV)."""
    from .splat2d.fit import fit
    from .splat2d.model import VictimConfig
    from .splat2d.render import render

    victim = VictimConfig(iterations=200, seed=config.seed + 7919 * img_index + it)
    scene, _ = fit(image, victim)
    return scene.count, tv_score(render(scene))


def parse_epsilon(text):
    """Accept '26/255' fractions as well as plain floats."""
    text = str(text).strip()
    if "/" in text:
        num, den = text.split("/", 1)
        return float(num) / float(den)
    return float(text)
