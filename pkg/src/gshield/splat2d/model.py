"""Scene representation for the 2D splatting victim."""

from dataclasses import dataclass, field

import numpy as np

OPACITY_LOGIT_LIMIT = 15.0
LOG_SCALE_MIN = np.log(0.3)


class SplatError(Exception):
    """Errors raised by the splatting victim."""


@dataclass
class Gaussian2D:
    """One anisotropic 2D primitive.

    ``scale`` holds log standard deviations in pixels; the covariance is
    R(rotation) diag(exp(scale))^2 R(rotation)^T.  ``depth_key`` fixes the
    compositing order and is frozen after initialization.
    """

    mu: np.ndarray
    scale: np.ndarray
    rotation: float
    opacity_logit: float
    color: np.ndarray
    depth_key: float

    @property
    def opacity(self):
        return float(1.0 / (1.0 + np.exp(-self.opacity_logit)))

    def covariance(self):
        ct, st = np.cos(self.rotation), np.sin(self.rotation)
        r = np.array([[ct, -st], [st, ct]])
        s2 = np.exp(2.0 * np.asarray(self.scale, dtype=np.float64))
        return r @ np.diag(s2) @ r.T


class SplatScene:
    """A set of Gaussian2D primitives over a fixed canvas.

    Parameters are stored as flat arrays (one row per Gaussian) so the
    fitter and the render kernels can work on them directly; the
    ``gaussians`` property materializes per-primitive views.
    """

    FIELDS = ("mu", "scale", "rotation", "opacity_logit", "color", "depth_key")

    def __init__(self, mu, scale, rotation, opacity_logit, color, depth_key, width, height, background):
        self.mu = np.asarray(mu, dtype=np.float64).reshape(-1, 2)
        n = self.mu.shape[0]
        if n < 1:
            raise SplatError("scene must contain at least one Gaussian")
        self.scale = np.asarray(scale, dtype=np.float64).reshape(n, 2)
        self.rotation = np.asarray(rotation, dtype=np.float64).reshape(n)
        self.opacity_logit = np.clip(
            np.asarray(opacity_logit, dtype=np.float64).reshape(n),
            -OPACITY_LOGIT_LIMIT,
            OPACITY_LOGIT_LIMIT,
        )
        self.color = np.asarray(color, dtype=np.float64).reshape(n, 3)
        self.depth_key = np.asarray(depth_key, dtype=np.float64).reshape(n)
        self.width = int(width)
        self.height = int(height)
        if self.width < 1 or self.height < 1:
            raise SplatError(f"canvas {self.width}x{self.height} is empty")
        self.background = np.asarray(background, dtype=np.float64).reshape(3)

    @classmethod
    def from_gaussians(cls, gaussians, width, height, background=(0.0, 0.0, 0.0)):
        return cls(
            mu=np.stack([g.mu for g in gaussians]),
            scale=np.stack([g.scale for g in gaussians]),
            rotation=np.array([g.rotation for g in gaussians]),
            opacity_logit=np.array([g.opacity_logit for g in gaussians]),
            color=np.stack([g.color for g in gaussians]),
            depth_key=np.array([g.depth_key for g in gaussians]),
            width=width,
            height=height,
            background=background,
        )

    @property
    def count(self):
        return self.mu.shape[0]

    @property
    def gaussians(self):
        return [
            Gaussian2D(
                mu=self.mu[i].copy(),
                scale=self.scale[i].copy(),
                rotation=float(self.rotation[i]),
                opacity_logit=float(self.opacity_logit[i]),
                color=self.color[i].copy(),
                depth_key=float(self.depth_key[i]),
            )
            for i in range(self.count)
        ]

    def opacities(self):
        return 1.0 / (1.0 + np.exp(-self.opacity_logit))

    def copy(self):
        return SplatScene(
            self.mu.copy(),
            self.scale.copy(),
            self.rotation.copy(),
            self.opacity_logit.copy(),
            self.color.copy(),
            self.depth_key.copy(),
            self.width,
            self.height,
            self.background.copy(),
        )

    def to_tensors(self):
        """Named-array dump for the binary weights format."""
        out = {f"scene/{name}": np.asarray(getattr(self, name), dtype=np.float32) for name in self.FIELDS}
        out["scene/canvas"] = np.array([self.width, self.height], dtype=np.float32)
        out["scene/background"] = self.background.astype(np.float32)
        return out

    @classmethod
    def from_tensors(cls, tensors):
        w, h = tensors["scene/canvas"]
        return cls(
            *(tensors[f"scene/{name}"] for name in cls.FIELDS),
            width=int(w),
            height=int(h),
            background=tensors["scene/background"],
        )


@dataclass
class VictimConfig:
    """Hyperparameters of the splat fitter.

    ``densify_threshold`` is in normalized gradient units: the positional
    gradient is measured per unit of normalized image coordinate, i.e.
    scaled by max(width, height).  ``max_gaussians`` = 0 means unlimited;
    a positive value is the limiting-Gaussian-number baseline.
    """

    lambda_dssim: float = 0.2
    densify_threshold: float = 2e-4
    densify_interval: int = 100
    split_scale_threshold: float = 3.0
    prune_opacity: float = 0.005
    max_gaussians: int = 0
    iterations: int = 500
    learning_rate: float = 0.05
    n_init: int = 64
    seed: int = 0

    def validate(self):
        if not 0.0 <= self.lambda_dssim <= 1.0:
            raise SplatError(f"lambda_dssim {self.lambda_dssim} outside [0, 1]")
        for name in ("densify_threshold", "split_scale_threshold", "prune_opacity", "learning_rate"):
            if getattr(self, name) <= 0:
                raise SplatError(f"{name} must be positive")
        for name in ("densify_interval", "iterations", "n_init"):
            if getattr(self, name) < 1:
                raise SplatError(f"{name} must be at least 1")
        if self.max_gaussians < 0:
            raise SplatError("max_gaussians must be >= 0 (0 = unlimited)")


@dataclass
class FitReport:
    loss_trajectory: list = field(default_factory=list)
    count_trajectory: list = field(default_factory=list)
    final_count: int = 0
    wall_seconds: float = 0.0
    iterations_run: int = 0
