from .model import FitReport, Gaussian2D, SplatError, SplatScene, VictimConfig
from .render import (
    QMAX,
    reconstruction_loss,
    reconstruction_loss_grad,
    render,
    render_backward,
    render_with_ctx,
)
from .fit import densify_and_prune, fit, init_scene
from .backend import BACKEND, get_backend

__all__ = [
    "BACKEND",
    "FitReport",
    "Gaussian2D",
    "QMAX",
    "SplatError",
    "SplatScene",
    "VictimConfig",
    "densify_and_prune",
    "fit",
    "get_backend",
    "init_scene",
    "reconstruction_loss",
    "reconstruction_loss_grad",
    "render",
    "render_backward",
    "render_with_ctx",
]
