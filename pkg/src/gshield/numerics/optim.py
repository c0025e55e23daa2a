"""Adam optimizer over named parameter sets.

The same implementation serves ParamGraph-backed models and the raw
parameter arrays of the splatting victim (whose gradients come from the
analytic render kernels rather than the tape).
"""

import numpy as np

from .tensor import GradientMissingError, ParamGraph, ShapeError, Tensor


class AdamState:
    """Per-parameter first/second moments plus the shared step counter."""

    def __init__(self, learning_rate, beta1=0.9, beta2=0.999, eps=1e-8):
        self.learning_rate = float(learning_rate)
        self.beta1 = float(beta1)
        self.beta2 = float(beta2)
        self.eps = float(eps)
        self.t = 0
        self.m = {}
        self.v = {}

    def ensure(self, name, shape, dtype=np.float32):
        if name not in self.m:
            self.m[name] = np.zeros(shape, dtype=dtype)
            self.v[name] = np.zeros(shape, dtype=dtype)

    def rows_extended(self, name, count):
        """Append zero-moment rows for newly created parameters (axis 0)."""
        if count <= 0:
            return
        pad = [(0, count)] + [(0, 0)] * (self.m[name].ndim - 1)
        self.m[name] = np.pad(self.m[name], pad)
        self.v[name] = np.pad(self.v[name], pad)

    def rows_kept(self, name, mask):
        """Keep only the moment rows selected by the boolean mask (axis 0)."""
        self.m[name] = self.m[name][mask]
        self.v[name] = self.v[name][mask]


def _named_arrays(params):
    if isinstance(params, ParamGraph):
        return {name: t for name, t in params.items()}
    return params


def adam_step(params, grads, state, lr_scale=None):
    """One Adam update with bias correction; mutates params and state.

    ``params`` maps names to Tensors or ndarrays, ``grads`` maps the same
    names to gradient arrays.  ``lr_scale`` optionally multiplies the
    learning rate per parameter name.  Deterministic given its inputs.
    """
    entries = _named_arrays(params)
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    bc1 = 1.0 - b1 ** state.t
    bc2 = 1.0 - b2 ** state.t
    for name, holder in entries.items():
        if name not in grads or grads[name] is None:
            raise GradientMissingError(f"adam_step: no gradient for parameter {name!r}")
        data = holder.data if isinstance(holder, Tensor) else holder
        g = grads[name]
        if g.shape != data.shape:
            raise ShapeError(
                f"adam_step: gradient shape {g.shape} != parameter shape {data.shape} for {name!r}",
                dimension=name,
            )
        state.ensure(name, data.shape, data.dtype)
        m = state.m[name]
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        mhat = m / bc1
        vhat = v / bc2
        lr = state.learning_rate if lr_scale is None else state.learning_rate * lr_scale.get(name, 1.0)
        data -= lr * mhat / (np.sqrt(vhat) + state.eps)
    return params, state
