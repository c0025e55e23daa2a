"""Finite-difference gradient verification.

``grad_check`` perturbs each parameter entry with central differences and
compares against the analytic gradients the checked fragment reports.  The
fragment is expected to work in float64 (the widest precision available);
failures are collected in the report rather than raised.
"""

from dataclasses import dataclass, field

import numpy as np


@dataclass
class ParamCheck:
    name: str
    max_rel_error: float
    max_abs_error: float
    worst_index: tuple


@dataclass
class GradCheckReport:
    tolerance: float
    params: list = field(default_factory=list)

    @property
    def max_rel_error(self):
        return max((p.max_rel_error for p in self.params), default=0.0)

    @property
    def passed(self):
        return self.max_rel_error < self.tolerance

    def failures(self):
        return [p for p in self.params if p.max_rel_error >= self.tolerance]


def grad_check(fn, params, tolerance=1e-3, step=1e-5, abs_floor=1e-8):
    """Check analytic gradients of a pure scalar-valued fragment.

    ``fn(params) -> (value, grads)`` evaluates the fragment on the given
    named float64 arrays and returns the scalar value together with the
    analytic gradient for every entry of ``params``.  The relative error of
    an element is |analytic - fd| / max(|analytic|, |fd|, abs_floor).
    """
    params = {k: np.asarray(v, dtype=np.float64) for k, v in params.items()}
    _, grads = fn(params)
    report = GradCheckReport(tolerance=tolerance)
    for name, base in params.items():
        analytic = np.asarray(grads[name], dtype=np.float64)
        fd = np.zeros_like(base)
        flat = base.reshape(-1)
        fd_flat = fd.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            hi, _ = fn(params)
            flat[i] = orig - step
            lo, _ = fn(params)
            flat[i] = orig
            fd_flat[i] = (hi - lo) / (2.0 * step)
        abs_err = np.abs(analytic - fd)
        denom = np.maximum(np.maximum(np.abs(analytic), np.abs(fd)), abs_floor)
        rel = abs_err / denom
        worst = int(np.argmax(rel))
        report.params.append(
            ParamCheck(
                name=name,
                max_rel_error=float(rel.reshape(-1)[worst]),
                max_abs_error=float(abs_err.reshape(-1)[worst]),
                worst_index=np.unravel_index(worst, base.shape),
            )
        )
    return report


def graph_fragment(build, graph):
    """Adapt a ParamGraph-based fragment for grad_check.

    ``build(graph) -> loss Tensor`` runs the forward pass on the float64
    twin of ``graph``; the returned closure plugs parameter values in,
    reruns the pass and reads the tape gradients back out.
    """
    g64 = graph.astype(np.float64)

    def fn(params):
        for name, value in params.items():
            g64[name].data = np.asarray(value, dtype=np.float64)
        loss = build(g64)
        g64.backward(loss)
        return loss.item(), {name: g64[name].grad for name in params}

    initial = {name: t.data.copy() for name, t in g64.items()}
    return fn, initial
