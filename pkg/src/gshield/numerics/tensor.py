"""Dense float tensors with reverse-mode automatic differentiation.

A Tensor wraps a numpy array (float32 by default, float64 for the
finite-difference oracle) plus a backward closure recorded by the op that
produced it.  Calling ``backward()`` on a scalar result walks the recorded
tape in reverse topological order and accumulates ``.grad`` arrays on every
reachable leaf with ``requires_grad=True``.

Values are treated as immutable once produced: ops allocate fresh output
arrays and never write into their inputs.
"""

import numpy as np


class NumericsError(Exception):
    """Base class for errors raised by the numerics module."""


class ShapeError(NumericsError):
    """Shapes of op arguments are incompatible.

    ``dimension`` names the offending dimension (e.g. "in_channels").
    """

    def __init__(self, message, dimension=None):
        super().__init__(message)
        self.dimension = dimension


class GradientMissingError(NumericsError):
    """An optimizer step was requested for a parameter without a gradient."""


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_backward", "_parents")

    def __init__(self, data, requires_grad=False, dtype=np.float32):
        arr = np.asarray(data, dtype=dtype)
        self.data = arr
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._backward = None
        self._parents = ()

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def item(self):
        return float(self.data.reshape(-1)[0])

    def detach(self):
        """A new leaf sharing this tensor's values, cut from the tape."""
        out = Tensor.__new__(Tensor)
        out.data = self.data
        out.grad = None
        out.requires_grad = False
        out._backward = None
        out._parents = ()
        return out

    def _accumulate(self, grad):
        if self.grad is None:
            self.grad = np.array(grad, dtype=self.data.dtype, copy=True)
        else:
            self.grad = self.grad + grad

    def backward(self):
        """Reverse-mode sweep seeding d(self)/d(self) = 1.

        Only defined for scalar (single-element) tensors.
        """
        if self.data.size != 1:
            raise ShapeError(
                f"backward() requires a scalar tensor, got shape {self.data.shape}",
                dimension="size",
            )
        topo = []
        visited = set()
        stack = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                topo.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                if id(parent) not in visited:
                    stack.append((parent, False))
        self.grad = np.ones_like(self.data)
        for node in reversed(topo):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}, requires_grad={self.requires_grad})"


def make_result(data, parents, backward):
    """Wrap an op output, recording the tape edge if any parent needs grad."""
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    needs = any(p.requires_grad for p in parents)
    out.requires_grad = needs
    out._backward = backward if needs else None
    out._parents = tuple(p for p in parents if p.requires_grad) if needs else ()
    return out


class ParamGraph:
    """A named set of trainable parameter tensors.

    The operation tape lives on the result tensors produced while the
    parameters are used; ``backward(loss)`` zeroes every parameter gradient
    first, so parameters that did not participate in the loss end up with
    all-zero gradients of the right shape.
    """

    def __init__(self):
        self._params = {}

    def add(self, name, data, dtype=np.float32):
        if name in self._params:
            raise NumericsError(f"duplicate parameter name {name!r}")
        t = Tensor(data, requires_grad=True, dtype=dtype)
        self._params[name] = t
        return t

    def __getitem__(self, name):
        return self._params[name]

    def __contains__(self, name):
        return name in self._params

    def __iter__(self):
        return iter(self._params)

    def names(self):
        return list(self._params)

    def items(self):
        return self._params.items()

    def tensors(self):
        return dict(self._params)

    def zero_grad(self):
        for t in self._params.values():
            t.grad = np.zeros_like(t.data)

    def backward(self, loss):
        """Zero all parameter grads, then run the reverse sweep from loss."""
        self.zero_grad()
        loss.backward()

    def grads(self):
        """Named gradient arrays; raises if any parameter has none."""
        out = {}
        for name, t in self._params.items():
            if t.grad is None:
                raise GradientMissingError(f"parameter {name!r} has no gradient")
            out[name] = t.grad
        return out

    def copy_values(self):
        return {name: t.data.copy() for name, t in self._params.items()}

    def load_values(self, values):
        for name, t in self._params.items():
            if name not in values:
                raise NumericsError(f"missing value for parameter {name!r}")
            arr = np.asarray(values[name], dtype=t.data.dtype)
            if arr.shape != t.data.shape:
                raise ShapeError(
                    f"parameter {name!r}: stored shape {arr.shape} != model shape {t.data.shape}",
                    dimension=name,
                )
            t.data = arr.copy()

    def astype(self, dtype):
        """New ParamGraph with the same values in the given dtype."""
        g = ParamGraph()
        for name, t in self._params.items():
            g.add(name, t.data, dtype=dtype)
        return g
