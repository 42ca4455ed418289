"""Reverse-mode automatic differentiation over numpy arrays.

A Tensor wraps an ndarray plus an optional gradient. Operations build a
tape; backward() walks it in reverse topological order and accumulates
gradients into every reachable tensor with requires_grad set. The op set
is exactly what the model stack needs: elementwise arithmetic with
broadcasting, batched matmul, reshapes and transposes, reductions, and
fused primitives (softmax, log_softmax, layer_norm, gelu, cross_entropy,
embedding gather) with hand-written backward passes.

All tensors in one graph should share a float dtype. float32 is the
working precision; float64 is supported so gradient checks can run well
below float32 noise.
"""

from __future__ import annotations

import contextlib
import math

import numpy as np

from .util import NumericsError

_GRAD_ENABLED = True
_DEBUG_CHECKS = False


def set_debug_checks(on: bool) -> None:
    """When on, every primitive asserts its output is finite."""
    global _DEBUG_CHECKS
    _DEBUG_CHECKS = bool(on)


@contextlib.contextmanager
def no_grad():
    """Disable tape construction inside the block."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


def grad_enabled() -> bool:
    return _GRAD_ENABLED


def _check(data, what):
    if _DEBUG_CHECKS and not np.all(np.isfinite(data)):
        raise NumericsError(f"non-finite output of {what}")
    return data


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum grad down to shape, undoing numpy broadcasting."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_bwd", "__weakref__")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        if isinstance(data, Tensor):
            data = data.data
        if dtype is None and not isinstance(data, (np.ndarray, np.generic)):
            dtype = np.float32
        arr = np.asarray(data, dtype=dtype)
        if not np.issubdtype(arr.dtype, np.floating):
            arr = arr.astype(np.float32)
        self.data = arr
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents = ()
        self._bwd = None

    # -- bookkeeping -------------------------------------------------------

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def ndim(self):
        return self.data.ndim

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def _accumulate(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}, requires_grad={self.requires_grad})"

    def backward(self) -> None:
        """Populate grads of every reachable requires_grad tensor.

        Only defined for scalar outputs; seeds with grad 1.
        """
        if self.data.size != 1:
            raise ValueError("backward() requires a scalar output")
        topo: list[Tensor] = []
        seen = set()
        stack = [(self, iter(self._parents))]
        seen.add(id(self))
        while stack:
            node, it = stack[-1]
            advanced = False
            for p in it:
                if id(p) not in seen and p.requires_grad:
                    seen.add(id(p))
                    stack.append((p, iter(p._parents)))
                    advanced = True
                    break
            if not advanced:
                stack.pop()
                topo.append(node)
        self.grad = np.ones_like(self.data)
        for node in reversed(topo):
            if node._bwd is not None:
                node._bwd()
                # sever the graph behind us: closures capture their output
                # tensor, a cycle the refcounter alone can never free, and
                # big cyclic garbage outlives several gc generations
                node._bwd = None
                node._parents = ()
                node.grad = None

    # -- graph construction ------------------------------------------------

    @staticmethod
    def _make(data, parents, bwd, what):
        out = Tensor(_check(data, what))
        if _GRAD_ENABLED:
            live = tuple(p for p in parents if p.requires_grad)
            if live:
                out.requires_grad = True
                out._parents = live
                out._bwd = bwd
        return out

    # -- arithmetic --------------------------------------------------------

    def _coerce(self, other):
        if isinstance(other, Tensor):
            return other
        return Tensor(np.asarray(other, dtype=self.data.dtype))

    def __add__(self, other):
        other = self._coerce(other)
        out = Tensor._make(self.data + other.data, (self, other), None, "add")

        def bwd():
            if self.requires_grad:
                self._accumulate(_unbroadcast(out.grad, self.data.shape))
            if other.requires_grad:
                other._accumulate(_unbroadcast(out.grad, other.data.shape))

        out._bwd = bwd if out.requires_grad else None
        return out

    __radd__ = __add__

    def __mul__(self, other):
        other = self._coerce(other)
        out = Tensor._make(self.data * other.data, (self, other), None, "mul")

        def bwd():
            if self.requires_grad:
                self._accumulate(_unbroadcast(out.grad * other.data, self.data.shape))
            if other.requires_grad:
                other._accumulate(_unbroadcast(out.grad * self.data, other.data.shape))

        out._bwd = bwd if out.requires_grad else None
        return out

    __rmul__ = __mul__

    def __neg__(self):
        return self * -1.0

    def __sub__(self, other):
        return self + (-self._coerce(other))

    def __rsub__(self, other):
        return self._coerce(other) + (-self)

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            raise TypeError("tensor/tensor division is not supported")
        return self * (1.0 / float(other))

    def __pow__(self, p):
        p = float(p)
        out = Tensor._make(self.data**p, (self,), None, "pow")

        def bwd():
            self._accumulate(out.grad * p * self.data ** (p - 1.0))

        out._bwd = bwd if out.requires_grad else None
        return out

    def __matmul__(self, other):
        if not isinstance(other, Tensor):
            other = self._coerce(other)
        a, b = self, other
        if a.data.ndim < 2 or b.data.ndim < 2:
            raise ValueError("matmul requires tensors with at least 2 dims")
        out = Tensor._make(np.matmul(a.data, b.data), (a, b), None, "matmul")

        def bwd():
            g = out.grad
            if a.requires_grad:
                ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
                a._accumulate(_unbroadcast(ga, a.data.shape))
            if b.requires_grad:
                gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
                b._accumulate(_unbroadcast(gb, b.data.shape))

        out._bwd = bwd if out.requires_grad else None
        return out

    # -- shape ops ---------------------------------------------------------

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        out = Tensor._make(self.data.reshape(shape), (self,), None, "reshape")

        def bwd():
            self._accumulate(out.grad.reshape(self.data.shape))

        out._bwd = bwd if out.requires_grad else None
        return out

    def transpose(self, axes):
        axes = tuple(axes)
        out = Tensor._make(np.transpose(self.data, axes), (self,), None, "transpose")
        inv = tuple(np.argsort(axes))

        def bwd():
            self._accumulate(np.transpose(out.grad, inv))

        out._bwd = bwd if out.requires_grad else None
        return out

    def swapaxes(self, a, b):
        axes = list(range(self.data.ndim))
        axes[a], axes[b] = axes[b], axes[a]
        return self.transpose(axes)

    # -- reductions --------------------------------------------------------

    def sum(self, axis=None, keepdims=False):
        out = Tensor._make(self.data.sum(axis=axis, keepdims=keepdims), (self,), None, "sum")

        def bwd():
            g = out.grad
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            self._accumulate(np.broadcast_to(g, self.data.shape).copy())

        out._bwd = bwd if out.requires_grad else None
        return out

    def mean(self, axis=None, keepdims=False):
        if axis is None:
            n = self.data.size
        else:
            n = self.data.shape[axis]
        return self.sum(axis=axis, keepdims=keepdims) / n

    # -- pointwise ---------------------------------------------------------

    def exp(self):
        y = np.exp(self.data)
        out = Tensor._make(y, (self,), None, "exp")

        def bwd():
            self._accumulate(out.grad * y)

        out._bwd = bwd if out.requires_grad else None
        return out

    def log(self):
        out = Tensor._make(np.log(self.data), (self,), None, "log")

        def bwd():
            self._accumulate(out.grad / self.data)

        out._bwd = bwd if out.requires_grad else None
        return out

    def tanh(self):
        y = np.tanh(self.data)
        out = Tensor._make(y, (self,), None, "tanh")

        def bwd():
            self._accumulate(out.grad * (1.0 - y * y))

        out._bwd = bwd if out.requires_grad else None
        return out


# -- fused primitives ------------------------------------------------------


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    """Numerically stable softmax along axis."""
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=axis, keepdims=True)
    out = Tensor._make(y, (x,), None, "softmax")

    def bwd():
        g = out.grad
        dot = (g * y).sum(axis=axis, keepdims=True)
        x._accumulate(y * (g - dot))

    out._bwd = bwd if out.requires_grad else None
    return out


def log_softmax(x: Tensor, axis: int = -1) -> Tensor:
    m = x.data.max(axis=axis, keepdims=True)
    shifted = x.data - m
    lse = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    z = shifted - lse
    out = Tensor._make(z, (x,), None, "log_softmax")

    def bwd():
        g = out.grad
        x._accumulate(g - np.exp(z) * g.sum(axis=axis, keepdims=True))

    out._bwd = bwd if out.requires_grad else None
    return out


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize over the last axis, then scale and shift."""
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    y = gain.data * xhat + bias.data
    out = Tensor._make(y, (x, gain, bias), None, "layer_norm")

    def bwd():
        g = out.grad
        lead = tuple(range(g.ndim - 1))
        if gain.requires_grad:
            gain._accumulate((g * xhat).sum(axis=lead))
        if bias.requires_grad:
            bias._accumulate(g.sum(axis=lead))
        if x.requires_grad:
            dxhat = g * gain.data
            m1 = dxhat.mean(axis=-1, keepdims=True)
            m2 = (dxhat * xhat).mean(axis=-1, keepdims=True)
            x._accumulate(inv * (dxhat - m1 - xhat * m2))

    out._bwd = bwd if out.requires_grad else None
    return out


_GELU_C = math.sqrt(2.0 / math.pi)


def gelu(x: Tensor) -> Tensor:
    """tanh-approximated gaussian error linear unit."""
    d = x.data
    u = _GELU_C * (d + 0.044715 * d**3)
    t = np.tanh(u)
    y = 0.5 * d * (1.0 + t)
    out = Tensor._make(y, (x,), None, "gelu")

    def bwd():
        du = _GELU_C * (1.0 + 3 * 0.044715 * d * d)
        dydx = 0.5 * (1.0 + t) + 0.5 * d * (1.0 - t * t) * du
        x._accumulate(out.grad * dydx)

    out._bwd = bwd if out.requires_grad else None
    return out


def embedding(table: Tensor, ids: np.ndarray) -> Tensor:
    """Gather rows of table by integer ids; grad scatters back with add."""
    ids = np.asarray(ids)
    if ids.min(initial=0) < 0 or (ids.size and ids.max() >= table.data.shape[0]):
        raise IndexError("embedding id out of range")
    out = Tensor._make(table.data[ids], (table,), None, "embedding")

    def bwd():
        g = np.zeros_like(table.data)
        np.add.at(g, ids, out.grad)
        table._accumulate(g)

    out._bwd = bwd if out.requires_grad else None
    return out


def cross_entropy(logits: Tensor, targets: np.ndarray, mask: np.ndarray | None = None) -> Tensor:
    """Mean negative log-likelihood of targets under logits.

    logits: [N, V]; targets: [N] int; mask: optional [N] of 0/1 weights.
    The mean is over unmasked positions. Always checks the result is
    finite; a NaN loss raises instead of silently corrupting training.
    """
    n, v = logits.data.shape
    targets = np.asarray(targets)
    if targets.shape != (n,):
        raise ValueError(f"targets shape {targets.shape} does not match logits rows {n}")
    if mask is None:
        mask = np.ones(n, dtype=logits.data.dtype)
    else:
        mask = np.asarray(mask, dtype=logits.data.dtype)
    total = mask.sum()
    if total <= 0:
        raise ValueError("cross_entropy needs at least one unmasked position")
    m = logits.data.max(axis=-1, keepdims=True)
    shifted = logits.data - m
    lse = np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
    logp = shifted - lse
    picked = logp[np.arange(n), targets]
    loss = -(picked * mask).sum() / total
    if not np.isfinite(loss):
        raise NumericsError("non-finite cross_entropy loss")
    out = Tensor._make(np.asarray(loss, dtype=logits.data.dtype), (logits,), None, "cross_entropy")

    def bwd():
        g = float(out.grad)
        p = np.exp(logp)
        p[np.arange(n), targets] -= 1.0
        p *= (mask / total)[:, None] * g
        logits._accumulate(p)

    out._bwd = bwd if out.requires_grad else None
    return out
