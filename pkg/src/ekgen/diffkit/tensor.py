"""Minimal reverse-mode autodiff on numpy arrays.

Single-threaded, CPU only. Training runs in float32; gradient checking
switches the whole graph to float64 via `use_dtype`.
"""

from __future__ import annotations

import contextlib
from typing import Callable, Iterable, Sequence

import numpy as np

_DTYPE = np.float32


class ShapeMismatch(ValueError):
    """Raised when operand shapes are incompatible for an op."""


def current_dtype():
    return _DTYPE


@contextlib.contextmanager
def use_dtype(dtype):
    """Temporarily set the default dtype for newly created tensors."""
    global _DTYPE
    prev = _DTYPE
    _DTYPE = np.dtype(dtype).type
    try:
        yield
    finally:
        _DTYPE = prev


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum `grad` down to `shape` (inverse of numpy broadcasting)."""
    if grad.shape == shape:
        return grad
    ndiff = grad.ndim - len(shape)
    if ndiff > 0:
        grad = grad.sum(axis=tuple(range(ndiff)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_backward", "_parents")

    def __init__(self, data, requires_grad: bool = False, _parents: tuple = ()):
        if isinstance(data, Tensor):
            data = data.data
        self.data = np.asarray(data, dtype=_DTYPE)
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self._backward: Callable[[], None] | None = None
        self._parents = _parents

    # -- basic introspection -------------------------------------------------

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def item(self) -> float:
        return float(self.data)

    def numpy(self) -> np.ndarray:
        return self.data

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, grad={self.requires_grad})"

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy())

    def zero_grad(self):
        self.grad = None

    # -- graph machinery -----------------------------------------------------

    def _child(self, data, parents) -> "Tensor":
        rg = any(p.requires_grad for p in parents)
        out = Tensor(data, requires_grad=rg, _parents=tuple(parents) if rg else ())
        return out

    def backward(self, grad: np.ndarray | None = None):
        if grad is None:
            if self.data.size != 1:
                raise ValueError("backward() without grad requires a scalar output")
            grad = np.ones_like(self.data)
        topo: list[Tensor] = []
        seen = set()
        stack = [(self, False)]
        while stack:
            node, done = stack.pop()
            if done:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in seen:
                    stack.append((p, False))
        self.grad = np.asarray(grad, dtype=self.data.dtype)
        for node in reversed(topo):
            if node._backward is not None and node.grad is not None:
                node._backward()

    def _accum(self, grad: np.ndarray):
        if not self.requires_grad:
            return
        grad = _unbroadcast(np.asarray(grad, dtype=self.data.dtype), self.data.shape)
        if self.grad is None:
            self.grad = grad.copy()
        else:
            self.grad += grad

    # -- arithmetic ----------------------------------------------------------

    def __add__(self, other):
        other = as_tensor(other)
        out = self._child(self.data + other.data, (self, other))
        if out.requires_grad:
            def _bw():
                self._accum(out.grad)
                other._accum(out.grad)
            out._backward = _bw
        return out

    __radd__ = __add__

    def __neg__(self):
        out = self._child(-self.data, (self,))
        if out.requires_grad:
            out._backward = lambda: self._accum(-out.grad)
        return out

    def __sub__(self, other):
        return self + (-as_tensor(other))

    def __rsub__(self, other):
        return as_tensor(other) + (-self)

    def __mul__(self, other):
        other = as_tensor(other)
        out = self._child(self.data * other.data, (self, other))
        if out.requires_grad:
            def _bw():
                self._accum(out.grad * other.data)
                other._accum(out.grad * self.data)
            out._backward = _bw
        return out

    __rmul__ = __mul__

    def __truediv__(self, other):
        other = as_tensor(other)
        out = self._child(self.data / other.data, (self, other))
        if out.requires_grad:
            def _bw():
                self._accum(out.grad / other.data)
                other._accum(-out.grad * self.data / (other.data ** 2))
            out._backward = _bw
        return out

    def __pow__(self, p: float):
        out = self._child(self.data ** p, (self,))
        if out.requires_grad:
            out._backward = lambda: self._accum(out.grad * p * self.data ** (p - 1))
        return out

    def matmul(self, other: "Tensor") -> "Tensor":
        other = as_tensor(other)
        a, b = self.data, other.data
        if a.shape[-1] != b.shape[-2 if b.ndim > 1 else 0]:
            raise ShapeMismatch(f"matmul: {a.shape} @ {b.shape}")
        out = self._child(a @ b, (self, other))
        if out.requires_grad:
            def _bw():
                g = out.grad
                if b.ndim == 1:
                    self._accum(np.outer(g, b) if a.ndim == 2 else g * b)
                    other._accum(a.T @ g if a.ndim == 2 else a * g)
                elif a.ndim == 1:
                    self._accum(g @ b.T)
                    other._accum(np.outer(a, g))
                else:
                    self._accum(_unbroadcast(g @ np.swapaxes(b, -1, -2), a.shape))
                    other._accum(_unbroadcast(np.swapaxes(a, -1, -2) @ g, b.shape))
            out._backward = _bw
        return out

    __matmul__ = matmul

    # -- shape ops -----------------------------------------------------------

    def reshape(self, *shape) -> "Tensor":
        out = self._child(self.data.reshape(*shape), (self,))
        if out.requires_grad:
            out._backward = lambda: self._accum(out.grad.reshape(self.data.shape))
        return out

    def transpose(self, *axes) -> "Tensor":
        axes = axes or None
        out = self._child(np.transpose(self.data, axes), (self,))
        if out.requires_grad:
            inv = np.argsort(axes) if axes else None
            out._backward = lambda: self._accum(np.transpose(out.grad, inv))
        return out

    @property
    def T(self):
        return self.transpose()

    def __getitem__(self, idx) -> "Tensor":
        out = self._child(self.data[idx], (self,))
        if out.requires_grad:
            def _bw():
                g = np.zeros_like(self.data)
                np.add.at(g, idx, out.grad)
                self._accum(g)
            out._backward = _bw
        return out

    def sum(self, axis=None, keepdims=False) -> "Tensor":
        out = self._child(self.data.sum(axis=axis, keepdims=keepdims), (self,))
        if out.requires_grad:
            def _bw():
                g = out.grad
                if axis is not None and not keepdims:
                    g = np.expand_dims(g, axis)
                self._accum(np.broadcast_to(g, self.data.shape))
            out._backward = _bw
        return out

    def mean(self, axis=None, keepdims=False) -> "Tensor":
        n = self.data.size if axis is None else self.data.shape[axis]
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / n)

    # -- elementwise nonlinearities -----------------------------------------

    def tanh(self) -> "Tensor":
        y = np.tanh(self.data)
        out = self._child(y, (self,))
        if out.requires_grad:
            out._backward = lambda: self._accum(out.grad * (1.0 - y * y))
        return out

    def sigmoid(self) -> "Tensor":
        y = 1.0 / (1.0 + np.exp(-self.data))
        out = self._child(y, (self,))
        if out.requires_grad:
            out._backward = lambda: self._accum(out.grad * y * (1.0 - y))
        return out

    def leaky_relu(self, slope: float = 0.2) -> "Tensor":
        y = np.where(self.data > 0, self.data, slope * self.data)
        out = self._child(y, (self,))
        if out.requires_grad:
            out._backward = lambda: self._accum(
                out.grad * np.where(self.data > 0, 1.0, slope))
        return out

    def relu(self) -> "Tensor":
        return self.leaky_relu(0.0)

    def gelu(self) -> "Tensor":
        """tanh-approximated gelu; smooth, so finite differences stay clean."""
        x = self.data
        c = np.sqrt(2.0 / np.pi)
        inner = c * (x + 0.044715 * x ** 3)
        t = np.tanh(inner)
        y = 0.5 * x * (1.0 + t)
        out = self._child(y, (self,))
        if out.requires_grad:
            dinner = c * (1.0 + 3 * 0.044715 * x ** 2)
            dy = 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * dinner
            out._backward = lambda: self._accum(out.grad * dy)
        return out

    def exp(self) -> "Tensor":
        y = np.exp(self.data)
        out = self._child(y, (self,))
        if out.requires_grad:
            out._backward = lambda: self._accum(out.grad * y)
        return out

    def log(self) -> "Tensor":
        out = self._child(np.log(self.data), (self,))
        if out.requires_grad:
            out._backward = lambda: self._accum(out.grad / self.data)
        return out

    def sqrt(self) -> "Tensor":
        y = np.sqrt(self.data)
        out = self._child(y, (self,))
        if out.requires_grad:
            out._backward = lambda: self._accum(out.grad * 0.5 / np.maximum(y, 1e-12))
        return out


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    data = np.concatenate([t.data for t in tensors], axis=axis)
    rg = any(t.requires_grad for t in tensors)
    out = Tensor(data, requires_grad=rg, _parents=tuple(tensors) if rg else ())
    if rg:
        sizes = [t.data.shape[axis] for t in tensors]
        offsets = np.cumsum([0] + sizes)
        def _bw():
            for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
                sl = [slice(None)] * data.ndim
                sl[axis] = slice(lo, hi)
                t._accum(out.grad[tuple(sl)])
        out._backward = _bw
    return out


def stack(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    data = np.stack([t.data for t in tensors], axis=axis)
    rg = any(t.requires_grad for t in tensors)
    out = Tensor(data, requires_grad=rg, _parents=tuple(tensors) if rg else ())
    if rg:
        def _bw():
            for i, t in enumerate(tensors):
                t._accum(np.take(out.grad, i, axis=axis))
        out._backward = _bw
    return out


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    x = as_tensor(x)
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=axis, keepdims=True)
    out = Tensor(y, requires_grad=x.requires_grad,
                 _parents=(x,) if x.requires_grad else ())
    if out.requires_grad:
        def _bw():
            g = out.grad
            x._accum(y * (g - (g * y).sum(axis=axis, keepdims=True)))
        out._backward = _bw
    return out


def log_softmax(x: Tensor, axis: int = -1) -> Tensor:
    x = as_tensor(x)
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    y = shifted - lse
    out = Tensor(y, requires_grad=x.requires_grad,
                 _parents=(x,) if x.requires_grad else ())
    if out.requires_grad:
        p = np.exp(y)
        def _bw():
            g = out.grad
            x._accum(g - p * g.sum(axis=axis, keepdims=True))
        out._backward = _bw
    return out


def cross_entropy_label_smoothed(logits: Tensor, target: int | np.ndarray,
                                 eps_ls: float = 0.0) -> Tensor:
    """Negative log-likelihood with label smoothing.

    Target distribution mixes the one-hot target with the uniform
    distribution over all classes by weight `eps_ls`; `eps_ls=0` is plain
    cross entropy. `logits` is (n,) or (len, n) with integer targets.
    """
    logits = as_tensor(logits)
    logp = log_softmax(logits, axis=-1)
    n = logits.shape[-1]
    if logp.ndim == 1:
        picked = logp[int(target)]
        if eps_ls == 0.0:
            return -picked
        return -((1.0 - eps_ls) * picked + (eps_ls / n) * logp.sum())
    idx = np.asarray(target, dtype=np.int64)
    rows = np.arange(idx.shape[0])
    picked = logp[rows, idx]
    if eps_ls == 0.0:
        return -picked.mean()
    return -((1.0 - eps_ls) * picked.mean()
             + (eps_ls / n) * logp.sum(axis=-1).mean())


def l2_distance(a: Tensor, b: Tensor) -> Tensor:
    """Euclidean distance between two vectors."""
    d = as_tensor(a) - as_tensor(b)
    return (d * d).sum().sqrt()


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize over the last axis, then scale and shift."""
    mu = x.mean(axis=-1, keepdims=True)
    centered = x - mu
    var = (centered * centered).mean(axis=-1, keepdims=True)
    inv = (var + eps) ** -0.5
    return centered * inv * gain + bias


def embedding_lookup(table: Tensor, indices) -> Tensor:
    """Gather rows of `table` (n, d) by integer `indices`."""
    idx = np.asarray(indices, dtype=np.int64)
    return table[idx]


def parameter(rng: np.random.Generator, *shape, scale: float | None = None) -> Tensor:
    """Trainable tensor with uniform Glorot-style init."""
    if scale is None:
        fan = sum(shape) if len(shape) > 1 else shape[0]
        scale = float(np.sqrt(6.0 / max(fan, 1)))
    data = rng.uniform(-scale, scale, size=shape)
    return Tensor(data, requires_grad=True)


def zeros(*shape) -> Tensor:
    return Tensor(np.zeros(shape), requires_grad=True)
