"""A small reverse-mode differentiation engine over numpy arrays.

Each ``Tensor`` records its parents and a closure that pushes the output
gradient back to them. ``Tensor.backward`` walks the graph in reverse
topological order. Only the operations the training code needs exist.
"""

from __future__ import annotations

import numpy as np


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def as_tensor(x) -> "Tensor":
    return x if isinstance(x, Tensor) else Tensor(x)


class Tensor:
    __array_priority__ = 100

    def __init__(self, data, requires_grad: bool = False, parents=(), backward_fn=None, name=None):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.grad = None
        self.name = name
        self._parents = parents
        self._backward_fn = backward_fn

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    def item(self) -> float:
        return float(self.data)

    def __float__(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    @staticmethod
    def _make(data, parents, backward_fn):
        # backward_fn returns one gradient per parent, positionally
        if not any(p.requires_grad for p in parents):
            return Tensor(data)
        return Tensor(data, True, tuple(parents), backward_fn)

    def backward(self, grad=None):
        if grad is None:
            grad = np.ones_like(self.data)
        order, seen = [], set()
        stack = [(self, False)]
        while stack:
            node, done = stack.pop()
            if done:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in seen:
                    stack.append((p, False))
        grads = {id(self): np.asarray(grad, dtype=np.float64)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward_fn is None:
                node.grad = g if node.grad is None else node.grad + g
                continue
            for parent, pg in zip(node._parents, node._backward_fn(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                grads[key] = pg if key not in grads else grads[key] + pg

    # arithmetic

    def __add__(self, other):
        other = as_tensor(other)
        a, b = self, other

        def back(g):
            return [_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)]

        return Tensor._make(a.data + b.data, (a, b), back)

    __radd__ = __add__

    def __neg__(self):
        return Tensor._make(-self.data, (self,), lambda g: [-g])

    def __sub__(self, other):
        return self + (-as_tensor(other))

    def __rsub__(self, other):
        return as_tensor(other) + (-self)

    def __mul__(self, other):
        other = as_tensor(other)
        a, b = self, other

        def back(g):
            return [_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)]

        return Tensor._make(a.data * b.data, (a, b), back)

    __rmul__ = __mul__

    def __truediv__(self, other):
        other = as_tensor(other)
        a, b = self, other

        def back(g):
            return [
                _unbroadcast(g / b.data, a.shape),
                _unbroadcast(-g * a.data / b.data**2, b.shape),
            ]

        return Tensor._make(a.data / b.data, (a, b), back)

    def __rtruediv__(self, other):
        return as_tensor(other) / self

    def __pow__(self, exponent: float):
        x = self
        return Tensor._make(
            x.data**exponent, (x,), lambda g: [g * exponent * x.data ** (exponent - 1)]
        )

    def __matmul__(self, other):
        other = as_tensor(other)
        a, b = self, other

        def back(g):
            return [g @ b.data.T, a.data.T @ g]

        return Tensor._make(a.data @ b.data, (a, b), back)

    def __getitem__(self, idx):
        x = self

        def back(g):
            full = np.zeros_like(x.data)
            np.add.at(full, idx, g)
            return [full]

        return Tensor._make(x.data[idx], (x,), back)

    @property
    def T(self):
        return Tensor._make(self.data.T, (self,), lambda g: [g.T])

    def reshape(self, *shape):
        x = self
        return Tensor._make(x.data.reshape(*shape), (x,), lambda g: [g.reshape(x.shape)])

    # reductions

    def sum(self, axis=None, keepdims=False):
        x = self

        def back(g):
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            return [np.broadcast_to(g, x.shape).copy()]

        return Tensor._make(x.data.sum(axis=axis, keepdims=keepdims), (x,), back)

    def mean(self, axis=None, keepdims=False):
        n = self.data.size if axis is None else self.data.shape[axis]
        return self.sum(axis, keepdims) / n

    # elementwise functions

    def exp(self):
        x = self
        y = np.exp(x.data)
        return Tensor._make(y, (x,), lambda g: [g * y])

    def log(self):
        x = self
        return Tensor._make(np.log(x.data), (x,), lambda g: [g / x.data])

    def tanh(self):
        x = self
        y = np.tanh(x.data)
        return Tensor._make(y, (x,), lambda g: [g * (1 - y * y)])

    def arctanh(self):
        x = self
        return Tensor._make(np.arctanh(x.data), (x,), lambda g: [g / (1 - x.data**2)])

    def sqrt(self):
        """Square root whose derivative is taken as zero at 0."""
        x = self
        y = np.sqrt(x.data)

        def back(g):
            safe = np.where(y > 0, y, 1.0)
            return [np.where(y > 0, g / (2 * safe), 0.0)]

        return Tensor._make(y, (x,), back)

    def relu(self):
        x = self
        return Tensor._make(np.maximum(x.data, 0), (x,), lambda g: [g * (x.data > 0)])

    def softplus(self):
        x = self
        y = np.logaddexp(0, x.data)
        return Tensor._make(y, (x,), lambda g: [g / (1 + np.exp(-x.data))])

    def clip(self, lo=None, hi=None):
        """Clamp values; the gradient passes only where the input is inside."""
        x = self
        y = np.clip(x.data, lo, hi)

        def back(g):
            mask = np.ones_like(x.data, dtype=bool)
            if lo is not None:
                mask &= x.data >= lo
            if hi is not None:
                mask &= x.data <= hi
            return [g * mask]

        return Tensor._make(y, (x,), back)


def concat(tensors, axis=0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def back(g):
        return np.split(g, splits, axis=axis)

    return Tensor._make(np.concatenate([t.data for t in tensors], axis=axis), tensors, back)


def where(mask, a, b) -> Tensor:
    mask = np.asarray(mask, dtype=bool)
    a, b = as_tensor(a), as_tensor(b)

    def back(g):
        return [
            _unbroadcast(np.where(mask, g, 0.0), a.shape),
            _unbroadcast(np.where(mask, 0.0, g), b.shape),
        ]

    return Tensor._make(np.where(mask, a.data, b.data), (a, b), back)


def logsumexp(x: Tensor, axis: int = -1, keepdims: bool = False) -> Tensor:
    shift = np.max(x.data, axis=axis, keepdims=True)
    shift = np.where(np.isfinite(shift), shift, 0.0)
    out = (x - shift).exp().sum(axis=axis, keepdims=True).log() + shift
    if not keepdims:
        out = out.reshape(np.squeeze(out.data, axis=axis).shape)
    return out


def log_softmax(x: Tensor, axis: int = -1) -> Tensor:
    return x - logsumexp(x, axis=axis, keepdims=True)


def row_norm(x: Tensor) -> Tensor:
    return (x * x).sum(axis=-1, keepdims=True).sqrt()


def normalize_rows(x: Tensor, eps: float = 1e-15) -> Tensor:
    """L2-normalize rows; an all-zero row maps to the first basis vector."""
    norm = row_norm(x)
    zero = norm.data[:, 0] < eps
    if not np.any(zero):
        return x / norm
    basis = np.zeros(x.shape)
    basis[:, 0] = 1.0
    safe = where(zero[:, None], np.ones_like(norm.data), norm)
    return where(zero[:, None], basis, x / safe)


def pairwise_sqdist(u: Tensor, v: Tensor) -> Tensor:
    """Squared Euclidean distances between rows of ``u`` (n, d) and ``v`` (m, d).

    Uses |u|^2 + |v|^2 - 2<u, v> clamped at zero. When ``u`` and ``v`` are
    the same tensor the diagonal is exactly zero.
    """
    u, v = as_tensor(u), as_tensor(v)
    nu = np.einsum("ij,ij->i", u.data, u.data)
    nv = np.einsum("ij,ij->i", v.data, v.data)
    out = np.maximum(nu[:, None] + nv[None, :] - 2 * (u.data @ v.data.T), 0.0)
    if u is v:
        np.fill_diagonal(out, 0.0)

    def back(g):
        return [
            2 * (g.sum(axis=1)[:, None] * u.data - g @ v.data),
            2 * (g.sum(axis=0)[:, None] * v.data - g.T @ u.data),
        ]

    return Tensor._make(out, (u, v), back)
