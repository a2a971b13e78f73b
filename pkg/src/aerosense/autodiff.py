"""Small reverse-mode autodiff over numpy arrays.

Every primitive returns a :class:`Tensor` that remembers its parents and a
closure mapping the output gradient to parent gradients.  :func:`backward`
orders the graph topologically (the tape) and walks it in reverse,
accumulating into the ``grad`` of leaves that require it.  Everything is
float64.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

MASK_FILL = -1e30


class Tensor:
    __array_ufunc__ = None  # ndarray (op) Tensor defers to the Tensor operator

    def __init__(self, data, requires_grad: bool = False, parents: tuple = (),
                 backward_fn: Callable | None = None, op: str = "leaf"):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self.parents = parents
        self.backward_fn = backward_fn
        self.op = op

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def numpy(self) -> np.ndarray:
        return self.data

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, op={self.op}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return mul(self, -1.0)

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            raise TypeError("division by a Tensor is not supported")
        return mul(self, 1.0 / np.asarray(other, dtype=np.float64))

    def __matmul__(self, other):
        return matmul(self, other)

    def sum(self, axis=None, keepdims=False):
        return sum_axis(self, axis, keepdims)

    def reshape(self, *shape):
        return reshape(self, shape[0] if len(shape) == 1 and isinstance(shape[0], tuple) else shape)

    def swapaxes(self, a: int, b: int):
        return swapaxes(self, a, b)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data, parents: Sequence[Tensor], backward_fn, op: str) -> Tensor:
    needs = any(p.requires_grad for p in parents)
    return Tensor(data, requires_grad=needs, parents=tuple(parents) if needs else (),
                  backward_fn=backward_fn if needs else None, op=op)


def unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum ``grad`` down to ``shape`` after numpy broadcasting."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for i, n in enumerate(shape):
        if n == 1 and grad.shape[i] != 1:
            grad = grad.sum(axis=i, keepdims=True)
    return grad


# elementwise -----------------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _make(a.data + b.data, (a, b),
                 lambda g: (unbroadcast(g, a.shape), unbroadcast(g, b.shape)), "add")


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _make(a.data - b.data, (a, b),
                 lambda g: (unbroadcast(g, a.shape), unbroadcast(-g, b.shape)), "sub")


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def back(g):
        return (unbroadcast(g * b.data, a.shape) if a.requires_grad else None,
                unbroadcast(g * a.data, b.shape) if b.requires_grad else None)

    return _make(a.data * b.data, (a, b), back, "mul")


def sigmoid(x) -> Tensor:
    x = as_tensor(x)
    # tanh form never overflows
    out = 0.5 + 0.5 * np.tanh(0.5 * x.data)
    return _make(out, (x,), lambda g: (g * out * (1.0 - out),), "sigmoid")


def huber(a, delta: float = 1.0) -> Tensor:
    """Elementwise Huber penalty: quadratic within ``delta``, linear beyond."""
    a = as_tensor(a)
    absa = np.abs(a.data)
    small = absa <= delta
    out = np.where(small, 0.5 * a.data ** 2, delta * (absa - 0.5 * delta))
    slope = np.where(small, a.data, delta * np.sign(a.data))
    return _make(out, (a,), lambda g: (g * slope,), "huber")


# shape ---------------------------------------------------------------------

def reshape(x, shape) -> Tensor:
    x = as_tensor(x)
    return _make(x.data.reshape(shape), (x,), lambda g: (g.reshape(x.shape),), "reshape")


def swapaxes(x, a: int, b: int) -> Tensor:
    x = as_tensor(x)
    return _make(np.swapaxes(x.data, a, b), (x,), lambda g: (np.swapaxes(g, a, b),), "swapaxes")


def scatter_rows(x, rows: np.ndarray) -> Tensor:
    """Place the rows of ``x`` (R, C) where ``rows`` (boolean, R true entries) is set; zeros elsewhere."""
    x = as_tensor(x)
    rows = np.asarray(rows, dtype=bool)
    out = np.zeros(rows.shape + x.shape[1:])
    out[rows] = x.data
    return _make(out, (x,), lambda g: (g[rows],), "scatter_rows")


def concat(tensors: Sequence, axis: int = -1) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    cuts = np.cumsum(sizes)[:-1]
    out = np.concatenate([t.data for t in tensors], axis=axis)
    return _make(out, tensors, lambda g: tuple(np.split(g, cuts, axis=axis)), "concat")


def sum_axis(x, axis=None, keepdims: bool = False) -> Tensor:
    x = as_tensor(x)
    out = x.data.sum(axis=axis, keepdims=keepdims)

    def back(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, x.shape).copy(),)

    return _make(out, (x,), back, "sum")


# linear algebra --------------------------------------------------------------

def matmul(a, b) -> Tensor:
    """Matrix product over the last two axes with numpy batch broadcasting."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ValueError(f"inner dimensions differ: {a.shape} @ {b.shape}")
    out = a.data @ b.data

    def back(g):
        ga = unbroadcast(g @ np.swapaxes(b.data, -1, -2), a.shape) if a.requires_grad else None
        gb = unbroadcast(np.swapaxes(a.data, -1, -2) @ g, b.shape) if b.requires_grad else None
        return ga, gb

    return _make(out, (a, b), back, "matmul")


# normalization and masking ---------------------------------------------------

def masked_softmax(logits, mask) -> Tensor:
    """Softmax over the last axis of ``logits + mask``.

    ``mask`` holds 0 for visible entries and ``-inf`` (or anything at or
    below -1e29) for hidden ones.  Hidden entries come out exactly 0 and a
    row with no visible entry is all zeros.
    """
    x = as_tensor(logits)
    mask = np.asarray(mask, dtype=np.float64)
    # hidden entries become -inf so exp gives exact zeros; the mask is usually
    # a broadcast (B, 1, N, N) array, so work on it is cheap
    z = x.data + np.where(mask > MASK_FILL / 10, mask, -np.inf)
    top = z.max(axis=-1, keepdims=True)
    top[~np.isfinite(top)] = 0.0  # rows with nothing visible
    np.subtract(z, top, out=z)
    out = np.exp(z, out=z)
    s = out.sum(axis=-1, keepdims=True)
    s[s == 0] = 1.0
    out /= s

    def back(g):
        return (out * (g - (g * out).sum(axis=-1, keepdims=True)),)

    return _make(out, (x,), back, "masked_softmax")


def layer_norm(x, gain, bias, eps: float = 1e-5) -> Tensor:
    """Normalize over the last axis, then scale by ``gain`` and shift by ``bias``."""
    x, gain, bias = as_tensor(x), as_tensor(gain), as_tensor(bias)
    mu = x.data.mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(x.data.var(axis=-1, keepdims=True) + eps)
    xhat = (x.data - mu) * inv
    out = xhat * gain.data + bias.data

    def back(g):
        dxhat = g * gain.data
        dx = inv * (dxhat - dxhat.mean(axis=-1, keepdims=True)
                    - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True))
        return dx, unbroadcast(g * xhat, gain.shape), unbroadcast(g, bias.shape)

    return _make(out, (x, gain, bias), back, "layer_norm")


@dataclass
class BatchNormState:
    """Running statistics for one batch-norm layer."""

    running_mean: np.ndarray
    running_var: np.ndarray
    momentum: float = 0.1
    eps: float = 1e-5

    @classmethod
    def create(cls, width: int) -> "BatchNormState":
        return cls(np.zeros(width), np.ones(width))


def batch_norm(x, gamma, beta, state: BatchNormState, training: bool,
               valid: np.ndarray | None = None) -> Tensor:
    """Batch norm over all leading axes of ``x`` (channels last).

    In training mode the statistics come from rows flagged in ``valid``
    (all rows by default) and the running statistics are updated in place;
    every row, padding included, is normalized with those statistics.
    Evaluation mode is a fixed affine map built from the running statistics.
    """
    x, gamma, beta = as_tensor(x), as_tensor(gamma), as_tensor(beta)
    c = x.shape[-1]
    flat = x.data.reshape(-1, c)
    rows = None if valid is None else np.asarray(valid, bool).reshape(-1)
    if rows is not None and rows.all():
        rows = None
    sel = flat if rows is None else flat[rows]
    n = len(sel)

    if training and n > 0:
        mu = sel.mean(axis=0)
        var = sel.var(axis=0)
        unbiased = var * n / (n - 1) if n > 1 else var
        m = state.momentum
        state.running_mean = (1 - m) * state.running_mean + m * mu
        state.running_var = (1 - m) * state.running_var + m * unbiased
        batch_stats = True
    else:
        mu, var = state.running_mean, state.running_var
        batch_stats = False

    s = np.sqrt(var + state.eps)
    xhat = (flat - mu) / s
    out = (xhat * gamma.data + beta.data).reshape(x.shape)

    def back(g):
        g = g.reshape(-1, c)
        dxhat = g * gamma.data
        dx = dxhat / s
        if batch_stats:
            dmu = -dxhat.sum(axis=0) / s
            dvar = -0.5 * (dxhat * xhat).sum(axis=0) / s ** 2
            if rows is None:
                dx += dmu / n + dvar * 2.0 * xhat * (s / n)
            else:
                dx[rows] += dmu / n + dvar * 2.0 * xhat[rows] * (s / n)
        return (dx.reshape(x.shape), (g * xhat).sum(axis=0).reshape(gamma.shape),
                g.sum(axis=0).reshape(beta.shape))

    return _make(out, (x, gamma, beta), back, "batch_norm")


def dropout_mask(shape, p: float, key: Sequence[int]) -> np.ndarray:
    """Keep-mask from a counter-based generator keyed by ``key``."""
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence([int(k) for k in key])))
    return rng.random(shape) >= p


def dropout(x, p: float, key: Sequence[int], training: bool) -> Tensor:
    """Inverted dropout; identity outside training or when ``p == 0``."""
    x = as_tensor(x)
    if not training or p == 0.0:
        return x
    scale = dropout_mask(x.shape, p, key) / (1.0 - p)
    return _make(x.data * scale, (x,), lambda g: (g * scale,), "dropout")


def masked_max(x, valid: np.ndarray, axis: int = 1) -> Tensor:
    """Max over ``axis`` restricted to ``valid`` entries; 0 where none are valid."""
    x = as_tensor(x)
    v = np.expand_dims(np.asarray(valid, bool), -1) if np.ndim(valid) < x.ndim else np.asarray(valid, bool)
    v = np.broadcast_to(v, x.shape)
    filled = np.where(v, x.data, -np.inf)
    idx = np.expand_dims(filled.argmax(axis=axis), axis)
    any_valid = v.any(axis=axis)
    out = np.where(any_valid, np.take_along_axis(x.data, idx, axis).squeeze(axis), 0.0)

    def back(g):
        gx = np.zeros(x.shape)
        np.put_along_axis(gx, idx, np.expand_dims(np.where(any_valid, g, 0.0), axis), axis)
        return (gx,)

    return _make(out, (x,), back, "masked_max")


# backward pass ---------------------------------------------------------------

def tape(root: Tensor) -> list[Tensor]:
    """Nodes reachable from ``root`` in topological order (inputs first)."""
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node.parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(leaf) into ``grad`` of every leaf that requires it."""
    if loss.data.size != 1:
        raise ValueError("backward needs a scalar loss")
    if not loss.requires_grad:
        return
    grads = {id(loss): np.ones_like(loss.data)}
    for node in reversed(tape(loss)):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node.backward_fn is None:
            node.grad = g.copy() if node.grad is None else node.grad + g
            continue
        for parent, pg in zip(node.parents, node.backward_fn(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            grads[key] = pg if key not in grads else grads[key] + pg


def grad_check(f: Callable[[], Tensor], params: Sequence[Tensor], h: float = 1e-5) -> float:
    """Largest relative disagreement between autodiff and central differences.

    ``f`` rebuilds the scalar loss from the current contents of ``params``.
    """
    for p in params:
        p.zero_grad()
    backward(f())
    worst = 0.0
    for p in params:
        g_ad = np.zeros(p.shape) if p.grad is None else p.grad
        for i in np.ndindex(p.shape):
            old = p.data[i]
            p.data[i] = old + h
            up = float(f().data)
            p.data[i] = old - h
            down = float(f().data)
            p.data[i] = old
            fd = (up - down) / (2 * h)
            ad = float(g_ad[i])
            worst = max(worst, abs(ad - fd) / max(1e-8, abs(ad) + abs(fd)))
    return worst
