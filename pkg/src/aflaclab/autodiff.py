"""Minimal reverse-mode autodiff over numpy arrays.

Only the operations the training objectives need: dense affine maps, valid
2-D convolution, 2x2 max pooling, relu, row-wise log-softmax, label
negative log-likelihood, a KL-alignment loss, and scalar arithmetic for
composing phase objectives. Gradients flow only into nodes marked as
requiring grad; constants are free.
"""

from __future__ import annotations

import numpy as np

from . import backend as K
from .errors import DisconnectedGraphError, LabelRangeError, SupportMismatchError


class Tensor:
    __slots__ = ("data", "grad", "parents", "bwd", "needs_grad")

    def __init__(self, data, parents=(), bwd=None, needs_grad=False):
        self.data = np.asarray(data)
        self.grad = None
        self.parents = parents
        self.bwd = bwd
        self.needs_grad = needs_grad

    @property
    def shape(self):
        return self.data.shape

    def item(self) -> float:
        return float(self.data)


def param(data: np.ndarray) -> Tensor:
    return Tensor(data, needs_grad=True)


def const(data) -> Tensor:
    return Tensor(data)


def _node(data, parents, bwd) -> Tensor:
    ng = any(p.needs_grad for p in parents)
    return Tensor(data, parents if ng else (), bwd if ng else None, needs_grad=ng)


def _acc(t: Tensor, g: np.ndarray) -> None:
    if not t.needs_grad:
        return
    if t.grad is None:
        t.grad = g.copy() if isinstance(g, np.ndarray) else np.asarray(g)
    else:
        t.grad = t.grad + g


def backward(loss: Tensor) -> None:
    """Accumulate gradients of a scalar node into every reachable parameter."""
    if loss.data.size != 1:
        raise DisconnectedGraphError(
            f"backward target must be a scalar node, got shape {loss.data.shape}"
        )
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(loss, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen or not node.needs_grad:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in node.parents:
            stack.append((parent, False))
    loss.grad = np.ones_like(loss.data)
    for node in reversed(order):
        if node.bwd is not None and node.grad is not None:
            node.bwd(node.grad)


# ---------------------------------------------------------------- layers


def matmul(a: Tensor, b: Tensor) -> Tensor:
    y = a.data @ b.data

    def bwd(g):
        _acc(a, g @ b.data.T)
        _acc(b, a.data.T @ g)

    return _node(y, (a, b), bwd)


def add_bias(x: Tensor, b: Tensor) -> Tensor:
    y = x.data + b.data

    def bwd(g):
        _acc(x, g)
        _acc(b, g.sum(axis=tuple(range(g.ndim - 1))))

    return _node(y, (x, b), bwd)


def reshape(x: Tensor, shape) -> Tensor:
    old = x.data.shape
    y = x.data.reshape(shape)

    def bwd(g):
        _acc(x, g.reshape(old))

    return _node(y, (x,), bwd)


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    y = np.where(mask, x.data, 0)

    def bwd(g):
        _acc(x, g * mask)

    return _node(y, (x,), bwd)


def conv2d(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    y = K.conv2d_forward(x.data, w.data, b.data)

    def bwd(g):
        dx, dw, db = K.conv2d_backward(x.data, w.data, np.ascontiguousarray(g),
                                       x.needs_grad)
        if x.needs_grad:
            _acc(x, dx)
        _acc(w, dw)
        _acc(b, db)

    return _node(y, (x, w, b), bwd)


def maxpool2(x: Tensor) -> Tensor:
    y, idx = K.maxpool2_forward(x.data)
    _, h, wid, _ = x.data.shape

    def bwd(g):
        _acc(x, K.maxpool2_backward(np.ascontiguousarray(g), idx, h, wid))

    return _node(y, (x,), bwd)


def log_softmax(x: Tensor) -> Tensor:
    z = x.data - x.data.max(axis=-1, keepdims=True)
    y = z - np.log(np.exp(z).sum(axis=-1, keepdims=True))

    def bwd(g):
        _acc(x, g - np.exp(y) * g.sum(axis=-1, keepdims=True))

    return _node(y, (x,), bwd)


def nll_mean(logp: Tensor, labels: np.ndarray) -> Tensor:
    """Mean negative log-likelihood of integer labels under log-prob rows."""
    n, k = logp.data.shape
    if labels.min() < 0 or labels.max() >= k:
        raise LabelRangeError(f"labels must lie in [0, {k}), got range "
                              f"[{labels.min()}, {labels.max()}]")
    rows = np.arange(n)
    y = -logp.data[rows, labels].mean()

    def bwd(g):
        d = np.zeros_like(logp.data)
        d[rows, labels] = -float(g) / n
        _acc(logp, d)

    return _node(y, (logp,), bwd)


def kld_mean(target_rows: np.ndarray, logq: Tensor) -> Tensor:
    """Mean over the batch of KL(target_row || q), natural log.

    ``target_rows`` is a constant (B, K) array of probability rows; the
    gradient flows only through the predicted log-probabilities.
    """
    n = logq.data.shape[0]
    if np.any((target_rows > 0) & np.isneginf(logq.data)):
        raise SupportMismatchError(
            "alignment target has mass where the predicted probability is zero"
        )
    tlogt = np.where(target_rows > 0, target_rows * np.log(np.where(target_rows > 0, target_rows, 1.0)), 0.0)
    y = (tlogt.sum(axis=1) - (target_rows * logq.data).sum(axis=1)).mean()

    def bwd(g):
        _acc(logq, target_rows * (-float(g) / n))

    return _node(y, (logq,), bwd)


def add(a: Tensor, b: Tensor) -> Tensor:
    y = a.data + b.data

    def bwd(g):
        _acc(a, g)
        _acc(b, g)

    return _node(y, (a, b), bwd)


def scale(a: Tensor, c: float) -> Tensor:
    y = a.data * c

    def bwd(g):
        _acc(a, g * c)

    return _node(y, (a,), bwd)


def square_sum(a: Tensor) -> Tensor:
    y = np.asarray((a.data**2).sum())

    def bwd(g):
        _acc(a, 2.0 * a.data * float(g))

    return _node(y, (a,), bwd)
