"""Minimal reverse-mode autodiff over the fixed primitive set used by the models.

Values are float64 numpy arrays. Every operation records its parents and a
backward closure; `Tensor.backward()` walks the tape in reverse topological
order. Only the primitives the architectures need are implemented (no general
graph compiler).
"""
from __future__ import annotations

import numpy as np

__all__ = [
    "Tensor", "add", "sub", "mul", "matmul", "relu", "sigmoid", "tanh",
    "reshape", "concat", "conv1d", "tconv1d", "linear", "mean", "total",
    "loss_mse", "loss_softmax_xent", "infonce",
]


class Tensor:
    """A node in the computation tape."""

    __slots__ = ("data", "grad", "_parents", "_backward")

    def __init__(self, data, parents=(), backward=None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self._parents = parents
        self._backward = backward

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def detach(self):
        return Tensor(self.data)

    def item(self):
        return float(np.asarray(self.data).item())

    def backward(self, grad=None):
        if grad is None:
            grad = np.ones_like(self.data)
        topo = []
        seen = set()
        stack = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                stack.append((p, False))
        self.grad = np.asarray(grad, dtype=np.float64)
        for node in reversed(topo):
            if node._backward is None or node.grad is None:
                continue
            for parent, g in zip(node._parents, node._backward(node.grad)):
                if g is None:
                    continue
                parent.grad = g if parent.grad is None else parent.grad + g

    # sugar used all over the model code
    def __add__(self, other):
        return add(self, _wrap(other))

    def __sub__(self, other):
        return sub(self, _wrap(other))

    def __mul__(self, other):
        return mul(self, _wrap(other))

    def __neg__(self):
        return mul(self, Tensor(-np.ones(())))

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        return _getitem(self, key)

    def reshape(self, *shape):
        return reshape(self, shape)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape})"


def _wrap(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _unbroadcast(grad, shape):
    """Sum `grad` down to `shape` (inverse of numpy broadcasting)."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad.reshape(shape)


def add(a, b):
    out = a.data + b.data
    return Tensor(out, (a, b), lambda g: (
        _unbroadcast(g, a.data.shape), _unbroadcast(g, b.data.shape)))


def sub(a, b):
    out = a.data - b.data
    return Tensor(out, (a, b), lambda g: (
        _unbroadcast(g, a.data.shape), _unbroadcast(-g, b.data.shape)))


def mul(a, b):
    out = a.data * b.data
    return Tensor(out, (a, b), lambda g: (
        _unbroadcast(g * b.data, a.data.shape),
        _unbroadcast(g * a.data, b.data.shape)))


def matmul(a, b):
    out = a.data @ b.data
    def backward(g):
        ga = g @ np.swapaxes(b.data, -1, -2)
        gb = np.swapaxes(a.data, -1, -2) @ g
        return _unbroadcast(ga, a.data.shape), _unbroadcast(gb, b.data.shape)
    return Tensor(out, (a, b), backward)


def relu(x):
    out = np.maximum(x.data, 0.0)
    return Tensor(out, (x,), lambda g: (g * (x.data > 0),))


def sigmoid(x):
    out = 1.0 / (1.0 + np.exp(-x.data))
    return Tensor(out, (x,), lambda g: (g * out * (1.0 - out),))


def tanh(x):
    out = np.tanh(x.data)
    return Tensor(out, (x,), lambda g: (g * (1.0 - out * out),))


def reshape(x, shape):
    old = x.data.shape
    return Tensor(x.data.reshape(shape), (x,), lambda g: (g.reshape(old),))


def transpose(x):
    return Tensor(x.data.T, (x,), lambda g: (g.T,))


def _getitem(x, key):
    out = x.data[key]
    def backward(g):
        gx = np.zeros_like(x.data)
        gx[key] = g
        return (gx,)
    return Tensor(out, (x,), backward)


def concat(tensors, axis=0):
    out = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.data.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]
    def backward(g):
        return tuple(np.split(g, splits, axis=axis))
    return Tensor(out, tuple(tensors), backward)


def mean(x):
    n = x.data.size
    return Tensor(x.data.mean(), (x,), lambda g: (np.full_like(x.data, g / n),))


def total(x):
    return Tensor(x.data.sum(), (x,), lambda g: (np.full_like(x.data, g),))


# ---------------------------------------------------------------------------
# convolution primitives (stride 1, no padding)

def _im2col(x, k):
    """x: (B, C, L) -> contiguous (B, C*k, L-k+1) patch matrix."""
    B, C, L = x.shape
    lout = L - k + 1
    s = x.strides
    col = np.lib.stride_tricks.as_strided(
        x, shape=(B, C, k, lout), strides=(s[0], s[1], s[2], s[2]))
    return np.ascontiguousarray(col).reshape(B, C * k, lout)


def _as_batched(x):
    if x.ndim == 2:
        return x[None], True
    if x.ndim == 3:
        return x, False
    raise ValueError(f"expected (C, L) or (B, C, L) input, got shape {x.shape}")


def conv1d(x, w, b):
    """1-D convolution. x: (C_in, L) or (B, C_in, L); w: (C_out, C_in, k); b: (C_out,).

    Output length L-k+1 (stride 1, no padding).
    """
    xb, squeeze = _as_batched(x.data)
    cout, cin, k = w.data.shape
    B, cx, L = xb.shape
    if cx != cin:
        raise ValueError(f"conv1d channel mismatch: input {cx}, weight {cin}")
    if L < k:
        raise ValueError(f"conv1d input length {L} shorter than kernel {k}")
    col = _im2col(xb, k)
    w2 = w.data.reshape(cout, cin * k)
    out = np.matmul(w2, col) + b.data[:, None]

    def backward(g):
        gb3 = g[None] if squeeze else g
        gw = np.matmul(gb3, col.transpose(0, 2, 1)).sum(axis=0).reshape(cout, cin, k)
        gbias = gb3.sum(axis=(0, 2))
        tmp = np.matmul(w2.T, gb3).reshape(B, cin, k, -1)
        gx = np.zeros_like(xb)
        lout = L - k + 1
        for j in range(k):
            gx[:, :, j:j + lout] += tmp[:, :, j, :]
        return (gx[0] if squeeze else gx), gw, gbias

    return Tensor(out[0] if squeeze else out, (x, w, b), backward)


def tconv1d(x, w, b):
    """Transposed 1-D convolution (adjoint of conv1d).

    x: (C_in, L) or (B, C_in, L); w: (C_in, C_out, k); b: (C_out,).
    Output length L+k-1.
    """
    xb, squeeze = _as_batched(x.data)
    cin, cout, k = w.data.shape
    B, cx, L = xb.shape
    if cx != cin:
        raise ValueError(f"tconv1d channel mismatch: input {cx}, weight {cin}")
    out = np.zeros((B, cout, L + k - 1))
    for j in range(k):
        out[:, :, j:j + L] += np.matmul(w.data[:, :, j].T, xb)
    out += b.data[:, None]

    def backward(g):
        gb3 = g[None] if squeeze else g
        gx = np.zeros_like(xb)
        gw = np.zeros_like(w.data)
        for j in range(k):
            gj = gb3[:, :, j:j + L]
            gx += np.matmul(w.data[:, :, j], gj)
            gw[:, :, j] = np.matmul(xb, gj.transpose(0, 2, 1)).sum(axis=0)
        gbias = gb3.sum(axis=(0, 2))
        return (gx[0] if squeeze else gx), gw, gbias

    return Tensor(out[0] if squeeze else out, (x, w, b), backward)


def linear(x, w, b):
    """Affine map. x: (n,) or (B, n); w: (m, n); b: (m,). Returns W x + b."""
    if x.data.shape[-1] != w.data.shape[1]:
        raise ValueError(
            f"linear shape mismatch: input {x.data.shape}, weight {w.data.shape}")
    out = x.data @ w.data.T + b.data

    def backward(g):
        g2 = g.reshape(-1, g.shape[-1])
        x2 = x.data.reshape(-1, x.data.shape[-1])
        return g @ w.data, g2.T @ x2, g2.sum(axis=0)

    return Tensor(out, (x, w, b), backward)


# ---------------------------------------------------------------------------
# losses

def loss_mse(pred, target):
    """Mean over all elements of (pred - target)^2."""
    diff = pred.data - target.data
    n = diff.size
    out = float(np.mean(diff * diff))

    def backward(g):
        base = (2.0 / n) * diff * g
        return base, -base

    return Tensor(out, (pred, target), backward)


def loss_softmax_xent(logits, labels):
    """Mean cross-entropy -log softmax(logits)[label].

    logits: (K,) or (B, K); labels: int or int array of shape (B,).
    """
    z = logits.data
    squeeze = z.ndim == 1
    z2 = z[None] if squeeze else z
    y = np.atleast_1d(np.asarray(labels, dtype=np.intp))
    B = z2.shape[0]
    zmax = z2.max(axis=1, keepdims=True)
    ez = np.exp(z2 - zmax)
    p = ez / ez.sum(axis=1, keepdims=True)
    losses = -(z2[np.arange(B), y] - zmax[:, 0] - np.log(ez.sum(axis=1)))
    out = float(losses.mean())

    def backward(g):
        gz = p.copy()
        gz[np.arange(B), y] -= 1.0
        gz *= g / B
        return (gz[0] if squeeze else gz,)

    return Tensor(out, (logits,), backward)


def infonce(scores):
    """InfoNCE estimator for a B x B score matrix with positives on the diagonal.

    Returns sum_t [scores[t,t] - logsumexp_s scores[t,s]] (log-sum-exp
    stabilized). Training minimizes the negation.
    """
    s = scores.data
    if s.ndim != 2 or s.shape[0] != s.shape[1]:
        raise ValueError(f"infonce expects a square score matrix, got {s.shape}")
    B = s.shape[0]
    if B < 2:
        raise ValueError("infonce needs batch size >= 2")
    if not np.all(np.isfinite(s)):
        raise FloatingPointError("non-finite scores in infonce")
    smax = s.max(axis=1, keepdims=True)
    es = np.exp(s - smax)
    lse = smax[:, 0] + np.log(es.sum(axis=1))
    out = float(np.sum(np.diag(s) - lse))

    def backward(g):
        p = es / es.sum(axis=1, keepdims=True)
        gs = -p
        gs[np.arange(B), np.arange(B)] += 1.0
        return (gs * g,)

    return Tensor(out, (scores,), backward)
