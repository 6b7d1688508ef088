"""Parameter storage, initialization schemes, Adam, and the LSTM cell."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autodiff import Tensor, linear, mul, sigmoid, tanh, transpose as _t


@dataclass
class Param:
    tensor: Tensor
    m: np.ndarray = None
    v: np.ndarray = None

    def __post_init__(self):
        if self.m is None:
            self.m = np.zeros_like(self.tensor.data)
        if self.v is None:
            self.v = np.zeros_like(self.tensor.data)


@dataclass
class ParamStore:
    """Ordered name -> parameter map with gradient slots and Adam moments."""

    params: dict = field(default_factory=dict)
    step: int = 0

    def add(self, name, value):
        if name in self.params:
            raise ValueError(f"duplicate parameter name {name!r}")
        self.params[name] = Param(Tensor(np.ascontiguousarray(value, dtype=np.float64)))
        return self.params[name].tensor

    def __getitem__(self, name):
        return self.params[name].tensor

    def __contains__(self, name):
        return name in self.params

    def names(self):
        return list(self.params)

    def items(self):
        return self.params.items()

    def zero_grad(self):
        for p in self.params.values():
            p.tensor.grad = None

    def n_params(self):
        return sum(p.tensor.data.size for p in self.params.values())

    def copy_values(self):
        return {k: p.tensor.data.copy() for k, p in self.params.items()}

    def load_values(self, values):
        for k, arr in values.items():
            if k not in self.params:
                raise KeyError(f"unknown parameter {k!r}")
            cur = self.params[k].tensor.data
            if cur.shape != arr.shape:
                raise ValueError(
                    f"shape mismatch at {k}: have {cur.shape}, loading {arr.shape}")
            self.params[k].tensor.data = np.asarray(arr, dtype=np.float64).copy()


def merge_stores(*stores):
    """View over several stores for a single optimizer step; no copies."""
    out = ParamStore()
    for s in stores:
        for k, p in s.items():
            if k in out.params:
                raise ValueError(f"duplicate parameter name {k!r} across stores")
            out.params[k] = p
    return out


# ---------------------------------------------------------------------------
# initialization

def orthogonal_init(shape, gain, rng):
    """Orthogonal matrix scaled by gain; conv weights are flattened to
    (out_channels, in_channels * kernel) before orthogonalization."""
    if len(shape) < 2:
        raise ValueError(f"orthogonal init needs a matrix-reshapeable shape, got {shape}")
    rows = shape[0]
    cols = int(np.prod(shape[1:]))
    a = rng.standard_normal((max(rows, cols), min(rows, cols)))
    q, r = np.linalg.qr(a)
    q *= np.sign(np.diag(r))
    if rows < cols:
        q = q.T
    return gain * q.reshape(shape)


def xavier_init(shape, gain, rng):
    """Glorot uniform: entries in +-gain*sqrt(6/(fan_in+fan_out))."""
    if len(shape) == 1:
        fan_in = fan_out = shape[0]
    else:
        receptive = int(np.prod(shape[2:])) if len(shape) > 2 else 1
        fan_out = shape[0] * receptive
        fan_in = shape[1] * receptive
    bound = gain * np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=shape)


def init(shape, kind, gain, rng):
    if gain <= 0:
        raise ValueError("init gain must be positive")
    if kind == "orthogonal":
        return orthogonal_init(shape, gain, rng)
    if kind == "xavier":
        return xavier_init(shape, gain, rng)
    raise ValueError(f"unknown init scheme {kind!r}")


# ---------------------------------------------------------------------------
# optimizer

def adam_step(store, lr, beta1=0.9, beta2=0.999, eps=1e-8):
    """One bias-corrected Adam update over every parameter with a gradient."""
    store.step += 1
    t = store.step
    for p in store.params.values():
        g = p.tensor.grad
        if g is None:
            continue
        if not np.all(np.isfinite(g)):
            raise FloatingPointError("NaN/Inf gradient in adam_step")
        p.m = beta1 * p.m + (1.0 - beta1) * g
        p.v = beta2 * p.v + (1.0 - beta2) * g * g
        mhat = p.m / (1.0 - beta1 ** t)
        vhat = p.v / (1.0 - beta2 ** t)
        p.tensor.data = p.tensor.data - lr * mhat / (np.sqrt(vhat) + eps)


def clip_global_norm(store, max_norm):
    sq = 0.0
    grads = [p.tensor.grad for p in store.params.values() if p.tensor.grad is not None]
    for g in grads:
        sq += float(np.sum(g * g))
    norm = np.sqrt(sq)
    if norm > max_norm:
        scale = max_norm / norm
        for g in grads:
            g *= scale
    return norm


LR_FLOOR = 1e-6


def reduce_lr_on_plateau(history, lr, factor=0.5, patience=10):
    """Halting-style plateau rule on a lower-is-better validation metric.

    Returns lr * factor (clamped at LR_FLOOR) when the last `patience`
    evaluations show no improvement over the best before them; never raises lr.
    """
    if len(history) <= patience:
        return lr
    best_before = min(history[:-patience])
    if min(history[-patience:]) >= best_before:
        return max(lr * factor, LR_FLOOR)
    return lr


# ---------------------------------------------------------------------------
# LSTM

def lstm_params(store, prefix, n_in, hidden, gain, rng):
    """Xavier-initialized weights for one LSTM direction; gate order (i, f, g, o)."""
    store.add(f"{prefix}.wx", xavier_init((4 * hidden, n_in), gain, rng))
    store.add(f"{prefix}.wh", xavier_init((4 * hidden, hidden), gain, rng))
    store.add(f"{prefix}.b", np.zeros(4 * hidden))


def lstm_cell(x, h_prev, c_prev, wx, wh, b):
    """Standard gated update; x: (B, n), h/c: (B, H), wx: (4H, n), wh: (4H, H)."""
    return lstm_cell_from_gates(linear(x, wx, b), h_prev, c_prev, wh)


def lstm_cell_from_gates(gx, h_prev, c_prev, wh):
    """Gated update with the input projection gx = x·wxᵀ + b precomputed, so a
    whole sequence's input side can run as one batched matmul."""
    H = wh.data.shape[1]
    gates = gx + (h_prev @ _t(wh))
    i = sigmoid(gates[..., 0 * H:1 * H])
    f = sigmoid(gates[..., 1 * H:2 * H])
    g = tanh(gates[..., 2 * H:3 * H])
    o = sigmoid(gates[..., 3 * H:4 * H])
    c_t = mul(f, c_prev) + mul(i, g)
    h_t = mul(o, tanh(c_t))
    return h_t, c_t
