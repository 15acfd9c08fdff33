"""Minimal dense numerical core: reverse-mode autodiff, MLPs, Adam.

Tensors wrap float64 numpy arrays and record a backward closure; gradients
are accumulated in a fixed topological order so training runs are
bit-reproducible.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np


class TrainingError(RuntimeError):
    pass


class Tensor:
    __slots__ = ("data", "grad", "_backward", "_prev", "requires_grad")

    def __init__(self, data, prev=(), requires_grad=False):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self._backward = None
        self._prev = prev
        self.requires_grad = requires_grad or any(p.requires_grad for p in prev)

    @property
    def shape(self):
        return self.data.shape

    def _accum(self, g):
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    def __add__(self, other):
        other = other if isinstance(other, Tensor) else Tensor(other)
        out = Tensor(self.data + other.data, (self, other))

        def back(g):
            self._accum(_unbroadcast(g, self.data.shape))
            other._accum(_unbroadcast(g, other.data.shape))
        out._backward = back
        return out

    def __sub__(self, other):
        other = other if isinstance(other, Tensor) else Tensor(other)
        out = Tensor(self.data - other.data, (self, other))

        def back(g):
            self._accum(_unbroadcast(g, self.data.shape))
            other._accum(_unbroadcast(-g, other.data.shape))
        out._backward = back
        return out

    def __mul__(self, other):
        other = other if isinstance(other, Tensor) else Tensor(other)
        out = Tensor(self.data * other.data, (self, other))

        def back(g):
            self._accum(_unbroadcast(g * other.data, self.data.shape))
            other._accum(_unbroadcast(g * self.data, other.data.shape))
        out._backward = back
        return out

    __rmul__ = __mul__

    def matmul(self, other: "Tensor") -> "Tensor":
        out = Tensor(self.data @ other.data, (self, other))

        def back(g):
            self._accum(g @ other.data.T)
            other._accum(self.data.T @ g)
        out._backward = back
        return out

    def relu(self) -> "Tensor":
        mask = self.data > 0
        out = Tensor(self.data * mask, (self,))

        def back(g):
            self._accum(g * mask)
        out._backward = back
        return out

    def square(self) -> "Tensor":
        out = Tensor(self.data ** 2, (self,))

        def back(g):
            self._accum(g * 2.0 * self.data)
        out._backward = back
        return out

    def sum(self) -> "Tensor":
        out = Tensor(self.data.sum(), (self,))

        def back(g):
            self._accum(np.full_like(self.data, float(g)))
        out._backward = back
        return out

    def mean(self) -> "Tensor":
        n = self.data.size
        out = Tensor(self.data.mean(), (self,))

        def back(g):
            self._accum(np.full_like(self.data, float(g) / n))
        out._backward = back
        return out

    def gather(self, idx: np.ndarray) -> "Tensor":
        """Row selection; backward scatter-adds into the source rows."""
        out = Tensor(self.data[idx], (self,))

        def back(g):
            acc = np.zeros_like(self.data)
            np.add.at(acc, idx, g)
            self._accum(acc)
        out._backward = back
        return out

    def backward(self):
        if self.data.size != 1:
            raise TrainingError("backward requires a scalar loss")
        topo: list[Tensor] = []
        seen = set()

        def build(t: Tensor):
            if id(t) in seen:
                return
            seen.add(id(t))
            for p in t._prev:
                build(p)
            topo.append(t)

        build(self)
        self.grad = np.ones_like(self.data)
        for t in reversed(topo):
            if t._backward is not None and t.grad is not None:
                t._backward(t.grad)


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, s in enumerate(shape):
        if s == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def concat(tensors: list[Tensor]) -> Tensor:
    """Concatenate along the last axis."""
    out = Tensor(np.concatenate([t.data for t in tensors], axis=-1), tuple(tensors))
    widths = [t.data.shape[-1] for t in tensors]

    def back(g):
        off = 0
        for t, w in zip(tensors, widths):
            t._accum(g[..., off:off + w])
            off += w
    out._backward = back
    return out


def slice_cols(t: Tensor, a: int, b: int) -> Tensor:
    out = Tensor(t.data[..., a:b], (t,))

    def back(g):
        acc = np.zeros_like(t.data)
        acc[..., a:b] = g
        t._accum(acc)
    out._backward = back
    return out


def segment_sum(t: Tensor, seg_ids: np.ndarray, num_segments: int) -> Tensor:
    """Sum rows of `t` into `num_segments` buckets given per-row segment ids."""
    acc = np.zeros((num_segments, t.data.shape[-1]))
    np.add.at(acc, seg_ids, t.data)
    out = Tensor(acc, (t,))

    def back(g):
        t._accum(g[seg_ids])
    out._backward = back
    return out


@dataclass
class DenseLayer:
    weight: Tensor  # [out, in]
    bias: Tensor    # [out]

    def __call__(self, x: Tensor) -> Tensor:
        return _affine(x, self.weight, self.bias)


def _affine(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    out = Tensor(x.data @ w.data.T + b.data, (x, w, b))

    def back(g):
        x._accum(g @ w.data)
        w._accum(g.reshape(-1, g.shape[-1]).T @ x.data.reshape(-1, x.data.shape[-1]))
        b._accum(g.reshape(-1, g.shape[-1]).sum(axis=0))
    out._backward = back
    return out


@dataclass
class Mlp:
    layers: list[DenseLayer]

    def __call__(self, x: Tensor) -> Tensor:
        for i, layer in enumerate(self.layers):
            x = _affine(x, layer.weight, layer.bias)
            if i < len(self.layers) - 1:
                x = x.relu()
        return x

    def forward_np(self, x: np.ndarray) -> np.ndarray:
        """Inference fast path, no graph construction."""
        for i, layer in enumerate(self.layers):
            x = x @ layer.weight.data.T + layer.bias.data
            if i < len(self.layers) - 1:
                x = np.maximum(x, 0.0)
        return x

    def parameters(self) -> list[Tensor]:
        out = []
        for layer in self.layers:
            out.append(layer.weight)
            out.append(layer.bias)
        return out


def init_mlp(in_dim: int, hidden: list[int], rng: np.random.Generator,
             out_scale: float = 1.0) -> Mlp:
    """Fan-in uniform init (+-sqrt(6/fan_in)), zero biases.

    `out_scale` shrinks the final layer so a freshly built network starts
    out predicting near zero instead of whatever the compounded layer
    variances happen to produce; that keeps the first optimizer steps in a
    sane regime.
    """
    layers = []
    prev = in_dim
    for i, width in enumerate(hidden):
        bound = math.sqrt(6.0 / prev)
        if i == len(hidden) - 1:
            bound *= out_scale
        w = Tensor(rng.uniform(-bound, bound, size=(width, prev)), requires_grad=True)
        b = Tensor(np.zeros(width), requires_grad=True)
        layers.append(DenseLayer(w, b))
        prev = width
    return Mlp(layers)


@dataclass
class AdamState:
    lr: float = 0.003
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: list[np.ndarray] = field(default_factory=list)
    v: list[np.ndarray] = field(default_factory=list)

    def ensure(self, params: list[Tensor]):
        if not self.m:
            self.m = [np.zeros_like(p.data) for p in params]
            self.v = [np.zeros_like(p.data) for p in params]


def adam_step(params: list[Tensor], state: AdamState):
    """In-place Adam update from each parameter's accumulated gradient."""
    state.ensure(params)
    state.step += 1
    t = state.step
    for i, p in enumerate(params):
        g = p.grad if p.grad is not None else np.zeros_like(p.data)
        if not np.all(np.isfinite(g)):
            raise TrainingError("non-finite gradient")
        state.m[i] = state.beta1 * state.m[i] + (1 - state.beta1) * g
        state.v[i] = state.beta2 * state.v[i] + (1 - state.beta2) * g * g
        m_hat = state.m[i] / (1 - state.beta1 ** t)
        v_hat = state.v[i] / (1 - state.beta2 ** t)
        p.data -= state.lr * m_hat / (np.sqrt(v_hat) + state.eps)


def zero_grads(params: list[Tensor]):
    for p in params:
        p.grad = None
