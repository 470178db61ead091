"""Small fully connected denoiser with hand-written backpropagation and Adam."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np


def timestep_embedding(t, dim: int) -> np.ndarray:
    """Sinusoidal embedding of integer timesteps, shape ``(len(t), dim)``."""
    t = np.atleast_1d(np.asarray(t, dtype=np.float64))
    half = dim // 2
    freqs = np.exp(-math.log(10000.0) * np.arange(half) / half)
    args = t[:, None] * freqs[None, :]
    emb = np.concatenate([np.sin(args), np.cos(args)], axis=1)
    if dim % 2:
        emb = np.concatenate([emb, np.zeros((t.size, 1))], axis=1)
    return emb


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def silu(x):
    return x * _sigmoid(x)


def silu_grad(x):
    s = _sigmoid(x)
    return s * (1.0 + x * (1.0 - s))


@dataclass
class DenoiserMlp:
    """Dense network ``in -> hidden... -> out`` with SiLU between layers."""

    dims: tuple[int, ...]
    weights: list[np.ndarray] = field(default_factory=list)
    biases: list[np.ndarray] = field(default_factory=list)

    @classmethod
    def init(cls, dims, rng: np.random.Generator) -> "DenoiserMlp":
        dims = tuple(int(d) for d in dims)
        if len(dims) < 2 or min(dims) < 1:
            raise ValueError(f"invalid layer dims {dims}")
        weights, biases = [], []
        for fan_in, fan_out in zip(dims[:-1], dims[1:]):
            bound = math.sqrt(6.0 / (fan_in + fan_out))
            weights.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
            biases.append(np.zeros(fan_out))
        return cls(dims, weights, biases)

    @property
    def params(self) -> list[np.ndarray]:
        out = []
        for W, b in zip(self.weights, self.biases):
            out += [W, b]
        return out

    def copy(self) -> "DenoiserMlp":
        return DenoiserMlp(self.dims, [W.copy() for W in self.weights], [b.copy() for b in self.biases])

    def forward(self, x: np.ndarray, keep: bool = False):
        """Output for input rows ``x``; with ``keep`` also the cache for :meth:`backward`."""
        acts, pre = [x], []
        h = x
        last = len(self.weights) - 1
        for i, (W, b) in enumerate(zip(self.weights, self.biases)):
            z = h @ W + b
            if i < last:
                pre.append(z)
                h = silu(z)
                acts.append(h)
            else:
                h = z
        return (h, (acts, pre)) if keep else h

    def backward(self, cache, grad_out: np.ndarray) -> list[np.ndarray]:
        """Gradients (ordered as :attr:`params`) given dLoss/dOutput."""
        acts, pre = cache
        grads: list[np.ndarray] = []
        g = grad_out
        for i in range(len(self.weights) - 1, -1, -1):
            grads.append(g.sum(axis=0))
            grads.append(acts[i].T @ g)
            if i > 0:
                g = (g @ self.weights[i].T) * silu_grad(pre[i - 1])
        grads.reverse()
        return grads


class Adam:
    def __init__(self, params, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.t = 0

    def step(self, params, grads, lr=None):
        lr = self.lr if lr is None else lr
        self.t += 1
        c1 = 1.0 - self.beta1**self.t
        c2 = 1.0 - self.beta2**self.t
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p -= lr * (m / c1) / (np.sqrt(v / c2) + self.eps)
