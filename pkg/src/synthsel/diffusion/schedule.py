"""Noise schedules and closed-form forward (noising) processes."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np


class ScheduleKind(str, enum.Enum):
    LINEAR = "linear"
    COSINE = "cosine"


@dataclass(frozen=True, eq=False)
class NoiseSchedule:
    """Betas for steps ``1..T``; ``alpha_bar[t-1]`` is the cumulative product up to ``t``."""

    betas: np.ndarray
    kind: ScheduleKind = ScheduleKind.LINEAR

    def __post_init__(self):
        betas = np.array(self.betas, dtype=np.float64)
        if betas.ndim != 1 or betas.size < 1:
            raise ValueError("betas must be a non-empty vector")
        if np.any(betas <= 0) or np.any(betas >= 1):
            raise ValueError("every beta must lie in (0, 1)")
        betas.setflags(write=False)
        object.__setattr__(self, "betas", betas)
        alphas = 1.0 - betas
        alpha_bar = np.cumprod(alphas)
        alphas.setflags(write=False)
        alpha_bar.setflags(write=False)
        object.__setattr__(self, "alphas", alphas)
        object.__setattr__(self, "alpha_bar", alpha_bar)

    @property
    def T(self) -> int:
        return self.betas.size

    def abar(self, t) -> np.ndarray | float:
        """Cumulative product at step ``t`` (1-based); ``t = 0`` gives 1."""
        t = np.asarray(t)
        out = np.where(t > 0, self.alpha_bar[np.clip(t, 1, self.T) - 1], 1.0)
        return float(out) if out.ndim == 0 else out

    def posterior_variance(self, t: int) -> float:
        """Variance of q(x_{t-1} | x_t, x_0) for the Gaussian block."""
        return (1.0 - self.abar(t - 1)) / (1.0 - self.abar(t)) * self.betas[t - 1]

    def equals(self, other: "NoiseSchedule") -> bool:
        return self.kind == other.kind and np.array_equal(self.betas, other.betas)


def make_schedule(kind: ScheduleKind | str = ScheduleKind.LINEAR, T: int = 100,
                  beta_start: float = 1e-4, beta_end: float = 0.2) -> NoiseSchedule:
    kind = ScheduleKind(kind)
    if T < 1:
        raise ValueError("T must be positive")
    if kind is ScheduleKind.LINEAR:
        betas = np.linspace(beta_start, beta_end, T)
    else:
        s = 0.008
        steps = np.arange(T + 1) / T
        f = np.cos((steps + s) / (1 + s) * math.pi / 2) ** 2
        abar = f / f[0]
        betas = np.clip(1.0 - abar[1:] / abar[:-1], 1e-8, 0.999)
    sched = NoiseSchedule(betas, kind)
    if sched.alpha_bar[-1] >= 0.05:
        raise ValueError(
            f"schedule leaves alpha_bar_T = {sched.alpha_bar[-1]:.3f}; need < 0.05 for near-total noising"
        )
    return sched


def _check_t(t, sched: NoiseSchedule):
    t_arr = np.asarray(t)
    if np.any(t_arr < 1) or np.any(t_arr > sched.T):
        raise ValueError(f"timestep must lie in [1, {sched.T}]")


def q_sample(x0, t, eps, sched: NoiseSchedule) -> np.ndarray:
    """x_t = sqrt(abar_t) x0 + sqrt(1 - abar_t) eps (``t`` scalar or per-row vector)."""
    _check_t(t, sched)
    ab = np.asarray(sched.abar(t), dtype=np.float64)
    x0 = np.asarray(x0, dtype=np.float64)
    if ab.ndim == 1 and x0.ndim == 2:
        ab = ab[:, None]
    return np.sqrt(ab) * x0 + np.sqrt(1.0 - ab) * np.asarray(eps, dtype=np.float64)


def mix_uniform(probs, abar) -> np.ndarray:
    """abar * probs + (1 - abar) / K along the last axis."""
    probs = np.asarray(probs, dtype=np.float64)
    K = probs.shape[-1]
    abar = np.asarray(abar, dtype=np.float64)
    if abar.ndim == 1 and probs.ndim == 2:
        abar = abar[:, None]
    return abar * probs + (1.0 - abar) / K


def q_sample_categorical(onehot, t, sched: NoiseSchedule) -> np.ndarray:
    """Probabilities of q(x_t | x_0) for multinomial diffusion."""
    _check_t(t, sched)
    onehot = np.asarray(onehot, dtype=np.float64)
    if onehot.shape[-1] < 2:
        raise ValueError("need at least 2 categories")
    if np.any(onehot < 0) or not np.allclose(onehot.sum(axis=-1), 1.0, atol=1e-9):
        raise ValueError("input is not a probability vector")
    return mix_uniform(onehot, sched.abar(t))


def categorical_posterior(xt_onehot, x0_probs, t: int, sched: NoiseSchedule) -> np.ndarray:
    """q(x_{t-1} | x_t, x_0) with x_0 replaced by predicted probabilities; rows normalized."""
    alpha_t = sched.alphas[t - 1]
    left = mix_uniform(xt_onehot, alpha_t)
    right = mix_uniform(x0_probs, sched.abar(t - 1))
    unnorm = left * right
    return unnorm / unnorm.sum(axis=-1, keepdims=True)
