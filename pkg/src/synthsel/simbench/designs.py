"""Covariance designs and sparse regression ground truth."""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

from ..data import Dataset, Schema
from ..numerics import RngStream, psd_sqrt, sym_eigen


class DesignError(ValueError):
    pass


class DesignKind(str, enum.Enum):
    IID = "iid"
    AR = "ar"
    BLOCK = "block"


@dataclass(frozen=True)
class DesignSpec:
    kind: DesignKind
    p: int
    n: int = 500
    rho: float = 0.9
    block_size: int = 5
    within_corr: float = 0.9

    def __post_init__(self):
        object.__setattr__(self, "kind", DesignKind(self.kind))
        if self.p < 1 or self.n < 1:
            raise DesignError("n and p must be positive")
        if self.kind is DesignKind.AR and not abs(self.rho) < 1:
            raise DesignError(f"AR design needs |rho| < 1, got {self.rho}")
        if self.kind is DesignKind.BLOCK:
            if self.block_size < 1:
                raise DesignError("block_size must be positive")
            lower = -1.0 / (self.block_size - 1) if self.block_size > 1 else -np.inf
            if not lower < self.within_corr < 1:
                raise DesignError(
                    f"within_corr must lie in ({lower:.4g}, 1) for blocks of size {self.block_size}"
                )


def make_design(spec: DesignSpec) -> np.ndarray:
    p = spec.p
    if spec.kind is DesignKind.IID:
        return np.eye(p)
    if spec.kind is DesignKind.AR:
        idx = np.arange(p)
        return spec.rho ** np.abs(idx[:, None] - idx[None, :]).astype(float)
    block = np.arange(p) // spec.block_size
    sigma = np.where(block[:, None] == block[None, :], spec.within_corr, 0.0)
    np.fill_diagonal(sigma, 1.0)
    return sigma


class Link(str, enum.Enum):
    LINEAR = "linear"
    LOGISTIC = "logistic"


@dataclass(eq=False)
class TrueModel:
    """``y = X beta + sigma * eps`` (linear) or ``y ~ Bernoulli(logistic(X beta))``."""

    design: DesignSpec
    beta: np.ndarray
    sigma: float = 1.0
    link: Link = Link.LINEAR
    _root: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        self.beta = np.asarray(self.beta, dtype=np.float64)
        self.link = Link(self.link)
        if self.beta.shape != (self.design.p,):
            raise DesignError(f"beta must have length p={self.design.p}")
        if self.sigma < 0:
            raise DesignError("sigma must be >= 0")

    @property
    def support(self) -> list[int]:
        return [int(j) for j in np.flatnonzero(self.beta)]

    @property
    def covariance(self) -> np.ndarray:
        return make_design(self.design)

    def sample(self, n: int, rng: RngStream) -> Dataset:
        return sample_dataset(self, n, rng)


AR10_BETA = (2, 2, -2, -2, -2, 2, 2, -2, -2, -2)
BLOCK5_BETA = (2, 2, 2, -2, -2)


class Scenario(str, enum.Enum):
    IID_S5 = "IidS5"
    AR10 = "Ar10"
    BLOCK5 = "Block5"
    LOGISTIC_BLOCK5 = "LogisticBlock5"


def make_true_model(scenario: Scenario | str, p: int, rng: RngStream | None = None, *,
                    n: int = 500, sigma: float = 1.0, perturb_sd: float = 0.1) -> TrueModel:
    """Ground truth for the named simulation scenario.

    ``IidS5`` draws a random support of size 5 with values in {-2, 2} plus
    N(0, perturb_sd^2) noise, using ``rng``.
    """
    scenario = Scenario(scenario)
    s = 10 if scenario is Scenario.AR10 else 5
    if p < s:
        raise DesignError(f"scenario {scenario.value} needs p >= {s}, got {p}")
    beta = np.zeros(p)
    if scenario is Scenario.IID_S5:
        gen = (rng or RngStream(0)).generator()
        support = np.sort(gen.choice(p, size=5, replace=False))
        beta[support] = gen.choice([-2.0, 2.0], size=5) + perturb_sd * gen.standard_normal(5)
        return TrueModel(DesignSpec(DesignKind.IID, p, n), beta, sigma)
    if scenario is Scenario.AR10:
        beta[:10] = AR10_BETA
        return TrueModel(DesignSpec(DesignKind.AR, p, n, rho=0.9), beta, sigma)
    beta[:5] = BLOCK5_BETA
    spec = DesignSpec(DesignKind.BLOCK, p, n, block_size=5, within_corr=0.9)
    link = Link.LOGISTIC if scenario is Scenario.LOGISTIC_BLOCK5 else Link.LINEAR
    return TrueModel(spec, beta, sigma, link)


def sample_dataset(tm: TrueModel, n: int, rng: RngStream) -> Dataset:
    if n < 1:
        raise DesignError("n must be >= 1")
    gen = rng.generator()
    if tm._root is None:
        tm._root = psd_sqrt(tm.covariance)
    X = gen.standard_normal((n, tm.design.p)) @ tm._root
    eta = X @ tm.beta
    if tm.link is Link.LINEAR:
        y = eta + tm.sigma * gen.standard_normal(n) if tm.sigma > 0 else eta
        return Dataset.from_xy(X, y)
    prob = 1.0 / (1.0 + np.exp(-eta))
    y = (gen.random(n) < prob).astype(np.float64)
    return Dataset.from_xy(X, y, binary_response=True)


@dataclass(eq=False)
class GaussianModel:
    """Zero-mean multivariate normal over ``p`` continuous columns (graph ground truth)."""

    covariance: np.ndarray
    _root: np.ndarray | None = field(default=None, repr=False)

    @classmethod
    def from_precision(cls, precision: np.ndarray) -> "GaussianModel":
        w, V = sym_eigen(precision)
        if w.min() <= 0:
            raise DesignError("precision matrix is not positive definite")
        cov = (V / w) @ V.T
        return cls((cov + cov.T) / 2)

    @property
    def p(self) -> int:
        return self.covariance.shape[0]

    def sample(self, n: int, rng: RngStream) -> Dataset:
        if self._root is None:
            self._root = psd_sqrt(self.covariance)
        Z = rng.generator().standard_normal((n, self.p)) @ self._root
        schema = Schema.all_continuous(self.p - 1, response=f"x{self.p}")
        return Dataset(schema, Z)
