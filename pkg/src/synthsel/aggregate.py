"""Selection by aggregating l1 fits over synthetic replicates.

A generator produces replicate datasets ``D^(b)``; every replicate is analysed
independently (lasso selection, OLS inference, or per-node neighbourhood
selection) and the per-replicate outcomes are averaged in replicate order.
"""

from __future__ import annotations

import enum
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .data import Dataset, empirical_moments
from .diffusion import DiffusionModel, generate
from .numerics import RankDeficientError, RngStream, frechet_distance, ols_fit, two_sided_pvalue
from .selectors import (Family, SelectorError, lasso_fit, logistic_lasso_fit, refit_ebic,
                        select_lambda_ebic)

log = logging.getLogger(__name__)

DEFAULT_THRESHOLDS = (0.5, 0.6, 0.7, 0.8, 0.9)


class AggregationError(RuntimeError):
    pass


class ReplicateError(AggregationError):
    def __init__(self, b: int, cause: Exception):
        super().__init__(f"replicate {b} failed: {cause}")
        self.b = b
        self.cause = cause


class TuningError(AggregationError):
    pass


# -- generators -------------------------------------------------------------

class Generator:
    """Source of replicate datasets; ``sample`` must be deterministic in ``rng``."""

    kind = "generator"
    n_syn: int

    def sample(self, n: int, rng: RngStream) -> Dataset:
        raise NotImplementedError

    def describe(self) -> dict:
        return {"kind": self.kind, "n_syn": self.n_syn}


@dataclass(eq=False)
class DiffusionGenerator(Generator):
    model: DiffusionModel
    n_syn: int
    label: str = ""
    kind = "diffusion"

    def sample(self, n, rng):
        return generate(self.model, n, rng)

    def describe(self):
        return {"kind": self.kind, "n_syn": self.n_syn, "label": self.label,
                "config": self.model.config.to_dict()}


@dataclass(eq=False)
class BootstrapGenerator(Generator):
    source: Dataset
    n_syn: int
    kind = "bootstrap"

    def sample(self, n, rng):
        rows = rng.generator().integers(0, self.source.n, size=n)
        return self.source.take(rows)


@dataclass(eq=False)
class OracleGenerator(Generator):
    """Fresh draws from a known data-generating process (anything with ``sample(n, rng)``)."""

    truth: object
    n_syn: int
    kind = "oracle"

    def sample(self, n, rng):
        return self.truth.sample(n, rng)


def generate_replicate(g: Generator, b: int, seed: int, n: int | None = None) -> Dataset:
    """Replicate ``b`` (1-based) drawn from stream ``(seed, b)``."""
    if b < 1:
        raise ValueError("replicate index b must be >= 1")
    return g.sample(g.n_syn if n is None else n, RngStream(seed, b))


def _map_replicates(fn: Callable, g: Generator, B: int, seed: int, workers: int, *args) -> list:
    """Run ``fn(g, b, seed, *args)`` for b = 1..B; results come back in index order."""
    indices = range(1, B + 1)
    if workers <= 1 or B == 1:
        return [fn(g, b, seed, *args) for b in indices]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        futures = [pool.submit(fn, g, b, seed, *args) for b in indices]
        return [f.result() for f in futures]


# -- selection ----------------------------------------------------------------

@dataclass
class ReplicateRecord:
    b: int
    indicators: np.ndarray
    coefficients: np.ndarray
    lam: float

    def to_dict(self) -> dict:
        return {"b": self.b, "lambda": self.lam, "indicators": [int(v) for v in self.indicators]}


@dataclass
class SelectionResult:
    pi_hat: np.ndarray
    threshold: float
    active_set: list[int]
    replicates: list[ReplicateRecord]
    B: int
    tuning_trace: list[dict] = field(default_factory=list)
    feature_names: list[str] = field(default_factory=list)

    @property
    def indicator_matrix(self) -> np.ndarray:
        return np.array([r.indicators for r in self.replicates], dtype=np.int64)

    def to_dict(self) -> dict:
        return {
            "pi_hat": [float(v) for v in self.pi_hat],
            "threshold": self.threshold,
            "active_set": list(self.active_set),
            "features": list(self.feature_names),
            "B": self.B,
            "per_replicate": [r.to_dict() for r in self.replicates],
            "tuning_trace": list(self.tuning_trace),
        }


def selection_frequencies(indicators: np.ndarray) -> np.ndarray:
    """Column means of a B x p 0/1 matrix, summed in row order."""
    indicators = np.asarray(indicators, dtype=np.int64)
    counts = np.zeros(indicators.shape[1], dtype=np.int64)
    for row in indicators:
        counts += row
    return counts / indicators.shape[0]


def threshold_set(pi_hat: np.ndarray, pi_thres: float) -> list[int]:
    return [int(j) for j in np.flatnonzero(np.asarray(pi_hat) >= pi_thres)]


def _check_threshold(pi_thres: float):
    if not 0 < pi_thres <= 1:
        raise ValueError(f"pi_thres must lie in (0, 1], got {pi_thres}")


def _family_of(d: Dataset) -> Family:
    return Family.LOGISTIC if d.schema.response_kind.is_categorical else Family.LINEAR


def _select_one(g, b, seed, family, gamma, grid_size, lam):
    try:
        d = generate_replicate(g, b, seed)
        if lam is None:
            fit = select_lambda_ebic(d.X, d.y, family, grid_size, gamma)
        elif family is Family.LINEAR:
            fit = lasso_fit(d.X, d.y, lam)
        else:
            fit = logistic_lasso_fit(d.X, d.y, lam)
    except (SelectorError, ValueError, np.linalg.LinAlgError) as exc:
        raise ReplicateError(b, exc) from exc
    log.debug("replicate %d: lambda=%.4g, %d selected", b, fit.lam, len(fit.active_set))
    return ReplicateRecord(b, fit.indicators, fit.coefficients, fit.lam)


def replicate_records(g: Generator, B: int, family: Family | str, seed: int, *, gamma: float = 1.0,
                      grid_size: int = 50, lam: float | None = None,
                      workers: int = 1) -> list[ReplicateRecord]:
    if B < 1:
        raise ValueError("B must be >= 1")
    return _map_replicates(_select_one, g, B, seed, workers, Family(family), gamma, grid_size, lam)


def aggregate_records(records: Sequence[ReplicateRecord], pi_thres: float,
                      feature_names: Sequence[str] = ()) -> SelectionResult:
    _check_threshold(pi_thres)
    pi_hat = selection_frequencies(np.array([r.indicators for r in records]))
    return SelectionResult(pi_hat, float(pi_thres), threshold_set(pi_hat, pi_thres), list(records),
                           len(records), feature_names=list(feature_names))


def run_selection(g: Generator, original: Dataset, B: int = 20, pi_thres: float = 0.5,
                  family: Family | str | None = None, seed: int = 0, *, gamma: float = 1.0,
                  grid_size: int = 50, lam: float | None = None, workers: int = 1) -> SelectionResult:
    """Selection frequencies over ``B`` replicates and the thresholded active set.

    Each replicate's lambda is chosen by EBIC unless a fixed ``lam`` is given.
    """
    _check_threshold(pi_thres)
    family = _family_of(original) if family is None else Family(family)
    records = replicate_records(g, B, family, seed, gamma=gamma, grid_size=grid_size, lam=lam,
                                workers=workers)
    names = [original.schema.names[j] for j in original.schema.feature_indices]
    return aggregate_records(records, pi_thres, names)


def tune_selection(candidates: Sequence[tuple[Generator, float]], original: Dataset, B: int = 20,
                   gamma: float = 1.0, seed: int = 0, *, grid_size: int = 50,
                   lam: float | None = None, workers: int = 1):
    """Choose (generator, threshold) by EBIC of an OLS/logistic refit on ``original``.

    Replicates are computed once per distinct generator object. Ties go to the
    smaller active set, then to the larger threshold. Returns the winning
    :class:`SelectionResult` (its ``tuning_trace`` filled) and the trace.
    """
    if not candidates:
        raise TuningError("no tuning candidates given")
    family = _family_of(original)
    names = [original.schema.names[j] for j in original.schema.feature_indices]
    cache: dict[int, list[ReplicateRecord]] = {}
    trace: list[dict] = []
    best_key, best_result = None, None
    for i, (g, pi_thres) in enumerate(candidates):
        _check_threshold(pi_thres)
        if id(g) not in cache:
            cache[id(g)] = replicate_records(g, B, family, seed, gamma=gamma, grid_size=grid_size,
                                             lam=lam, workers=workers)
        result = aggregate_records(cache[id(g)], pi_thres, names)
        score = refit_ebic(original, result.active_set, gamma)
        trace.append({"candidate": i, "generator": g.describe(), "pi_thres": float(pi_thres),
                      "active_set": result.active_set, "ebic": score})
        if math.isinf(score) and score > 0:
            continue
        key = (score, len(result.active_set), -pi_thres)
        if best_key is None or key < best_key:
            best_key, best_result = key, result
    if best_result is None:
        raise TuningError("every tuning candidate is infeasible (EBIC = +inf)")
    best_result.tuning_trace = trace
    return best_result, trace


def threshold_candidates(generators: Sequence[Generator],
                         thresholds: Sequence[float] = DEFAULT_THRESHOLDS) -> list[tuple[Generator, float]]:
    return [(g, t) for g in generators for t in thresholds]


def tune_with_fid(candidates: Sequence[Generator], original: Dataset, m_samples: int,
                  seed: int = 0) -> Generator:
    """Candidate whose sample of ``m_samples`` rows has the smallest Frechet distance
    to the moments of ``original``; the first candidate wins ties."""
    if not candidates:
        raise TuningError("no tuning candidates given")
    if m_samples < 2:
        raise ValueError("m_samples must be >= 2")
    ref_mean, ref_cov = empirical_moments(original)
    best, best_fid = None, math.inf
    for g in candidates:
        sample = generate_replicate(g, 1, seed, n=m_samples)
        mean, cov = empirical_moments(sample)
        fid = frechet_distance(ref_mean, ref_cov, mean, cov)
        log.info("FID %.6g for %s", fid, g.describe())
        if best is None or fid < best_fid:
            best, best_fid = g, fid
    return best


# -- inference ----------------------------------------------------------------

@dataclass
class InferenceResult:
    t_stats: np.ndarray
    pvals_per_rep: np.ndarray
    pvals: np.ndarray
    alpha_level: float
    significant: list[int]
    feature_names: list[str] = field(default_factory=list)

    @property
    def B(self) -> int:
        return self.t_stats.shape[0]

    def to_dict(self) -> dict:
        return {
            "pvals": [float(v) for v in self.pvals],
            "alpha_level": self.alpha_level,
            "significant": list(self.significant),
            "features": list(self.feature_names),
            "B": self.B,
            "per_replicate": [
                {"b": b + 1, "t_stats": [float(v) for v in self.t_stats[b]],
                 "pvals": [float(v) for v in self.pvals_per_rep[b]]}
                for b in range(self.B)
            ],
        }


def average_pvalues(pvals_per_rep: np.ndarray) -> np.ndarray:
    pvals_per_rep = np.asarray(pvals_per_rep, dtype=np.float64)
    total = np.zeros(pvals_per_rep.shape[1])
    for row in pvals_per_rep:
        total += row
    return total / pvals_per_rep.shape[0]


def _infer_one(g, b, seed):
    d = generate_replicate(g, b, seed)
    X = np.hstack([np.ones((d.n, 1)), d.X])
    try:
        fit = ols_fit(X, d.y)
    except (RankDeficientError, ValueError) as exc:
        raise ReplicateError(b, exc) from exc
    t = fit.coefficients[1:] / fit.standard_errors[1:]
    return t, np.array([two_sided_pvalue(v) for v in t])


def run_inference(g: Generator, B: int = 20, alpha_level: float = 0.05, seed: int = 0, *,
                  workers: int = 1) -> InferenceResult:
    """Per-replicate OLS t-statistics, normal-reference p-values, averaged over replicates."""
    if B < 1:
        raise ValueError("B must be >= 1")
    if not 0 < alpha_level < 1:
        raise ValueError("alpha_level must lie in (0, 1)")
    out = _map_replicates(_infer_one, g, B, seed, workers)
    t_stats = np.array([o[0] for o in out])
    per_rep = np.array([o[1] for o in out])
    pvals = average_pvalues(per_rep)
    significant = [int(j) for j in np.flatnonzero(pvals < alpha_level)]
    return InferenceResult(t_stats, per_rep, pvals, float(alpha_level), significant)


# -- graphs ---------------------------------------------------------------------

class GraphRule(str, enum.Enum):
    OR = "or"
    AND = "and"


@dataclass
class GraphResult:
    edge_pi_hat: np.ndarray
    threshold: float
    edge_set: list[tuple[int, int]]
    B: int
    rule: GraphRule = GraphRule.OR
    node_names: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "edge_pi_hat": [[float(v) for v in row] for row in self.edge_pi_hat],
            "threshold": self.threshold,
            "edge_set": [list(e) for e in self.edge_set],
            "rule": self.rule.value,
            "nodes": list(self.node_names),
            "B": self.B,
        }


def neighborhood_adjacency(values: np.ndarray, rule: GraphRule, gamma: float = 1.0,
                           grid_size: int = 50) -> np.ndarray:
    """0/1 adjacency from EBIC-tuned lasso regressions of each column on the others."""
    n, p = values.shape
    nz = np.zeros((p, p), dtype=bool)
    for j in range(p):
        others = [k for k in range(p) if k != j]
        fit = select_lambda_ebic(values[:, others], values[:, j], Family.LINEAR, grid_size, gamma)
        nz[j, others] = fit.coefficients != 0
    adj = (nz | nz.T) if GraphRule(rule) is GraphRule.OR else (nz & nz.T)
    np.fill_diagonal(adj, False)
    return adj.astype(np.int64)


def _graph_one(g, b, seed, rule, gamma, grid_size):
    d = generate_replicate(g, b, seed)
    if d.schema.categorical_indices:
        raise ReplicateError(b, ValueError("graph selection needs all columns continuous"))
    try:
        return neighborhood_adjacency(d.values, rule, gamma, grid_size), list(d.schema.names)
    except (SelectorError, ValueError) as exc:
        raise ReplicateError(b, exc) from exc


def edge_set_from(freq: np.ndarray, pi_thres: float) -> list[tuple[int, int]]:
    p = freq.shape[0]
    return [(i, j) for i in range(p) for j in range(i + 1, p) if freq[i, j] >= pi_thres]


def run_graph_selection(g: Generator, B: int = 20, pi_thres: float = 0.5,
                        rule: GraphRule | str = GraphRule.OR, seed: int = 0, *, gamma: float = 1.0,
                        grid_size: int = 50, workers: int = 1) -> GraphResult:
    """Edge frequencies of neighbourhood selection over ``B`` replicates; every column is a node."""
    _check_threshold(pi_thres)
    if B < 1:
        raise ValueError("B must be >= 1")
    rule = GraphRule(rule)
    out = _map_replicates(_graph_one, g, B, seed, workers, rule, gamma, grid_size)
    counts = np.zeros_like(out[0][0])
    for adj, _ in out:
        counts += adj
    freq = counts / B
    names = out[0][1]
    return GraphResult(freq, float(pi_thres), edge_set_from(freq, pi_thres), B, rule, names)
