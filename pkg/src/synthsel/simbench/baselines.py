"""Comparators: EBIC-tuned lasso on the raw data and complementary pairs stability selection."""

from __future__ import annotations

import math

import numpy as np

from ..data import Dataset
from ..numerics import RngStream
from ..selectors import Family, SelectorError, lasso_path, select_lambda_ebic


def raw_lasso(d: Dataset, family: Family | str | None = None, gamma: float = 1.0,
              grid_size: int = 50) -> list[int]:
    if family is None:
        family = Family.LOGISTIC if d.schema.response_kind.is_categorical else Family.LINEAR
    return select_lambda_ebic(d.X, d.y, family, grid_size, gamma).active_set


def default_q_keep(p: int) -> int:
    return max(1, math.ceil(math.sqrt(0.8 * p)))


def first_to_enter(X, y, q_keep: int, family: Family | str = Family.LINEAR,
                   grid_size: int = 100) -> list[int]:
    """The ``q_keep`` variables entering a lasso path first.

    Variables are ordered by the largest lambda at which they are nonzero,
    ties by coefficient magnitude there, then by index. Variables never
    entering the path rank last, by absolute correlation with the response.
    """
    X = np.asarray(X, float)
    p = X.shape[1]
    path = lasso_path(X, y, family, grid_size)
    entry = np.full(p, len(path.fits), dtype=np.int64)
    size_at_entry = np.zeros(p)
    for step, fit in enumerate(path.fits):
        newly = (fit.coefficients != 0) & (entry == len(path.fits))
        entry[newly] = step
        size_at_entry[newly] = np.abs(fit.theta_std[-p:][newly])
    sd = X.std(axis=0)
    corr = np.abs((X - X.mean(0)).T @ (y - np.mean(y))) / np.where(sd > 0, sd, 1.0)
    order = sorted(range(p), key=lambda j: (entry[j], -size_at_entry[j], -corr[j], j))
    return sorted(order[:q_keep])


def cpss_baseline(d: Dataset, B_pairs: int = 50, q_keep: int | None = None, tau: float = 0.6,
                  family: Family | str | None = None, rng: RngStream | None = None,
                  return_frequencies: bool = False):
    """Complementary pairs stability selection.

    Every draw splits the rows into two disjoint halves that together cover
    all rows; each half keeps its first ``q_keep`` path entrants. Returns the
    variables whose frequency over the ``2 * B_pairs`` halves reaches ``tau``.
    """
    if d.n < 4:
        raise SelectorError("CPSS needs at least 4 rows")
    if B_pairs < 1:
        raise ValueError("B_pairs must be >= 1")
    if not 0.5 < tau <= 1:
        raise ValueError("tau must lie in (0.5, 1]")
    p = d.p
    q_keep = default_q_keep(p) if q_keep is None else int(q_keep)
    if q_keep < 1:
        raise ValueError("q_keep must be >= 1")
    if family is None:
        family = Family.LOGISTIC if d.schema.response_kind.is_categorical else Family.LINEAR
    gen = (rng or RngStream(0)).generator()
    X, y = d.X, d.y
    counts = np.zeros(p, dtype=np.int64)
    half = d.n // 2
    for _ in range(B_pairs):
        perm = gen.permutation(d.n)
        for rows in (perm[:half], perm[half:]):
            counts[first_to_enter(X[rows], y[rows], q_keep, family)] += 1
    freq = counts / (2 * B_pairs)
    selected = [int(j) for j in np.flatnonzero(freq >= tau)]
    return (selected, freq) if return_frequencies else selected
