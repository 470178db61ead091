"""Dense linear algebra and statistical kernels shared by the other modules."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.linalg import solve_triangular


class RankDeficientError(np.linalg.LinAlgError):
    pass


class NotSymmetricError(ValueError):
    pass


class NotPSDError(ValueError):
    pass


@dataclass(frozen=True)
class RngStream:
    """Reproducible random stream keyed by ``(seed, stream_id)``.

    Streams are derived with :class:`numpy.random.SeedSequence` spawn keys,
    so distinct stream ids give independent PCG64 generators.
    """

    seed: int
    stream_id: int = 0

    def __post_init__(self):
        for name in ("seed", "stream_id"):
            v = getattr(self, name)
            if not 0 <= int(v) < 2**64:
                raise ValueError(f"{name} must be an unsigned 64-bit integer, got {v}")

    def generator(self) -> np.random.Generator:
        ss = np.random.SeedSequence(int(self.seed), spawn_key=(int(self.stream_id),))
        return np.random.Generator(np.random.PCG64(ss))



@dataclass(frozen=True)
class OlsFit:
    coefficients: np.ndarray
    standard_errors: np.ndarray
    residual_variance: float
    rss: float
    df: int


def ols_fit(X, y) -> OlsFit:
    """Least squares by Householder QR; standard errors from ``R^{-1}``."""
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if X.ndim != 2 or y.shape != (X.shape[0],):
        raise ValueError("X must be n x p and y length n")
    n, p = X.shape
    if p < 1 or n <= p:
        raise ValueError(f"OLS needs n > p >= 1, got n={n}, p={p}")
    Q, R = np.linalg.qr(X, mode="reduced")
    diag = np.abs(np.diag(R))
    if diag.min() < 1e-10 * diag.max():
        raise RankDeficientError("design matrix is rank deficient")
    beta = _solve_upper(R, Q.T @ y)
    resid = y - X @ beta
    rss = float(resid @ resid)
    df = n - p
    sigma2 = rss / df
    Rinv = _solve_upper(R, np.eye(p))
    # diag((X'X)^-1) = row norms of R^-1
    se = np.sqrt(sigma2 * np.sum(Rinv**2, axis=1))
    return OlsFit(beta, se, sigma2, rss, df)


def _solve_upper(R, b):
    return solve_triangular(R, b, lower=False)


def sym_eigen(A, tol: float = 1e-10) -> tuple[np.ndarray, np.ndarray]:
    """Eigenvalues in descending order and orthonormal eigenvectors (columns)."""
    A = np.asarray(A, dtype=np.float64)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ValueError("matrix must be square")
    scale = max(1.0, float(np.abs(A).max(initial=0.0)))
    if np.abs(A - A.T).max(initial=0.0) > tol * scale:
        raise NotSymmetricError("matrix is not symmetric")
    w, V = np.linalg.eigh((A + A.T) / 2)
    return w[::-1].copy(), V[:, ::-1].copy()


def psd_sqrt(A, neg_tol: float = 1e-8) -> np.ndarray:
    w, V = sym_eigen(A)
    if w.size and w.min() < -neg_tol:
        raise NotPSDError(f"matrix has eigenvalue {w.min():.3g} < -{neg_tol}")
    R = (V * np.sqrt(np.clip(w, 0.0, None))) @ V.T
    return (R + R.T) / 2


def frechet_distance(m1, C1, m2, C2) -> float:
    """Frechet distance between Gaussians N(m1, C1) and N(m2, C2).

    ``|m1 - m2|^2 + tr(C1 + C2 - 2 (C1^1/2 C2 C1^1/2)^1/2)``; the symmetric
    inner product keeps every square root on a PSD matrix.
    """
    m1, m2 = np.atleast_1d(np.asarray(m1, float)), np.atleast_1d(np.asarray(m2, float))
    C1, C2 = np.atleast_2d(np.asarray(C1, float)), np.atleast_2d(np.asarray(C2, float))
    d = m1.shape[0]
    if m2.shape != (d,) or C1.shape != (d, d) or C2.shape != (d, d):
        raise ValueError("dimension mismatch between means and covariances")
    s1 = psd_sqrt(C1)
    psd_sqrt(C2)  # validates C2
    inner = s1 @ C2 @ s1
    cross = psd_sqrt((inner + inner.T) / 2)
    diff = m1 - m2
    value = float(diff @ diff + np.trace(C1) + np.trace(C2) - 2.0 * np.trace(cross))
    return max(value, 0.0)


def std_normal_cdf(t: float) -> float:
    if math.isnan(t):
        raise ValueError("t is NaN")
    return 0.5 * math.erfc(-t / math.sqrt(2.0))


def two_sided_pvalue(t: float) -> float:
    c = std_normal_cdf(t)
    return 2.0 * min(c, 1.0 - c)


def derive_seed(seed: int, *keys: int) -> int:
    """Deterministic 64-bit seed for a labelled sub-task (trial, method, ...)."""
    ss = np.random.SeedSequence(int(seed), spawn_key=tuple(int(k) for k in keys))
    return int(ss.generate_state(1, np.uint64)[0])
