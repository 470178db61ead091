"""L1 selectors: lasso and logistic lasso by coordinate descent, EBIC tuning, OLS refits."""

from __future__ import annotations

import enum
import logging
import math
from dataclasses import dataclass, field

import numpy as np
from numba import njit

from .data import Dataset
from .numerics import RankDeficientError, ols_fit

log = logging.getLogger(__name__)

TOL = 1e-8
MAX_SWEEPS = 100_000
SEPARATION_BOUND = 50.0


class Family(str, enum.Enum):
    LINEAR = "linear"
    LOGISTIC = "logistic"


class SelectorError(ValueError):
    pass


@dataclass
class LassoFit:
    lam: float
    coefficients: np.ndarray
    intercept: float
    iterations: int
    converged: bool
    separated: bool = False
    objective: float = float("nan")
    loss: float = float("nan")  # RSS (linear) or deviance (logistic) on the fitted data
    ebic: float = float("nan")
    theta_std: np.ndarray | None = field(default=None, repr=False, compare=False)

    @property
    def active_set(self) -> list[int]:
        return [int(j) for j in np.flatnonzero(self.coefficients)]

    @property
    def indicators(self) -> np.ndarray:
        return (self.coefficients != 0).astype(np.int64)


@dataclass
class LambdaPath:
    lambdas: np.ndarray
    fits: list[LassoFit] = field(default_factory=list)


@njit(cache=True)
def _cd_quadratic(H, g, pen, theta, lam, tol, max_sweeps):
    """Cyclic coordinate descent on 0.5 t'Ht - g't + lam * sum(pen_j |t_j|).

    ``theta`` is updated in place. Coordinates with H_jj == 0 stay at zero.
    Returns (sweeps, converged).
    """
    p = g.shape[0]
    grad = g - H @ theta
    for sweep in range(1, max_sweeps + 1):
        max_delta = 0.0
        for j in range(p):
            hjj = H[j, j]
            if hjj <= 0.0:
                continue
            old = theta[j]
            z = grad[j] + hjj * old
            thr = lam * pen[j]
            if z > thr:
                new = (z - thr) / hjj
            elif z < -thr:
                new = (z + thr) / hjj
            else:
                new = 0.0
            if new != old:
                delta = new - old
                for k in range(p):
                    grad[k] -= delta * H[k, j]
                theta[j] = new
                if abs(delta) > max_delta:
                    max_delta = abs(delta)
        if max_delta < tol:
            return sweep, True
    return max_sweeps, False


def _check_finite(*arrays):
    for a in arrays:
        if not np.all(np.isfinite(a)):
            raise SelectorError("inputs contain non-finite values")


def _standardize_columns(X):
    mean = X.mean(axis=0)
    sd = X.std(axis=0)
    safe = np.where(sd > 0, sd, 1.0)
    Z = (X - mean) / safe
    Z[:, sd == 0] = 0.0
    return Z, mean, sd


class _LinearProblem:
    """Centered/scaled least-squares problem with a cached Gram matrix."""

    def __init__(self, X, y):
        X = np.asarray(X, dtype=np.float64)
        y = np.asarray(y, dtype=np.float64)
        if X.ndim != 2 or y.shape != (X.shape[0],):
            raise SelectorError("X must be n x p and y length n")
        if X.shape[0] < 2:
            raise SelectorError("need n >= 2")
        _check_finite(X, y)
        self.X, self.y = X, y
        self.n = X.shape[0]
        self.Z, self.xmean, self.xsd = _standardize_columns(X)
        self.ymean = y.mean()
        yc = y - self.ymean
        self.G = self.Z.T @ self.Z / self.n
        self.c = self.Z.T @ yc / self.n
        self.pen = np.ones(X.shape[1])

    @property
    def lambda_max(self) -> float:
        return float(np.abs(self.c).max(initial=0.0))

    def fit(self, lam, theta0=None) -> LassoFit:
        if not lam >= 0:
            raise SelectorError(f"lambda must be >= 0, got {lam}")
        theta = np.zeros(self.G.shape[0]) if theta0 is None else np.array(theta0, dtype=np.float64)
        sweeps, ok = _cd_quadratic(self.G, self.c, self.pen, theta, float(lam), TOL, MAX_SWEEPS)
        if not ok:
            log.warning("lasso did not converge at lambda=%g", lam)
        beta = np.where(self.xsd > 0, theta / np.where(self.xsd > 0, self.xsd, 1.0), 0.0)
        intercept = float(self.ymean - self.xmean @ beta)
        resid = self.y - intercept - self.X @ beta
        rss = float(resid @ resid)
        obj = rss / (2 * self.n) + lam * float(np.abs(theta).sum())
        return LassoFit(float(lam), beta, intercept, int(sweeps), bool(ok), objective=obj,
                        loss=rss, theta_std=theta)


def lasso_fit(X, y, lam: float, warm_start=None) -> LassoFit:
    """Lasso minimizing (1/2n)|y - b0 - X b|^2 + lam |b|_1 on internally standardized columns.

    Coefficients are reported on the original scale of ``X``; ``lam`` refers to
    the standardized problem. ``warm_start`` takes original-scale coefficients.
    """
    prob = _LinearProblem(X, y)
    theta0 = None
    if warm_start is not None:
        theta0 = np.asarray(warm_start, dtype=np.float64) * prob.xsd
    return prob.fit(lam, theta0)


def lasso_objective(X, y, beta, intercept, lam) -> float:
    """Objective of the standardized problem evaluated at original-scale coefficients."""
    Z, _, sd = _standardize_columns(np.asarray(X, float))
    resid = y - intercept - X @ beta
    return float(resid @ resid) / (2 * len(y)) + lam * float(np.abs(beta * sd).sum())


def kkt_violation(X, y, fit: LassoFit) -> float:
    """Largest violation of the lasso optimality conditions on the standardized scale.

    Zero coefficients need |score_j| <= lam; nonzero ones need
    score_j = lam * sign(theta_j). Returns the worst absolute excess.
    """
    X = np.asarray(X, float)
    Z, _, sd = _standardize_columns(X)
    resid = y - fit.intercept - X @ fit.coefficients
    score = Z.T @ resid / len(y)
    worst = 0.0
    for j in range(X.shape[1]):
        if sd[j] == 0:
            continue
        b = fit.coefficients[j]
        if b == 0:
            worst = max(worst, abs(score[j]) - fit.lam)
        else:
            worst = max(worst, abs(score[j] - fit.lam * math.copysign(1.0, b)))
    return max(worst, 0.0)


def _sigmoid(eta):
    out = np.empty_like(eta)
    pos = eta >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-eta[pos]))
    e = np.exp(eta[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def _logistic_loss(eta, y):
    # mean of log(1 + exp(eta)) - y * eta, computed stably
    return float(np.mean(np.logaddexp(0.0, eta) - y * eta))


class _LogisticProblem:
    def __init__(self, X, y):
        X = np.asarray(X, dtype=np.float64)
        y = np.asarray(y, dtype=np.float64)
        if X.ndim != 2 or y.shape != (X.shape[0],):
            raise SelectorError("X must be n x p and y length n")
        _check_finite(X, y)
        if not np.all((y == 0) | (y == 1)):
            raise SelectorError("logistic response must be binary 0/1")
        if y.min() == y.max():
            raise SelectorError("logistic response has a single class")
        self.X, self.y = X, y
        self.n, self.p = X.shape
        Z, self.xmean, self.xsd = _standardize_columns(X)
        # leading column of ones carries the unpenalized intercept
        self.A = np.hstack([np.ones((self.n, 1)), Z])
        self.pen = np.concatenate([[0.0], np.ones(self.p)])
        self.pen[1:][self.xsd == 0] = 0.0

    @property
    def lambda_max(self) -> float:
        Z = self.A[:, 1:]
        return float(np.abs(Z.T @ (self.y - self.y.mean())).max(initial=0.0) / self.n)

    def _kkt(self, theta, lam):
        score = self.A.T @ (self.y - _sigmoid(self.A @ theta)) / self.n
        worst = abs(score[0])
        for j in range(1, self.p + 1):
            if self.pen[j] == 0:
                worst = max(worst, abs(score[j]))
            elif theta[j] == 0:
                worst = max(worst, abs(score[j]) - lam)
            else:
                worst = max(worst, abs(score[j] - lam * math.copysign(1.0, theta[j])))
        return worst

    def objective(self, theta, lam):
        return _logistic_loss(self.A @ theta, self.y) + lam * float(np.abs(theta[1:]).sum())

    def fit(self, lam, theta0=None, max_outer=200) -> LassoFit:
        if not lam >= 0:
            raise SelectorError(f"lambda must be >= 0, got {lam}")
        if theta0 is None:
            ybar = self.y.mean()
            theta = np.zeros(self.p + 1)
            theta[0] = math.log(ybar / (1 - ybar))
        else:
            theta = np.array(theta0, dtype=np.float64)
        obj = self.objective(theta, lam)
        converged = separated = False
        total_sweeps = 0
        for _ in range(max_outer):
            prob = _sigmoid(self.A @ theta)
            w = np.maximum(prob * (1 - prob), 1e-10)
            H = (self.A * w[:, None]).T @ self.A / self.n
            # quadratic model of the loss around theta
            g = H @ theta + self.A.T @ (self.y - prob) / self.n
            cand = theta.copy()
            sweeps, _ = _cd_quadratic(H, g, self.pen, cand, float(lam), 1e-12, MAX_SWEEPS)
            total_sweeps += sweeps
            direction = cand - theta
            step, new_theta, new_obj = 1.0, cand, self.objective(cand, lam)
            while new_obj > obj and step > 1e-10:
                step *= 0.5
                new_theta = theta + step * direction
                new_obj = self.objective(new_theta, lam)
            if new_obj > obj:
                converged = True
                break
            change = float(np.abs(new_theta - theta).max())
            theta, obj = new_theta, new_obj
            if np.abs(theta[1:]).max(initial=0.0) > SEPARATION_BOUND:
                separated = True
                break
            if change < 1e-10 or self._kkt(theta, lam) < 1e-9:
                converged = True
                break
        fitted = _sigmoid(self.A @ theta)
        # perfectly fitted labels also count as separation
        if separated or np.abs(fitted - self.y).max() < 1e-6:
            separated = True
            log.warning("logistic lasso: separation detected at lambda=%g", lam)
        beta = np.where(self.xsd > 0, theta[1:] / np.where(self.xsd > 0, self.xsd, 1.0), 0.0)
        beta[theta[1:] == 0] = 0.0
        intercept = float(theta[0] - self.xmean @ beta)
        eta = intercept + self.X @ beta
        deviance = 2.0 * self.n * _logistic_loss(eta, self.y)
        return LassoFit(float(lam), beta, intercept, total_sweeps, converged, separated,
                        objective=self.objective(theta, lam), loss=deviance, theta_std=theta)


def logistic_lasso_fit(X, y, lam: float, warm_start=None) -> LassoFit:
    """L1-penalized logistic regression, (1/n) sum logloss + lam |b|_1, by proximal Newton.

    ``separated`` is set when a standardized coefficient exceeds 50 in magnitude
    or the fit reproduces every label.
    """
    prob = _LogisticProblem(X, y)
    theta0 = None
    if warm_start is not None:
        beta = np.asarray(warm_start, dtype=np.float64)
        theta0 = np.concatenate([[0.0], beta * prob.xsd])
    return prob.fit(lam, theta0)


def logistic_kkt_violation(X, y, fit: LassoFit) -> float:
    X = np.asarray(X, float)
    Z, _, sd = _standardize_columns(X)
    prob = _sigmoid(fit.intercept + X @ fit.coefficients)
    score = Z.T @ (y - prob) / len(y)
    worst = abs(float(np.mean(y - prob)))
    for j in range(X.shape[1]):
        if sd[j] == 0:
            continue
        b = fit.coefficients[j]
        if b == 0:
            worst = max(worst, abs(score[j]) - fit.lam)
        else:
            worst = max(worst, abs(score[j] - fit.lam * math.copysign(1.0, b)))
    return max(worst, 0.0)


def ebic(loss: float, n: int, k: int, p: int, gamma: float = 1.0, family: Family = Family.LINEAR) -> float:
    """Extended BIC.

    Linear: ``n log(RSS/n) + k log n + 2 gamma k log p``.
    Logistic: ``deviance + k log n + 2 gamma k log p``.
    """
    if not n > k >= 0:
        raise SelectorError(f"EBIC needs n > k >= 0, got n={n}, k={k}")
    if p < 1:
        raise SelectorError("p must be >= 1")
    penalty = k * math.log(n) + 2.0 * gamma * k * math.log(p)
    if Family(family) is Family.LOGISTIC:
        return loss + penalty
    if loss <= 0:
        log.warning("EBIC: non-positive RSS (perfect fit); returning -inf")
        return -math.inf
    return n * math.log(loss / n) + penalty


def lambda_grid(lam_max: float, grid_size: int, ratio: float = 0.01) -> np.ndarray:
    if grid_size < 2:
        raise SelectorError("grid_size must be >= 2")
    if lam_max <= 0:
        return np.zeros(grid_size)
    return np.geomspace(lam_max, ratio * lam_max, grid_size)


def lasso_path(X, y, family: Family = Family.LINEAR, grid_size: int = 50) -> LambdaPath:
    prob = _LinearProblem(X, y) if Family(family) is Family.LINEAR else _LogisticProblem(X, y)
    lambdas = lambda_grid(prob.lambda_max, grid_size)
    path = LambdaPath(lambdas)
    theta = None
    for lam in lambdas:
        fit = prob.fit(lam, theta)
        theta = fit.theta_std
        path.fits.append(fit)
    return path


def select_lambda_ebic(X, y, family: Family = Family.LINEAR, grid_size: int = 50,
                       gamma: float = 1.0, loss: str = "lasso") -> LassoFit:
    """Warm-started path from lambda_max to 0.01 lambda_max; the EBIC minimizer wins.

    ``loss="lasso"`` scores each fit by its own RSS (or deviance). ``loss="refit"``
    scores each distinct support by its unpenalized refit instead, which removes
    the shrinkage bias that pulls the lasso-loss criterion toward smaller lambda.
    Ties go to the larger lambda.
    """
    if loss not in ("lasso", "refit"):
        raise SelectorError(f"unknown EBIC loss {loss!r}; expected 'lasso' or 'refit'")
    X = np.asarray(X, float)
    y = np.asarray(y, float)
    n, p = X.shape
    path = lasso_path(X, y, family, grid_size)
    refits: dict[tuple[int, ...], float] = {}
    best, best_score = None, math.inf
    for fit in path.fits:
        S = tuple(fit.active_set)
        if loss == "refit":
            if S not in refits:
                refits[S] = _refit_loss(X, y, S, family)
            value = refits[S]
        else:
            value = fit.loss if len(S) < n else math.inf
        score = ebic(value, n, len(S), max(p, 1), gamma, family) if math.isfinite(value) else math.inf
        if best is None or score < best_score:
            best, best_score = fit, score
    best.ebic = best_score
    return best


def _refit_loss(X, y, S, family: Family) -> float:
    """RSS or deviance of the unpenalized refit on columns ``S``; inf if infeasible."""
    n = X.shape[0]
    k = len(S)
    if k + 1 >= n:
        return math.inf
    if family is Family.LINEAR:
        if k == 0:
            return float(np.sum((y - y.mean()) ** 2))
        try:
            return ols_fit(np.hstack([np.ones((n, 1)), X[:, list(S)]]), y).rss
        except RankDeficientError:
            return math.inf
    if k == 0:
        ybar = y.mean()
        eta = np.full(n, math.log(ybar / (1 - ybar)))
        return 2.0 * n * _logistic_loss(eta, y)
    fit = logistic_lasso_fit(X[:, list(S)], y, 0.0)
    return math.inf if fit.separated else fit.loss


def _feature_matrix(d: Dataset) -> tuple[np.ndarray, np.ndarray, Family]:
    family = Family.LOGISTIC if d.schema.response_kind.is_categorical else Family.LINEAR
    return d.X, d.y, family


def refit_ebic(original: Dataset, S_hat, gamma: float = 1.0) -> float:
    """EBIC of an unpenalized refit (OLS or logistic) on ``original`` restricted to ``S_hat``.

    The intercept is always fitted and not counted in ``k``. Returns ``+inf``
    when the refit is infeasible (too many variables or a singular design).
    """
    X, y, family = _feature_matrix(original)
    n, p = X.shape
    S = tuple(sorted(int(j) for j in S_hat))
    loss = _refit_loss(X, y, S, family)
    if not math.isfinite(loss):
        return math.inf
    return ebic(loss, n, len(S), p, gamma, family)
