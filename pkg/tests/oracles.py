"""Slow reference solvers used only as test oracles."""

import numpy as np


def standardized(X):
    sd = X.std(axis=0)
    return (X - X.mean(axis=0)) / np.where(sd > 0, sd, 1.0)


def lasso_objective_full(Z, y, b0, theta, lam):
    r = y - b0 - Z @ theta
    return r @ r / (2 * len(y)) + lam * np.abs(theta).sum()


def projected_gradient_lasso(X, y, lam, iters=200_000, tol=1e-15):
    """Lasso via the split theta = u - v, (u, v) >= 0, with a free intercept.

    Accelerated projected gradient on the smooth bound-constrained problem;
    nothing here shares code with the coordinate-descent solver.
    """
    Z = standardized(np.asarray(X, float))
    n, p = Z.shape
    A = np.hstack([np.ones((n, 1)), Z, -Z])
    pen = np.concatenate([[0.0], np.full(2 * p, lam)])
    L = np.linalg.eigvalsh(A.T @ A / n).max()
    w = np.zeros(2 * p + 1)
    z, t = w.copy(), 1.0

    def proj(v):
        v = v.copy()
        v[1:] = np.maximum(v[1:], 0.0)
        return v

    def f(v):
        r = y - A @ v
        return r @ r / (2 * n) + pen @ v

    prev = f(w)
    for k in range(iters):
        grad = -A.T @ (y - A @ z) / n + pen
        w_new = proj(z - grad / L)
        t_new = (1 + np.sqrt(1 + 4 * t * t)) / 2
        z = w_new + (t - 1) / t_new * (w_new - w)
        if f(w_new) > f(w):  # adaptive restart
            z, t_new = w_new.copy(), 1.0
        w, t = w_new, t_new
        if k % 200 == 0:
            cur = f(w)
            if abs(prev - cur) < tol and k > 0:
                break
            prev = cur
    theta = w[1:p + 1] - w[p + 1:]
    return lasso_objective_full(Z, y, w[0], theta, lam)


def logistic_objective(Z, y, b0, theta, lam):
    eta = b0 + Z @ theta
    return np.mean(np.logaddexp(0.0, eta) - y * eta) + lam * np.abs(theta).sum()


def grid_search_logistic(X, y, lam, span=4.0, points=11):
    """Coarse lattice over (intercept, coefficients) then compass search to 1e-10 step."""
    Z = standardized(np.asarray(X, float))
    p = Z.shape[1]
    axes = [np.linspace(-span, span, points)] * (p + 1)
    grid = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, p + 1)
    eta = grid[:, :1] + grid[:, 1:] @ Z.T
    vals = np.mean(np.logaddexp(0.0, eta) - y * eta, axis=1) + lam * np.abs(grid[:, 1:]).sum(axis=1)
    x = grid[np.argmin(vals)].copy()

    def f(v):
        return logistic_objective(Z, y, v[0], v[1:], lam)

    fx, step = f(x), span / (points - 1)
    while step > 1e-10:
        improved = False
        for j in range(p + 1):
            for sgn in (1.0, -1.0):
                cand = x.copy()
                cand[j] += sgn * step
                # land exactly on the kink when crossing zero
                if j > 0 and x[j] != 0 and np.sign(cand[j]) != np.sign(x[j]):
                    cand[j] = 0.0
                fc = f(cand)
                if fc < fx:
                    x, fx, improved = cand, fc, True
        if not improved:
            step /= 2
    return fx
