import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from synthsel.numerics import (NotPSDError, NotSymmetricError, RankDeficientError, RngStream,
                               frechet_distance, ols_fit, psd_sqrt, std_normal_cdf, sym_eigen,
                               two_sided_pvalue)


def random_psd(rng, d, rank=None):
    A = rng.normal(size=(d, rank or d))
    return A @ A.T


def test_ols_exact_fit():
    X = np.eye(4)[:, :3]
    X = np.vstack([X, [[0, 0, 0]]])
    y = X[:, 0].copy()
    fit = ols_fit(X, y)
    np.testing.assert_allclose(fit.coefficients, [1, 0, 0], atol=1e-12)
    assert fit.rss == pytest.approx(0, abs=1e-20)


def test_ols_mean_model():
    fit = ols_fit(np.ones((3, 1)), np.array([1.0, 2.0, 3.0]))
    assert fit.coefficients[0] == pytest.approx(2.0)
    assert fit.rss == pytest.approx(2.0)
    assert fit.residual_variance == pytest.approx(1.0)
    assert fit.standard_errors[0] == pytest.approx(1 / math.sqrt(3))
    assert fit.df == 2


def test_ols_rank_deficient():
    rng = np.random.default_rng(1)
    x = rng.normal(size=(10, 1))
    with pytest.raises(RankDeficientError):
        ols_fit(np.hstack([x, x]), rng.normal(size=10))


def test_ols_matches_normal_equations():
    rng = np.random.default_rng(2)
    X = rng.normal(size=(40, 4))
    y = rng.normal(size=40)
    fit = ols_fit(X, y)
    inv = np.linalg.inv(X.T @ X)
    np.testing.assert_allclose(fit.coefficients, inv @ X.T @ y, rtol=1e-10)
    np.testing.assert_allclose(fit.standard_errors, np.sqrt(fit.residual_variance * np.diag(inv)),
                               rtol=1e-10)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000))
def test_ols_orthogonality(seed):
    rng = np.random.default_rng(seed)
    n, p = rng.integers(5, 30), rng.integers(1, 5)
    X = rng.normal(size=(n, p))
    y = rng.normal(size=n)
    fit = ols_fit(X, y)
    assert np.abs(X.T @ (y - X @ fit.coefficients)).max() <= 1e-8 * max(np.abs(X.T @ y).max(), 1e-300) + 1e-12
    assert fit.rss >= 0
    assert np.all(fit.standard_errors > 0)


def test_sym_eigen_examples():
    w, V = sym_eigen(np.diag([3.0, 1.0]))
    np.testing.assert_allclose(w, [3, 1])
    np.testing.assert_allclose(np.abs(V), np.eye(2), atol=1e-12)
    w, _ = sym_eigen(np.array([[2.0, 1.0], [1.0, 2.0]]))
    np.testing.assert_allclose(w, [3, 1], atol=1e-12)


def test_sym_eigen_rejects_asymmetric():
    with pytest.raises(NotSymmetricError):
        sym_eigen(np.array([[1.0, 2.0], [0.0, 1.0]]))


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000), st.integers(1, 12))
def test_sym_eigen_reconstruction(seed, d):
    rng = np.random.default_rng(seed)
    A = rng.normal(size=(d, d))
    A = (A + A.T) / 2
    w, V = sym_eigen(A)
    assert np.all(np.diff(w) <= 0)
    scale = max(1.0, np.abs(A).sum(axis=1).max())
    assert np.abs(A @ V - V * w).max() <= 1e-8 * scale
    np.testing.assert_allclose(V.T @ V, np.eye(d), atol=1e-8)
    np.testing.assert_allclose((V * w) @ V.T, A, atol=1e-8)


def test_psd_sqrt_examples():
    np.testing.assert_allclose(psd_sqrt(np.eye(3)), np.eye(3), atol=1e-14)
    np.testing.assert_allclose(psd_sqrt(np.diag([4.0, 9.0])), np.diag([2.0, 3.0]), atol=1e-14)


def test_psd_sqrt_rejects_negative():
    with pytest.raises(NotPSDError):
        psd_sqrt(np.diag([1.0, -0.1]))
    # tiny negative eigenvalues are clipped
    psd_sqrt(np.diag([1.0, -1e-10]))


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000), st.integers(1, 8))
def test_psd_sqrt_squares_back(seed, d):
    rng = np.random.default_rng(seed)
    A = random_psd(rng, d, rank=rng.integers(1, d + 1))
    A /= max(1.0, np.abs(A).max())
    R = psd_sqrt(A)
    np.testing.assert_allclose(R, R.T, atol=1e-12)
    assert np.linalg.eigvalsh(R).min() >= -1e-8
    np.testing.assert_allclose(R @ R, A, atol=1e-7)
    # square root of the fourth power comes back to the square; shifted to full
    # rank because fourth roots of rounding-level eigenvalues are not small
    B = A + np.eye(d)
    np.testing.assert_allclose(psd_sqrt(psd_sqrt(B @ B @ B @ B)), B, atol=1e-8)


def test_frechet_examples():
    m, C = np.array([0.3, -1.0]), np.array([[2.0, 0.4], [0.4, 1.0]])
    assert frechet_distance(m, C, m, C) == pytest.approx(0, abs=1e-12)
    assert frechet_distance([0.0], [[1.0]], [1.0], [[4.0]]) == pytest.approx(2.0, abs=1e-12)


def test_frechet_dimension_mismatch():
    with pytest.raises(ValueError):
        frechet_distance([0.0, 0.0], np.eye(2), [0.0], np.eye(1))
    with pytest.raises(NotPSDError):
        frechet_distance([0.0], [[-1.0]], [0.0], [[1.0]])


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000), st.integers(1, 6))
def test_frechet_symmetric_and_zero_iff_equal(seed, d):
    rng = np.random.default_rng(seed)
    m1, m2 = rng.normal(size=d), rng.normal(size=d)
    C1, C2 = random_psd(rng, d), random_psd(rng, d)
    a = frechet_distance(m1, C1, m2, C2)
    assert a == pytest.approx(frechet_distance(m2, C2, m1, C1), abs=1e-6)
    assert a > 1e-6
    assert frechet_distance(m1, C1, m1, C1) <= 1e-6


def test_frechet_commuting_closed_form():
    # diagonal covariances: sum (sqrt(a) - sqrt(b))^2
    a, b = np.array([1.0, 4.0, 9.0]), np.array([4.0, 1.0, 9.0])
    expected = np.sum((np.sqrt(a) - np.sqrt(b)) ** 2)
    assert frechet_distance(np.zeros(3), np.diag(a), np.zeros(3), np.diag(b)) == pytest.approx(expected)


def test_normal_cdf_values():
    assert std_normal_cdf(0.0) == 0.5
    assert std_normal_cdf(1.959964) == pytest.approx(0.975, abs=1e-6)
    assert std_normal_cdf(2.0) + std_normal_cdf(-2.0) == pytest.approx(1.0, abs=1e-12)
    # reference value Phi(1) = 0.8413447460685429
    assert std_normal_cdf(1.0) == pytest.approx(0.8413447460685429, abs=1e-7)
    assert std_normal_cdf(40.0) == 1.0 and std_normal_cdf(-40.0) == 0.0


@settings(max_examples=100, deadline=None)
@given(st.floats(-30, 30), st.floats(-30, 30))
def test_normal_cdf_monotone_symmetric(a, b):
    lo, hi = min(a, b), max(a, b)
    assert std_normal_cdf(lo) <= std_normal_cdf(hi)
    assert std_normal_cdf(-a) == pytest.approx(1 - std_normal_cdf(a), abs=1e-12)


def test_two_sided_pvalue():
    assert two_sided_pvalue(0.0) == 1.0
    assert two_sided_pvalue(1.959964) == pytest.approx(0.05, abs=1e-4)


def test_rng_stream_reproducible_and_independent():
    a = RngStream(123, 1).generator().standard_normal(10_000)
    b = RngStream(123, 1).generator().standard_normal(10_000)
    c = RngStream(123, 2).generator().standard_normal(10_000)
    np.testing.assert_array_equal(a, b)
    assert abs(np.corrcoef(a, c)[0, 1]) < 0.05


def test_rng_stream_range():
    with pytest.raises(ValueError):
        RngStream(-1)
    with pytest.raises(ValueError):
        RngStream(0, 2**64)
