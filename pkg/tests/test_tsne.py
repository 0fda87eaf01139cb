"""Exact t-SNE: calibration, affinities, KL cost, gradient, descent.

High-precision oracles are built with mpmath so the float implementation is
checked against arbitrary-precision arithmetic rather than against itself.
"""

import math

import mpmath as mp
import numpy as np
import pytest

from plantsne import AffinityMatrix, InputError, TsneConfig, affinities, embed
from plantsne.tsne import (conditional_matrix, conditional_p, joint_p,
                           kl_divergence, kl_gradient, low_dim_q, search_sigma)

mp.mp.dps = 60


# ---------------------------------------------------------------------------
# Oracles

def mp_conditional(distances, sigma):
    """Arbitrary-precision Gaussian conditional probabilities."""
    s2 = 2 * mp.mpf(float(sigma)) ** 2
    vals = [mp.e ** (-mp.mpf(float(d)) ** 2 / s2) for d in distances]
    total = mp.fsum(vals)
    return np.array([float(v / total) for v in vals])


def mp_log2_perplexity(distances, sigma):
    """log2 of 2^H computed in arbitrary precision."""
    s2 = 2 * mp.mpf(float(sigma)) ** 2
    vals = [mp.e ** (-mp.mpf(float(d)) ** 2 / s2) for d in distances]
    total = mp.fsum(vals)
    h = -mp.fsum(v / total * mp.log(v / total, 2) for v in vals)
    return float(h)


def mp_kl(p, q):
    terms = [mp.mpf(float(pv)) * mp.log(mp.mpf(float(pv)) / mp.mpf(float(qv)))
             for pv, qv in zip(p.ravel(), q.ravel()) if pv > 0]
    return float(mp.fsum(terms))


def fd_gradient(p, y, h=1e-6):
    """Central finite differences of the KL cost in the map coordinates."""
    g = np.zeros_like(y)
    for i in range(y.shape[0]):
        for j in range(y.shape[1]):
            up = y.copy()
            up[i, j] += h
            down = y.copy()
            down[i, j] -= h
            g[i, j] = (kl_divergence(p, low_dim_q(up)[0])
                       - kl_divergence(p, low_dim_q(down)[0])) / (2 * h)
    return g


# ---------------------------------------------------------------------------
# Conditional distributions and bandwidth search

def test_conditional_p_matches_mpmath():
    rng = np.random.default_rng(0)
    for _ in range(20):
        d = rng.uniform(0.1, 5.0, size=9)
        sigma = float(np.exp(rng.uniform(-3, 3)))
        got = conditional_p(d, sigma)
        np.testing.assert_allclose(got, mp_conditional(d, sigma),
                                   rtol=0, atol=1e-14)
        assert abs(got.sum() - 1.0) < 1e-12


def test_conditional_p_survives_tiny_sigma():
    # Without the max-shift this would be 0/0.
    got = conditional_p(np.array([1.0, 2.0]), 0.01)
    np.testing.assert_allclose(got, [1.0, 0.0], atol=1e-300)


def test_conditional_p_input_checks():
    with pytest.raises(InputError):
        conditional_p(np.array([]), 1.0)
    with pytest.raises(InputError):
        conditional_p(np.array([1.0]), 0.0)


def test_search_sigma_hits_target_per_mpmath():
    rng = np.random.default_rng(1)
    for _ in range(25):
        n = int(rng.integers(6, 40))
        d = rng.uniform(0.05, 10.0, size=n)
        target = float(rng.uniform(1.5, n * 0.8))
        found = search_sigma(d, target)
        assert found.residual <= 1e-5
        achieved = mp_log2_perplexity(d, found.sigma)
        assert abs(achieved - math.log2(target)) <= 2e-5


def test_search_sigma_degenerate_all_zero():
    found = search_sigma(np.zeros(8), 4.0)
    assert found.degenerate
    assert found.residual == pytest.approx(math.log2(8) - math.log2(4))


def test_search_sigma_unattainable_target():
    # Equidistant neighbors make the distribution uniform for every sigma,
    # so any target below n is unreachable and the residual reports the gap.
    found = search_sigma(np.ones(8), 4.0)
    assert not found.degenerate
    assert found.residual == pytest.approx(math.log2(8) - math.log2(4), abs=1e-9)


def test_search_sigma_target_range_checked():
    with pytest.raises(InputError):
        search_sigma(np.ones(5), 0.5)
    with pytest.raises(InputError):
        search_sigma(np.ones(5), 6.0)


# ---------------------------------------------------------------------------
# Joint affinities

def test_conditional_matrix_requires_small_perplexity():
    pts = np.random.default_rng(2).normal(size=(10, 3))
    with pytest.raises(InputError):
        conditional_matrix(pts, 9.0)


def test_joint_p_symmetrizes():
    pts = np.random.default_rng(3).normal(size=(12, 3))
    cond, sigmas = conditional_matrix(pts, 5.0)
    aff = joint_p(cond, sigmas)
    p = aff.p
    np.testing.assert_allclose(p, p.T, rtol=0, atol=0)
    assert np.all(np.diag(p) == 0)
    assert abs(p.sum() - 1.0) <= 1e-9


def test_joint_p_rejects_unnormalized_rows():
    bad = np.array([[0.0, 0.7], [0.5, 0.0]])
    with pytest.raises(InputError):
        joint_p(bad)


def test_affinity_matrix_validation():
    with pytest.raises(InputError):
        AffinityMatrix(np.array([[0.0, 0.6], [0.4, 0.0]]))   # not symmetric


# ---------------------------------------------------------------------------
# Map-side distributions and KL

def test_low_dim_q_matches_direct_formula():
    y = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 2.0]])
    q, w = low_dim_q(y)
    n = len(y)
    expect_w = np.zeros((n, n))
    for i in range(n):
        for j in range(n):
            if i != j:
                expect_w[i, j] = 1.0 / (1.0 + np.sum((y[i] - y[j]) ** 2))
    np.testing.assert_allclose(w, expect_w, atol=1e-15)
    np.testing.assert_allclose(q, expect_w / expect_w.sum(), atol=1e-15)


def test_kl_divergence_frozen_example():
    p = np.array([[0.0, 0.5], [0.5, 0.0]])
    q = np.array([[0.0, 0.45], [0.55, 0.0]])
    expect = 0.5 * math.log(0.5 / 0.45) + 0.5 * math.log(0.5 / 0.55)
    assert kl_divergence(p, q) == pytest.approx(expect, abs=1e-15)


def test_kl_divergence_matches_mpmath_and_is_nonnegative():
    rng = np.random.default_rng(4)
    for _ in range(10):
        n = 8
        p = rng.uniform(size=(n, n))
        np.fill_diagonal(p, 0.0)
        p = (p + p.T) / (2 * p.sum())
        q = rng.uniform(size=(n, n))
        np.fill_diagonal(q, 0.0)
        q = (q + q.T) / (2 * q.sum())
        got = kl_divergence(p, q)
        assert got == pytest.approx(mp_kl(p, q), abs=1e-12)
        assert got >= 0.0


def test_kl_gradient_matches_finite_differences():
    rng = np.random.default_rng(5)
    pts = rng.normal(size=(8, 3))
    p = affinities(pts, TsneConfig(perplexity=3.0)).p
    y = rng.normal(size=(8, 2))
    analytic = kl_gradient(p, y)
    numeric = fd_gradient(p, y)
    scale = np.abs(numeric).max()
    assert np.abs(analytic - numeric).max() / scale < 1e-6


# ---------------------------------------------------------------------------
# Descent

def test_embed_shapes_and_determinism():
    rng = np.random.default_rng(6)
    pts = rng.normal(size=(30, 3))
    cfg = TsneConfig(perplexity=8.0, n_iter=60, early_exaggeration_iters=20, seed=3)
    a = embed(pts, cfg)
    b = embed(pts, cfg)
    assert a.y.shape == (30, 2)
    assert a.kl_history.shape == (60,)
    assert a.y.tobytes() == b.y.tobytes()
    assert a.kl_history.tobytes() == b.kl_history.tobytes()
    c = embed(pts, cfg.replace(seed=4))
    assert a.y.tobytes() != c.y.tobytes()


def test_embed_separates_two_blobs():
    from scipy.spatial.distance import cdist
    rng = np.random.default_rng(7)
    pts = np.vstack([rng.normal(0.0, 0.5, size=(100, 3)),
                     rng.normal(20.0, 0.5, size=(100, 3))])
    emb = embed(pts, TsneConfig(perplexity=30.0, n_iter=300, seed=0))
    a, b = emb.y[:100], emb.y[100:]
    da = cdist(a, a)
    np.fill_diagonal(da, np.inf)
    db = cdist(b, b)
    np.fill_diagonal(db, np.inf)
    # Blobs stay internally dense and mutually far in the map.
    nn_max = max(da.min(axis=1).max(), db.min(axis=1).max())
    assert cdist(a, b).min() > 4 * nn_max
    assert (emb.kl_history >= 0).all()


def test_config_validation():
    with pytest.raises(InputError):
        TsneConfig(perplexity=0.5)
    with pytest.raises(InputError):
        TsneConfig(n_iter=0)
    with pytest.raises(InputError):
        TsneConfig(momentum_final=1.5)
    cfg = TsneConfig().replace(perplexity=12.0)
    assert cfg.perplexity == 12.0
