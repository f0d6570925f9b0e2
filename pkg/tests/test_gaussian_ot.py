import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import integrate, linalg, stats

from ddt.errors import DimensionError, DomainError
from ddt.gaussian_ot import (FullGaussian, GaussianEmbedding, w2_diag_identity, w2_full, w2_grad,
                             w2_identity_batch, w2_identity_batch_grad, w2_to_components)


def bures_oracle(mu_p, cov_p, mu_q, cov_q):
    """General closed form with dense matrix square roots (scipy)."""
    root_p = linalg.sqrtm(cov_p)
    cross = linalg.sqrtm(root_p @ cov_q @ root_p)
    trace = np.trace(cov_p + cov_q - 2 * np.real(cross))
    return math.sqrt(np.sum((mu_p - mu_q) ** 2) + trace)


def quantile_oracle(m1, v1, m2, v2):
    """1-D W2 via the quantile coupling, integrated numerically."""
    f = lambda u: (stats.norm.ppf(u, m1, math.sqrt(v1)) - stats.norm.ppf(u, m2, math.sqrt(v2))) ** 2
    val, _ = integrate.quad(f, 0, 1, limit=200)
    return math.sqrt(val)


def test_one_dimensional_example():
    value = w2_full(FullGaussian([0.0], [4.0]), FullGaussian([1.0], [1.0]))
    assert value == pytest.approx(math.sqrt(2), abs=1e-12)
    assert quantile_oracle(0.0, 4.0, 1.0, 1.0) == pytest.approx(math.sqrt(2), abs=1e-6)


def test_identical_is_zero(rng):
    mu, var = rng.normal(size=5), rng.uniform(0.1, 3, 5)
    assert w2_full(FullGaussian(mu, var), FullGaussian(mu, var)) == 0.0


def test_mean_displacement_only():
    assert w2_full(FullGaussian([3, 0], [1, 1]), FullGaussian([0, 0], [1, 1])) == 3.0


def test_matches_dense_bures_formula(rng):
    for _ in range(50):
        k = rng.integers(1, 6)
        mp, mq = rng.normal(size=k), rng.normal(size=k)
        vp, vq = rng.uniform(0.05, 4, k), rng.uniform(0.05, 4, k)
        expected = bures_oracle(mp, np.diag(vp), mq, np.diag(vq))
        assert w2_full(FullGaussian(mp, vp), FullGaussian(mq, vq)) == pytest.approx(expected, rel=1e-9)


def test_diag_identity_examples():
    assert w2_diag_identity(GaussianEmbedding([3, 0], [4, 1]), [0, 0]) == pytest.approx(math.sqrt(10), abs=1e-12)
    assert w2_diag_identity(GaussianEmbedding([1, 0, 1], [1, 1, 1]), [1, 0, 1]) == 0.0
    assert w2_diag_identity(GaussianEmbedding([0, 0], [4, 4]), [0, 0]) == pytest.approx(math.sqrt(2), abs=1e-12)
    for mu, s, m in [([3, 0], [4, 1], [0, 0]), ([0, 0], [4, 4], [0, 0])]:
        full = w2_full(FullGaussian(mu, s), FullGaussian(m, np.ones(2)))
        assert w2_diag_identity(GaussianEmbedding(mu, s), m) == pytest.approx(full, rel=1e-12)


def test_validation():
    with pytest.raises(DomainError):
        GaussianEmbedding([0.0], [0.0])
    with pytest.raises(DomainError):
        FullGaussian([0.0], [-1.0])
    with pytest.raises(DimensionError):
        w2_full(FullGaussian([0.0], [1.0]), FullGaussian([0.0, 0.0], [1.0, 1.0]))
    with pytest.raises(DimensionError):
        w2_diag_identity(GaussianEmbedding([0.0], [1.0]), [0.0, 1.0])
    with pytest.raises(DomainError):
        FullGaussian([0.0, 0.0], [[1.0, 0.5], [0.5, 1.0]])
    # a diagonal matrix is accepted
    assert FullGaussian([0.0, 0.0], np.diag([2.0, 3.0])).cov_diag.tolist() == [2.0, 3.0]


def central_diff(f, x, h=1e-5):
    g = np.zeros_like(x)
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = h
        g[i] = (f(x + e) - f(x - e)) / (2 * h)
    return g


def test_grad_examples():
    gmu, gs = w2_grad(GaussianEmbedding([3, 0], [1, 1]), [0, 0])
    np.testing.assert_allclose(gmu, [1, 0], atol=1e-15)
    np.testing.assert_allclose(gs, [0, 0], atol=1e-15)
    gmu, gs = w2_grad(GaussianEmbedding([1, 1], [1, 1]), [1, 1], floor=1e-6)
    assert not gmu.any() and not gs.any()
    _, gs = w2_grad(GaussianEmbedding([0], [4]), [0])
    assert gs[0] == pytest.approx(0.25, abs=1e-15)
    # finite-difference check of the same examples
    num_s = central_diff(lambda s: w2_diag_identity(GaussianEmbedding([0.0], s), [0.0]), np.array([4.0]))
    assert num_s[0] == pytest.approx(0.25, rel=1e-8)
    num_mu = central_diff(lambda mu: w2_diag_identity(GaussianEmbedding(mu, [1.0, 1.0]), [0.0, 0.0]),
                          np.array([3.0, 0.0]))
    np.testing.assert_allclose(num_mu, [1, 0], atol=1e-9)


def test_grad_rejects_bad_floor():
    with pytest.raises(DomainError):
        w2_grad(GaussianEmbedding([0.0], [1.0]), [0.0], floor=0.0)


def test_grad_matches_finite_differences(rng):
    for _ in range(100):
        k = int(rng.integers(1, 8))
        mu, s, m = rng.normal(size=k), rng.uniform(0.2, 4, k), rng.integers(0, 2, k).astype(float)
        emb = GaussianEmbedding(mu, s)
        if w2_diag_identity(emb, m) < 0.1:
            continue
        gmu, gs = w2_grad(emb, m)
        num_mu = central_diff(lambda x: w2_diag_identity(GaussianEmbedding(x, s), m), mu)
        num_s = central_diff(lambda x: w2_diag_identity(GaussianEmbedding(mu, x), m), s)
        for a, n in ((gmu, num_mu), (gs, num_s)):
            err = np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), 1e-8)
            assert err.max() <= 1e-6


def test_grad_floor_bounds_gradient():
    emb = GaussianEmbedding([1e-9, 0.0], [1.0, 1.0])
    gmu, _ = w2_grad(emb, [0.0, 0.0], floor=1e-6)
    assert gmu[0] == pytest.approx(1e-3)


def test_batch_helpers_agree_with_scalar(rng):
    b, k = 7, 6
    mu, s = rng.normal(size=(b, k)), rng.uniform(0.2, 3, (b, k))
    means = rng.integers(0, 2, (b, k)).astype(float)
    w, gmu, gs = w2_identity_batch_grad(mu, s, means)
    np.testing.assert_allclose(w, w2_identity_batch(mu, s, means), rtol=0, atol=0)
    for i in range(b):
        emb = GaussianEmbedding(mu[i], s[i])
        assert w[i] == pytest.approx(w2_diag_identity(emb, means[i]), rel=1e-12)
        ref_mu, ref_s = w2_grad(emb, means[i])
        np.testing.assert_allclose(gmu[i], ref_mu, rtol=1e-12)
        np.testing.assert_allclose(gs[i], ref_s, rtol=1e-12)
    comps = np.eye(2, k)
    d = w2_to_components(mu, s, comps)
    for i in range(b):
        for c in range(2):
            assert d[i, c] == pytest.approx(w2_diag_identity(GaussianEmbedding(mu[i], s[i]), comps[c]), rel=1e-12)


# values on a 1e-3 grid: distinct draws differ by far more than the underflow limit
finite = st.integers(-5000, 5000).map(lambda i: i / 1000)
positive = st.integers(10, 10000).map(lambda i: i / 1000)


@st.composite
def gaussians(draw, k):
    mu = np.array(draw(st.lists(finite, min_size=k, max_size=k)))
    var = np.array(draw(st.lists(positive, min_size=k, max_size=k)))
    return FullGaussian(mu, var)


@settings(max_examples=200, deadline=None)
@given(st.integers(1, 6).flatmap(lambda k: st.tuples(gaussians(k), gaussians(k), gaussians(k))))
def test_metric_properties(triple):
    p, q, r = triple
    pq, qp = w2_full(p, q), w2_full(q, p)
    assert pq == qp
    assert pq >= 0
    assert w2_full(p, r) <= pq + w2_full(q, r) + 1e-9
    if pq == 0:
        np.testing.assert_array_equal(p.mu, q.mu)
        np.testing.assert_array_equal(p.cov_diag, q.cov_diag)
