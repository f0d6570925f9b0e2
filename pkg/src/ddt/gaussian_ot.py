"""Closed-form 2-Wasserstein distances between diagonal Gaussians.

For diagonal covariances the matrix square roots in the Bures term act
elementwise, so

    W2(P, Q)^2 = |mu_P - mu_Q|^2 + sum_k (sqrt(a_k) - sqrt(b_k))^2

i.e. W2 is the Euclidean distance between ``(mu, sqrt(var))`` points. All
arithmetic is float64.
"""
from dataclasses import dataclass

import numpy as np

from .errors import DimensionError, DomainError

DEFAULT_FLOOR = 1e-6


def _vector(x, name):
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim != 1:
        raise DimensionError(f"{name} must be a vector, got shape {arr.shape}")
    return arr


def _positive(x, name):
    if not np.all(x > 0):
        raise DomainError(f"{name} must be strictly positive")
    return x


@dataclass(frozen=True)
class GaussianEmbedding:
    """Latent distribution N(mu, diag(s)) produced by the encoder for one image."""

    mu: np.ndarray
    s: np.ndarray

    def __post_init__(self):
        mu = _vector(self.mu, "mu")
        s = _positive(_vector(self.s, "s"), "s")
        if mu.shape != s.shape:
            raise DimensionError(f"mu has {mu.size} entries but s has {s.size}")
        object.__setattr__(self, "mu", mu)
        object.__setattr__(self, "s", s)

    @property
    def dim(self):
        return self.mu.size


@dataclass(frozen=True)
class FullGaussian:
    """Gaussian with diagonal covariance.

    ``cov_diag`` may also be given as a square matrix, which must then be
    diagonal; dense covariances are rejected with :class:`DomainError`.
    """

    mu: np.ndarray
    cov_diag: np.ndarray

    def __post_init__(self):
        mu = _vector(self.mu, "mu")
        cov = np.asarray(self.cov_diag, dtype=np.float64)
        if cov.ndim == 2:
            if cov.shape[0] != cov.shape[1]:
                raise DimensionError(f"covariance must be square, got {cov.shape}")
            diag = np.diag(cov)
            if np.any(cov - np.diag(diag)):
                raise DomainError("only diagonal covariances are supported")
            cov = diag.copy()
        cov = _positive(_vector(cov, "cov_diag"), "cov_diag")
        if mu.shape != cov.shape:
            raise DimensionError(f"mu has {mu.size} entries but covariance has {cov.size}")
        object.__setattr__(self, "mu", mu)
        object.__setattr__(self, "cov_diag", cov)


def w2_full(p: FullGaussian, q: FullGaussian) -> float:
    if p.mu.size != q.mu.size:
        raise DimensionError(f"dimension mismatch: {p.mu.size} vs {q.mu.size}")
    dm = p.mu - q.mu
    dsd = np.sqrt(p.cov_diag) - np.sqrt(q.cov_diag)
    return float(np.sqrt(np.dot(dm, dm) + np.dot(dsd, dsd)))


def w2_diag_identity(emb: GaussianEmbedding, m) -> float:
    """W2 between ``N(emb.mu, diag(emb.s))`` and the unit-covariance ``N(m, I)``."""
    m = _vector(m, "m")
    if m.size != emb.dim:
        raise DimensionError(f"embedding dim {emb.dim} but prototype mean has {m.size}")
    dm = emb.mu - m
    dsd = np.sqrt(emb.s) - 1.0
    return float(np.sqrt(np.dot(dm, dm) + np.dot(dsd, dsd)))


def w2_grad(emb: GaussianEmbedding, m, floor: float = DEFAULT_FLOOR):
    """Gradient of :func:`w2_diag_identity` w.r.t. ``mu`` and ``s``.

    The distance in the denominator is clamped at ``floor``, which keeps the
    gradient bounded (and zero at the exact minimum).
    """
    if not floor > 0:
        raise DomainError(f"floor must be positive, got {floor}")
    w = max(w2_diag_identity(emb, m), floor)
    root = np.sqrt(emb.s)
    grad_mu = (emb.mu - np.asarray(m, dtype=np.float64)) / w
    grad_s = (root - 1.0) / (2.0 * root * w)
    return grad_mu, grad_s


def w2_identity_batch(mu, s, means):
    """Row-wise W2 between ``N(mu[i], diag(s[i]))`` and ``N(means[i], I)``.

    ``mu``, ``s`` and ``means`` all have shape (B, K). Returns shape (B,).
    """
    dm = mu - means
    dsd = np.sqrt(s) - 1.0
    return np.sqrt(np.einsum("ij,ij->i", dm, dm) + np.einsum("ij,ij->i", dsd, dsd))


def w2_identity_batch_grad(mu, s, means, floor=DEFAULT_FLOOR):
    """Batched :func:`w2_grad`; returns ``(w, grad_mu, grad_s)`` with unclamped ``w``."""
    w = w2_identity_batch(mu, s, means)
    denom = np.maximum(w, floor)[:, None]
    root = np.sqrt(s)
    return w, (mu - means) / denom, (root - 1.0) / (2.0 * root * denom)


def w2_to_components(mu, s, means):
    """Distances from each row's Gaussian to every prototype component: shape (B, C)."""
    mu = np.atleast_2d(mu)
    s = np.atleast_2d(s)
    dm = mu[:, None, :] - means[None, :, :]
    cov_term = np.sum((np.sqrt(s) - 1.0) ** 2, axis=1)
    return np.sqrt(np.sum(dm * dm, axis=2) + cov_term[:, None])
