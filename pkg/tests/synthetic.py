"""Synthetic data generators used as oracles by the test-suite."""

import numpy as np


def sample_vmf(mu, kappa, n, rng):
    """Wood's (1994) rejection sampler for vMF(mu, kappa) on the unit sphere."""
    mu = np.asarray(mu, dtype=float)
    mu = mu / np.linalg.norm(mu)
    p = mu.size
    b = (-2.0 * kappa + np.sqrt(4.0 * kappa**2 + (p - 1.0) ** 2)) / (p - 1.0)
    x0 = (1.0 - b) / (1.0 + b)
    c = kappa * x0 + (p - 1.0) * np.log(1.0 - x0**2)
    w = np.empty(n)
    i = 0
    while i < n:
        z = rng.beta((p - 1.0) / 2.0, (p - 1.0) / 2.0)
        cand = (1.0 - (1.0 + b) * z) / (1.0 - (1.0 - b) * z)
        if kappa * cand + (p - 1.0) * np.log(1.0 - x0 * cand) - c >= np.log(rng.uniform()):
            w[i] = cand
            i += 1
    v = rng.standard_normal((n, p))
    v -= np.outer(v @ mu, mu)
    v /= np.linalg.norm(v, axis=1, keepdims=True)
    return w[:, None] * mu + np.sqrt(1.0 - w[:, None] ** 2) * v


def planted_movmf(n=2000, D=20, M=5, K=3, kappa=20.0, noise_var=0.01, seed=0):
    """Samples from a K-component movMF living in a random M-dim subspace of R^D.

    Returns (X, basis) where ``basis`` is the (M, D) orthonormal embedding.
    """
    rng = np.random.default_rng(seed)
    basis = np.linalg.qr(rng.standard_normal((D, M)))[0].T
    centers = rng.standard_normal((K, M))
    labels = rng.integers(0, K, size=n)
    S = np.empty((n, M))
    for k in range(K):
        idx = np.flatnonzero(labels == k)
        S[idx] = sample_vmf(centers[k], kappa, len(idx), rng)
    X = S @ basis + np.sqrt(noise_var) * rng.standard_normal((n, D))
    return X, basis


def subspace_overlap(U, basis):
    """Mean squared singular value of U_est . basis^T, with U's rows normalized."""
    Q = np.linalg.qr(U.T)[0].T
    s = np.linalg.svd(Q @ basis.T, compute_uv=False)
    return float(np.mean(s**2))
