"""Diagonal-covariance Gaussian mixture in the latent space of a HOPE model."""

from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from .errors import InvalidArgumentError, NumericError
from .projection import project

__all__ = [
    "VARIANCE_FLOOR",
    "DiagonalGmm",
    "GmmGradients",
    "init_gmm",
    "gmm_component_log_probs",
    "gmm_log_likelihood",
    "gmm_occupancy",
    "gmm_gradients",
]

VARIANCE_FLOOR = 1e-4


@dataclass
class DiagonalGmm:
    """K Gaussians with diagonal covariances.

    weights: (K,) mixture weights on the simplex.
    means: (K, M) component means.
    variances: (K, M) per-dimension variances, each >= ``VARIANCE_FLOOR``.
    """

    weights: np.ndarray
    means: np.ndarray
    variances: np.ndarray

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=float)
        self.means = np.atleast_2d(np.asarray(self.means, dtype=float))
        self.variances = np.atleast_2d(np.asarray(self.variances, dtype=float))
        K, M = self.means.shape
        if self.weights.shape != (K,) or self.variances.shape != (K, M):
            raise InvalidArgumentError(
                f"inconsistent GMM shapes: weights {self.weights.shape}, "
                f"means {self.means.shape}, variances {self.variances.shape}"
            )
        if np.any(self.variances <= 0):
            raise InvalidArgumentError("GMM variances must be positive")

    @property
    def n_components(self):
        return self.means.shape[0]

    @property
    def dim(self):
        return self.means.shape[1]

    def copy(self):
        return DiagonalGmm(self.weights.copy(), self.means.copy(), self.variances.copy())


@dataclass
class GmmGradients:
    weights: np.ndarray
    means: np.ndarray
    variances: np.ndarray
    projection: np.ndarray


def init_gmm(U, X, n_components, rng):
    """Means at K distinct projected training points, unit variances, uniform weights."""
    X = np.asarray(X)
    if n_components > len(X):
        raise InvalidArgumentError(f"K={n_components} exceeds the {len(X)} samples")
    idx = rng.choice(len(X), size=n_components, replace=False)
    means = project(U, X[idx]).astype(float)
    M = U.shape[0]
    return DiagonalGmm(
        np.full(n_components, 1.0 / n_components), means, np.ones((n_components, M))
    )


def _check_batch(X, D):
    X = np.atleast_2d(np.asarray(X))
    if X.shape[0] == 0:
        raise InvalidArgumentError("empty batch")
    if X.shape[1] != D:
        raise InvalidArgumentError(f"batch dimension {X.shape[1]} does not match D={D}")
    if not np.all(np.isfinite(X)):
        raise NumericError("batch contains non-finite values")
    return X


def gmm_component_log_probs(model, Z):
    """(N, K) matrix of ln pi_k + ln N(z_n | mu_k, Sigma_k)."""
    Z = np.atleast_2d(Z)
    if Z.shape[1] != model.dim:
        raise InvalidArgumentError(f"latent dimension {Z.shape[1]} != M={model.dim}")
    inv = 1.0 / model.variances
    # sum_m (z - mu)^2 / v expanded to keep everything as matrix products
    maha = (
        (Z * Z) @ inv.T
        - 2.0 * Z @ (model.means * inv).T
        + np.sum(model.means**2 * inv, axis=1)
    )
    log_norm = -0.5 * (model.dim * np.log(2.0 * np.pi) + np.log(model.variances).sum(axis=1))
    with np.errstate(divide="ignore"):
        log_w = np.log(model.weights)
    return log_w + log_norm - 0.5 * maha


def gmm_log_likelihood(model, U, X):
    """L1 = sum_n ln sum_k pi_k N(U x_n | mu_k, Sigma_k)."""
    X = _check_batch(X, U.shape[1])
    logp = gmm_component_log_probs(model, project(U, X))
    return float(logsumexp(logp, axis=1).sum())


def gmm_occupancy(model, z):
    """Posterior responsibilities gamma_k(z); one K-vector or an (N, K) matrix."""
    z = np.asarray(z)
    logp = gmm_component_log_probs(model, z)
    gamma = np.exp(logp - logsumexp(logp, axis=1, keepdims=True))
    return gamma[0] if z.ndim == 1 else gamma


def gmm_gradients(model, U, X):
    """Gradients of L1 with respect to pi, mu, the diagonal variances and U."""
    X = _check_batch(X, U.shape[1])
    Z = project(U, X)
    gamma = gmm_occupancy(model, Z)  # (N, K)
    inv = 1.0 / model.variances
    Nk = gamma.sum(axis=0)
    GZ = gamma.T @ Z  # sum_n gamma_nk z_n
    GZZ = gamma.T @ (Z * Z)

    d_weights = Nk / model.weights
    d_means = inv * (GZ - Nk[:, None] * model.means)
    # sum_n gamma (z - mu)^2 expanded
    sq = GZZ - 2.0 * model.means * GZ + Nk[:, None] * model.means**2
    d_variances = -0.5 * (Nk[:, None] * inv - sq * inv**2)
    # sum_n sum_k gamma_nk Sigma_k^-1 (mu_k - z_n) x_n^T
    R = gamma @ (model.means * inv) - Z * (gamma @ inv)  # (N, M)
    d_projection = R.T @ X
    return GmmGradients(d_weights, d_means, d_variances, d_projection)
