"""Mixture of von Mises-Fisher distributions in the latent space.

Each component is parameterized by an unnormalized mean vector mu_k whose
length is the concentration kappa_k = |mu_k|, so the component density at a
unit vector z is C_M(|mu_k|) exp(z . mu_k).
"""

from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from .bessel import log_vmf_normalizer, mean_resultant_length
from .errors import DegenerateProjectionError, InvalidArgumentError, NumericError
from .projection import project

__all__ = [
    "KAPPA_FLOOR",
    "MovMf",
    "MovMfGradients",
    "init_movmf",
    "normalize_projections",
    "movmf_component_log_probs",
    "movmf_log_likelihood",
    "movmf_occupancy",
    "movmf_gradients",
]

KAPPA_FLOOR = 1e-3


@dataclass
class MovMf:
    """weights: (K,) on the simplex; means: (K, M) with |mu_k| = kappa_k > 0."""

    weights: np.ndarray
    means: np.ndarray

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=float)
        self.means = np.atleast_2d(np.asarray(self.means, dtype=float))
        if self.weights.shape != (self.means.shape[0],):
            raise InvalidArgumentError(
                f"weights shape {self.weights.shape} does not match {self.means.shape[0]} means"
            )

    @property
    def n_components(self):
        return self.means.shape[0]

    @property
    def dim(self):
        return self.means.shape[1]

    @property
    def kappas(self):
        return np.sqrt(np.einsum("ij,ij->i", self.means, self.means))

    def log_normalizers(self):
        return log_vmf_normalizer(self.dim, self.kappas)

    def log_biases(self):
        """ln pi_k + ln C_M(|mu_k|), the constant part of each component score."""
        with np.errstate(divide="ignore"):
            return np.log(self.weights) + self.log_normalizers()

    def copy(self):
        return MovMf(self.weights.copy(), self.means.copy())


@dataclass
class MovMfGradients:
    weights: np.ndarray
    means: np.ndarray
    projection: np.ndarray


def init_movmf(U, X, n_components, rng, kappa0=5.0):
    """mu_k = kappa0 * (unit projection of a distinct training point), uniform pi."""
    X = np.asarray(X)
    if n_components > len(X):
        raise InvalidArgumentError(f"K={n_components} exceeds the {len(X)} samples")
    idx = rng.choice(len(X), size=n_components, replace=False)
    Z, _ = normalize_projections(project(U, X[idx]).astype(float))
    return MovMf(np.full(n_components, 1.0 / n_components), kappa0 * Z)


def normalize_projections(Zt):
    """Return (z, |z_tilde|) with z = z_tilde / |z_tilde| row-wise."""
    norms = np.sqrt(np.einsum("ij,ij->i", Zt, Zt))
    if np.any(norms == 0):
        raise DegenerateProjectionError(
            f"{int(np.sum(norms == 0))} samples project to the zero vector"
        )
    return Zt / norms[:, None], norms


def _check_batch(X, D):
    X = np.atleast_2d(np.asarray(X))
    if X.shape[0] == 0:
        raise InvalidArgumentError("empty batch")
    if X.shape[1] != D:
        raise InvalidArgumentError(f"batch dimension {X.shape[1]} does not match D={D}")
    if not np.all(np.isfinite(X)):
        raise NumericError("batch contains non-finite values")
    return X


def movmf_component_log_probs(model, Z):
    """(N, K) matrix of ln pi_k + ln C_M(|mu_k|) + z_n . mu_k."""
    Z = np.atleast_2d(Z)
    if Z.shape[1] != model.dim:
        raise InvalidArgumentError(f"latent dimension {Z.shape[1]} != M={model.dim}")
    return Z @ model.means.T + model.log_biases()


def movmf_log_likelihood(model, U, X, normalize_z=True):
    """L1 = sum_n ln sum_k pi_k C_M(|mu_k|) exp(z_n . mu_k)."""
    X = _check_batch(X, U.shape[1])
    Z = project(U, X)
    if normalize_z:
        Z, _ = normalize_projections(Z)
    return float(logsumexp(movmf_component_log_probs(model, Z), axis=1).sum())


def movmf_occupancy(model, z):
    """gamma_k(z) for one unit M-vector (K-vector) or an (N, M) batch."""
    z = np.asarray(z)
    logp = movmf_component_log_probs(model, z)
    gamma = np.exp(logp - logsumexp(logp, axis=1, keepdims=True))
    return gamma[0] if z.ndim == 1 else gamma


def movmf_gradients(model, U, X, normalize_z=True):
    """Gradients of L1 with respect to pi, mu and U.

    The U-gradient carries the (I - z z^T)/|z_tilde| Jacobian of the unit
    normalization when ``normalize_z`` is set.
    """
    X = _check_batch(X, U.shape[1])
    Zt = project(U, X)
    if normalize_z:
        Z, norms = normalize_projections(Zt)
    else:
        Z = Zt
    gamma = movmf_occupancy(model, Z)
    Nk = gamma.sum(axis=0)
    kappa = model.kappas
    A = mean_resultant_length(model.dim, kappa)

    d_weights = Nk / model.weights
    d_means = gamma.T @ Z - (Nk * A / kappa)[:, None] * model.means
    G = gamma @ model.means  # sum_k gamma_nk mu_k, (N, M)
    if normalize_z:
        G = (G - Z * np.einsum("ij,ij->i", Z, G)[:, None]) / norms[:, None]
    d_projection = G.T @ X
    return MovMfGradients(d_weights, d_means, d_projection)
