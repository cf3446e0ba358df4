"""The HOPE model: projection U, latent mixture and residual noise variance."""

from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidArgumentError
from .gmm import DiagonalGmm, gmm_gradients, gmm_log_likelihood, init_gmm
from .movmf import MovMf, init_movmf, movmf_gradients, movmf_log_likelihood
from .noise import MODES, jacobian_term, l2_value
from .projection import check_projection, init_projection, penalty

__all__ = ["HopeModel", "init_hope_model", "mixture_kind"]


def mixture_kind(mixture):
    if isinstance(mixture, MovMf):
        return "movmf"
    if isinstance(mixture, DiagonalGmm):
        return "gmm"
    raise InvalidArgumentError(f"unsupported mixture type {type(mixture).__name__}")


@dataclass
class HopeModel:
    """U (M x D), a latent mixture (MovMf or DiagonalGmm) and sigma^2.

    ``noise_mode`` selects the residual-energy formula (see :mod:`hope.noise`);
    ``normalize_z`` only matters for movMF mixtures.
    """

    projection: np.ndarray
    mixture: object
    sigma2: float = 0.1
    noise_mode: str = "orthonormal"
    normalize_z: bool = True
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.projection = check_projection(np.asarray(self.projection, dtype=float))
        if self.noise_mode not in MODES:
            raise InvalidArgumentError(f"unknown noise mode {self.noise_mode!r}")
        if self.mixture.dim != self.projection.shape[0]:
            raise InvalidArgumentError(
                f"mixture dimension {self.mixture.dim} != latent dimension "
                f"{self.projection.shape[0]}"
            )
        mixture_kind(self.mixture)

    @property
    def n_latent(self):
        return self.projection.shape[0]

    @property
    def n_input(self):
        return self.projection.shape[1]

    @property
    def n_components(self):
        return self.mixture.n_components

    @property
    def kind(self):
        return mixture_kind(self.mixture)

    def copy(self):
        return HopeModel(
            self.projection.copy(),
            self.mixture.copy(),
            self.sigma2,
            self.noise_mode,
            self.normalize_z,
            dict(self.meta),
        )

    def l1(self, X):
        if self.kind == "movmf":
            return movmf_log_likelihood(self.mixture, self.projection, X, self.normalize_z)
        return gmm_log_likelihood(self.mixture, self.projection, X)

    def l1_gradients(self, X):
        if self.kind == "movmf":
            return movmf_gradients(self.mixture, self.projection, X, self.normalize_z)
        return gmm_gradients(self.mixture, self.projection, X)

    def l2(self, X):
        return l2_value(self.projection, self.sigma2, X, self.noise_mode)

    def log_likelihood(self, X):
        """L1 + L2, plus the Jacobian term J(U) in free-norm mode."""
        value = self.l1(X) + self.l2(X)
        if self.noise_mode == "free-norm":
            value += jacobian_term(self.projection, len(np.atleast_2d(X)))[0]
        return value

    def objective(self, X, beta):
        """Penalized objective L - beta * D(U) that training maximizes."""
        return self.log_likelihood(X) - beta * penalty(self.projection)


def init_hope_model(X, n_latent, n_components, rng, mixture="movmf", sigma2=0.1,
                    noise_mode="orthonormal", normalize_z=True, gamma=0.5, kappa0=5.0,
                    projection=None):
    """Random U (scaled-uniform init, row-normalized) and a data-seeded mixture.

    Pass ``projection`` to start from a given U (e.g. a PCA basis or the
    identity for frozen-projection baselines).
    """
    X = np.asarray(X)
    D = X.shape[1]
    if projection is None:
        U = init_projection(n_latent, D, rng, gamma)
    else:
        U = np.array(projection, dtype=float)
    if mixture == "movmf":
        mix = init_movmf(U, X, n_components, rng, kappa0)
    elif mixture == "gmm":
        mix = init_gmm(U, X, n_components, rng)
    else:
        raise InvalidArgumentError(f"unknown mixture {mixture!r}")
    return HopeModel(U, mix, sigma2, noise_mode, normalize_z)
