"""Residual-noise likelihood L2, its U-gradient, the sigma^2 update and the
Jacobian term for projections whose rows are not unit length.

Two residual-energy formulas are supported through ``mode``:

``"orthonormal"``
    n^T n = |x - U^T U x|^2 and L2 = -N(D-M)/2 ln s2 - sum n^T n / (2 s2).
``"free-norm"``
    n^T n = x^T [I - U^T (U U^T)^-1 U] x and L2 = -N/2 ln s2 - sum n^T n / (2 s2).

The two log-variance prefactors differ on purpose; each matches its own
derivation and they coincide only when ln s2 = 0.
"""

import numpy as np

from .errors import InvalidArgumentError, SingularProjectionError
from .projection import row_norms

__all__ = [
    "SIGMA2_FLOOR",
    "MODES",
    "residual_energy",
    "l2_value",
    "l2_gradient_u",
    "sigma2_update",
    "jacobian_term",
]

SIGMA2_FLOOR = 1e-6
MODES = ("orthonormal", "free-norm")


def _check_mode(mode):
    if mode not in MODES:
        raise InvalidArgumentError(f"unknown noise mode {mode!r}; expected one of {MODES}")


def _gram_solve(U, B):
    """(U U^T)^-1 B, raising SingularProjectionError for a singular Gram matrix."""
    gram = U @ U.T
    try:
        cond = np.linalg.cond(gram)
    except np.linalg.LinAlgError as exc:  # pragma: no cover - cond itself failing
        raise SingularProjectionError(str(exc)) from exc
    if not np.isfinite(cond) or cond > 1e14:
        raise SingularProjectionError(f"U U^T is singular (condition number {cond:.3g})")
    return np.linalg.solve(gram, B)


def residual_energy(U, X, mode="orthonormal"):
    """Per-sample n^T n as an (N,) array."""
    _check_mode(mode)
    X = np.atleast_2d(X)
    if X.shape[1] != U.shape[1]:
        raise InvalidArgumentError(f"batch dimension {X.shape[1]} does not match D={U.shape[1]}")
    Z = X @ U.T
    if mode == "orthonormal":
        R = X - Z @ U
        return np.einsum("ij,ij->i", R, R)
    W = _gram_solve(U, Z.T).T  # rows (U U^T)^-1 U x_n
    return np.einsum("ij,ij->i", X, X) - np.einsum("ij,ij->i", Z, W)


def l2_value(U, sigma2, X, mode="orthonormal"):
    if sigma2 <= 0:
        raise InvalidArgumentError(f"sigma2 must be > 0, got {sigma2}")
    X = np.atleast_2d(X)
    N = X.shape[0]
    M, D = U.shape
    energy = residual_energy(U, X, mode).sum()
    dof = N * (D - M) if mode == "orthonormal" else N
    return float(-0.5 * dof * np.log(sigma2) - energy / (2.0 * sigma2))


def l2_gradient_u(U, sigma2, X, mode="orthonormal"):
    """dL2/dU.

    Orthonormal mode uses the full form (1/s2) sum U [x x_bar^T + x_bar x^T],
    which does not assume U U^T = I and is therefore exact for any U.
    """
    _check_mode(mode)
    if sigma2 <= 0:
        raise InvalidArgumentError(f"sigma2 must be > 0, got {sigma2}")
    X = np.atleast_2d(X)
    Z = X @ U.T
    if mode == "orthonormal":
        Xbar = X - Z @ U
        return (Z.T @ Xbar + (Xbar @ U.T).T @ X) / sigma2
    W = _gram_solve(U, Z.T).T  # (U U^T)^-1 U x_n as rows
    P = X - W @ U  # [I - U^T (U U^T)^-1 U] x_n
    return (W.T @ P) / sigma2


def sigma2_update(U, X, mode="orthonormal"):
    """Closed-form maximizer of :func:`l2_value` over sigma^2 for this batch.

    Orthonormal mode gives sum n^T n / (N (D - M)); free-norm mode, whose
    prefactor is N/2, gives sum n^T n / N.  Floored at ``SIGMA2_FLOOR``.
    """
    X = np.atleast_2d(X)
    N = X.shape[0]
    if N == 0:
        raise InvalidArgumentError("empty batch")
    M, D = U.shape
    dof = N * (D - M) if mode == "orthonormal" else N
    if dof <= 0:
        return SIGMA2_FLOOR
    energy = residual_energy(U, X, mode).sum()
    return float(max(energy / dof, SIGMA2_FLOOR))


def jacobian_term(U, n_samples):
    """J(U) = -N sum_i ln|u_i| and dJ/dU = -N (U U^T)^-1 U.

    The two agree (to first order) on the constraint set where rows of U are
    mutually orthogonal, which is where the free-norm model lives.
    """
    norms = row_norms(U)
    value = -n_samples * float(np.log(norms).sum())
    grad = -n_samples * _gram_solve(U, U)
    return value, grad
