"""Orthogonal projection matrix U and the orthogonality penalty D(U).

U is stored as a plain ``(M, D)`` ndarray whose rows are the projection
directions u_i.  The noise basis V is never built: every quantity that
needs it goes through ``I - U^T U`` (or its free-norm analogue in
:mod:`hope.noise`).
"""

import numpy as np

from .errors import DegenerateRowError, InvalidArgumentError

__all__ = [
    "init_projection",
    "check_projection",
    "project",
    "residual",
    "row_norms",
    "cosine_matrix",
    "penalty",
    "penalty_gradient",
    "penalty_gradient_rows",
    "normalize_rows",
    "correlation_sum",
]


def init_projection(n_latent, n_input, rng, gamma=0.5, dtype=np.float64):
    """Random U with rows drawn uniform in +-gamma*sqrt(6)/sqrt(M+D), then row-normalized."""
    if n_latent > n_input:
        raise InvalidArgumentError(
            f"latent dimension M={n_latent} exceeds input dimension D={n_input}"
        )
    bound = gamma * np.sqrt(6.0) / np.sqrt(n_latent + n_input)
    U = rng.uniform(-bound, bound, size=(n_latent, n_input))
    return normalize_rows(U).astype(dtype, copy=False)


def check_projection(U):
    U = np.asarray(U)
    if U.ndim != 2:
        raise InvalidArgumentError(f"projection must be 2-D, got shape {U.shape}")
    M, D = U.shape
    if M > D:
        raise InvalidArgumentError(f"projection has M={M} > D={D}")
    return U


def row_norms(U):
    """Euclidean norm of every row; raises if any row is exactly zero."""
    norms = np.sqrt(np.einsum("ij,ij->i", U, U))
    if np.any(norms == 0):
        bad = np.flatnonzero(norms == 0).tolist()
        raise DegenerateRowError(f"zero-norm projection rows: {bad}")
    return norms


def _check_input(U, x):
    x = np.asarray(x)
    if x.shape[-1] != U.shape[1]:
        raise InvalidArgumentError(
            f"input dimension {x.shape[-1]} does not match projection D={U.shape[1]}"
        )
    return x


def project(U, x):
    """z = U x.  ``x`` may be one D-vector or an (N, D) batch."""
    x = _check_input(U, x)
    return x @ U.T


def residual(U, x):
    """x_bar = (I - U^T U) x for one vector or an (N, D) batch."""
    x = _check_input(U, x)
    return x - (x @ U.T) @ U


def cosine_matrix(U):
    """Signed cosines u_i.u_j / (|u_i||u_j|) for all row pairs, shape (M, M)."""
    norms = row_norms(U)
    gram = U @ U.T
    return gram / np.outer(norms, norms)


def penalty(U):
    """D(U): sum over unordered pairs i<j of |cos(u_i, u_j)|."""
    G = np.abs(cosine_matrix(U))
    return float(np.triu(G, k=1).sum())


def correlation_sum(U):
    """Sum over ordered pairs i != j of |cos(u_i, u_j)|; always 2 * penalty(U)."""
    G = np.abs(cosine_matrix(U))
    np.fill_diagonal(G, 0.0)
    return float(G.sum())


def penalty_gradient(U):
    """dD/dU in matrix form (D_mat - B) U.

    d_ij = sign(u_i.u_j)/(|u_i||u_j|) and b_ii = sum_j g_ij / (u_i.u_i), with
    sign(0) = 0 so exactly orthogonal pairs contribute a zero subgradient.
    """
    norms = row_norms(U)
    gram = U @ U.T
    outer = np.outer(norms, norms)
    Dmat = np.sign(gram) / outer
    g = np.abs(gram) / outer
    B = g.sum(axis=1) / norms**2
    Dmat[np.diag_indices_from(Dmat)] -= B
    return Dmat @ U


def penalty_gradient_rows(U):
    """dD/du_i accumulated row by row as sum_j g_ij [u_j/(u_i.u_j) - u_i/(u_i.u_i)].

    Slow reference form; :func:`penalty_gradient` is the one used in training.
    """
    U = np.asarray(U, dtype=float)
    norms = row_norms(U)
    M = U.shape[0]
    grad = np.zeros_like(U)
    for i in range(M):
        for j in range(M):
            if i == j:
                continue
            dot = U[i] @ U[j]
            if dot == 0.0:
                continue
            g = abs(dot) / (norms[i] * norms[j])
            grad[i] += g * (U[j] / dot - U[i] / norms[i] ** 2)
    return grad


def normalize_rows(U):
    """Scale every row to unit length."""
    U = np.asarray(U)
    return U / row_norms(U)[:, None]
