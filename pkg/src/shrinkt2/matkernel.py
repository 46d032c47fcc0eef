"""Dense symmetric-positive-definite matrix primitives.

Everything here targets the small matrices (dimension <= ~8) that per-gene
covariance work produces.  Determinants and inverses always go through a
Cholesky factor in log space: the per-gene marginal densities multiply
thousands of determinant factors and overflow immediately otherwise.

Inputs are validated as symmetric to an absolute tolerance of 1e-12 and then
symmetrized as (m + m') / 2, since cross-product accumulation leaves tiny
asymmetries.
"""

from __future__ import annotations

import numpy as np
import scipy.linalg

from .errors import NotPositiveDefinite

SYMMETRY_ATOL = 1e-12


def _as_symmetric(m) -> np.ndarray:
    m = np.asarray(m, dtype=float)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise NotPositiveDefinite(f"expected a square matrix, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise NotPositiveDefinite("matrix contains non-finite entries")
    if np.max(np.abs(m - m.T), initial=0.0) > SYMMETRY_ATOL:
        raise NotPositiveDefinite("matrix is not symmetric within 1e-12")
    return (m + m.T) / 2.0


def cholesky(m) -> np.ndarray:
    """Lower-triangular L with L @ L.T == m.

    Raises NotPositiveDefinite when a pivot fails, which is how a
    degenerate per-gene covariance announces itself.
    """
    m = _as_symmetric(m)
    try:
        return np.linalg.cholesky(m)
    except np.linalg.LinAlgError as exc:
        raise NotPositiveDefinite(str(exc)) from exc


def logdet(m) -> float:
    """log determinant of an SPD matrix via its Cholesky diagonal."""
    return 2.0 * float(np.sum(np.log(np.diag(cholesky(m)))))


def spd_inverse(m) -> np.ndarray:
    """Inverse of an SPD matrix, computed by Cholesky solves."""
    L = cholesky(m)
    inv = scipy.linalg.cho_solve((L, True), np.eye(L.shape[0]))
    return (inv + inv.T) / 2.0


def sym_sqrt(m) -> np.ndarray:
    """Symmetric square root Q sqrt(D) Q' from the spectral decomposition."""
    m = _as_symmetric(m)
    cholesky(m)  # positive-definiteness gate
    w, q = scipy.linalg.eigh(m)
    if np.any(w <= 0):
        raise NotPositiveDefinite("non-positive eigenvalue in sym_sqrt")
    root = (q * np.sqrt(w)) @ q.T
    return (root + root.T) / 2.0


def quadform(v, m) -> float:
    """v' m^{-1} v >= 0 via a triangular solve, never an explicit inverse."""
    v = np.asarray(v, dtype=float)
    L = cholesky(m)
    if v.shape != (L.shape[0],):
        raise NotPositiveDefinite(
            f"vector shape {v.shape} does not match matrix dim {L.shape[0]}"
        )
    y = scipy.linalg.solve_triangular(L, v, lower=True)
    return float(y @ y)
