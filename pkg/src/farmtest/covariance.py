"""
Robust covariance estimators for heavy-tailed data.

Three estimators share the ``(n, p) -> (p, p)`` signature:

* :func:`utype_covariance` -- U-statistic over pairwise differences with the
  Huber score applied to the eigenvalue of each rank-one term.
* :func:`adaptive_huber_covariance` -- entrywise Huber second moments minus
  products of Huber means.
* :func:`sample_covariance` -- the unbiased sample covariance, the
  non-robust baseline.

None of them is guaranteed positive semidefinite.
"""

import numpy as np
from scipy.spatial.distance import pdist, squareform

from .exceptions import ConvergenceError
from .huber import DEFAULT_MAX_ITER, DEFAULT_TOL, huber_location_columns

# products for this many (j, k) entries are materialized at once
_ENTRY_CHUNK = 2048


def as_data_matrix(data, min_rows=2):
    """Validate and return ``data`` as a float ``(n, p)`` array."""
    X = np.asarray(data, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    if X.ndim != 2:
        raise ValueError(f"data must be 2-d, got shape {X.shape}")
    if X.shape[0] < min_rows:
        raise ValueError(f"need at least {min_rows} observations, got {X.shape[0]}")
    if X.shape[1] < 1:
        raise ValueError("need at least one column")
    if not np.all(np.isfinite(X)):
        raise ValueError("data contains non-finite values")
    return X


def _symmetrize(S):
    return np.triu(S) + np.triu(S, 1).T


def utype_weights(X, tau):
    """Pair weights ``psi_tau(||d||^2 / 2) / ||d||^2`` as a condensed vector.

    Pairs with a zero difference get weight 0.
    """
    d2 = pdist(X, "sqeuclidean")
    w = np.zeros_like(d2)
    nz = d2 > 0
    if np.isinf(tau):
        w[nz] = 0.5
    else:
        w[nz] = np.minimum(0.5 * d2[nz], tau) / d2[nz]
    return w


def utype_covariance(data, tau):
    """U-type robust covariance estimate.

    Computes ``(1 / C(n,2)) * sum_{i<j} psi_tau(||d_ij||^2 / 2) d_ij d_ij^T /
    ||d_ij||^2`` with ``d_ij = X_i - X_j``.

    The pair sum equals ``X^T L X`` for the weighted graph Laplacian
    ``L = diag(W 1) - W``, so the cost is ``O(n^2 p + n p^2)`` instead of a
    ``p x p`` outer product per pair. Columns are centred first; the result is
    unchanged in exact arithmetic because ``L 1 = 0``.

    Parameters
    ----------
    data : array_like of shape (n, p)
    tau : float
        Robustification parameter, ``np.inf`` for the unbiased sample
        covariance.
    """
    X = as_data_matrix(data)
    if not tau > 0:
        raise ValueError("tau must be positive")
    n = X.shape[0]
    Xc = X - X.mean(axis=0)
    W = squareform(utype_weights(Xc, tau))
    L = np.diag(W.sum(axis=1)) - W
    S = Xc.T @ (L @ Xc)
    S /= n * (n - 1) / 2.0
    return _symmetrize(S)


def sample_covariance(data):
    """Unbiased sample covariance (divisor ``n - 1``)."""
    X = as_data_matrix(data)
    Xc = X - X.mean(axis=0)
    S = (Xc.T @ Xc) / (X.shape[0] - 1)
    return _symmetrize(S)


def adaptive_huber_covariance(data, tau_mean, tau_cov, tol=DEFAULT_TOL,
                              max_iter=DEFAULT_MAX_ITER, mu=None):
    """Entrywise robust covariance ``theta_jk - mu_j mu_k``.

    ``theta_jk`` is the Huber location of the products ``X_ij X_ik`` with
    parameter ``tau_cov`` and ``mu_j`` the Huber location of column ``j`` with
    ``tau_mean``. Only ``j <= k`` is solved and mirrored.

    Parameters
    ----------
    data : array_like of shape (n, p)
    tau_mean : float or ndarray of shape (p,)
    tau_cov : float or ndarray of shape (p, p)
        A single shared value, or per-entry overrides (upper triangle used).
    mu : ndarray of shape (p,), optional
        Precomputed robust means, skipping their re-estimation.
    """
    X = as_data_matrix(data)
    p = X.shape[1]
    if mu is None:
        mu = huber_location_columns(X, tau_mean, tol=tol, max_iter=max_iter)
    rows, cols = np.triu_indices(p)
    tau_cov = np.asarray(tau_cov, dtype=float)
    tau_entries = tau_cov[rows, cols] if tau_cov.ndim == 2 else np.broadcast_to(
        tau_cov, rows.shape)
    theta = np.empty(rows.size)
    for start in range(0, rows.size, _ENTRY_CHUNK):
        sl = slice(start, start + _ENTRY_CHUNK)
        prods = X[:, rows[sl]] * X[:, cols[sl]]
        try:
            theta[sl] = huber_location_columns(prods, tau_entries[sl], tol=tol,
                                               max_iter=max_iter)
        except ConvergenceError as exc:
            e = start + exc.index
            raise ConvergenceError(
                f"entry ({rows[e]}, {cols[e]}): {exc}",
                last_iterate=exc.last_iterate, index=(int(rows[e]), int(cols[e]))
            ) from exc
    S = np.zeros((p, p))
    S[rows, cols] = theta - mu[rows] * mu[cols]
    S[cols, rows] = S[rows, cols]
    return S
