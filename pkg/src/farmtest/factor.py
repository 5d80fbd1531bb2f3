"""
Latent factor estimation from a (robust) covariance matrix.

Loadings come from the top eigenpairs, ``b_k = sqrt(max(lambda_k, 0)) v_k``,
which makes ``B^T B`` diagonal. The averaged factor is recovered by Huber
regression of the column means on the loadings, and idiosyncratic variances
from Huber second moments of the squared columns.
"""

from dataclasses import dataclass, field

import numpy as np

from .exceptions import ConvergenceError
from .huber import DEFAULT_MAX_ITER, DEFAULT_TOL, huber_location_columns

FACTOR_TOL = 1e-10
FACTOR_MAX_ITER = 200
CHI2_1_MEDIAN = 0.454936423119572


@dataclass(frozen=True)
class EigDecomp:
    eigenvalues: np.ndarray   # descending
    eigenvectors: np.ndarray  # columns, matching eigenvalues


@dataclass(frozen=True)
class FactorFit:
    """Estimated factor structure for one sample.

    Attributes
    ----------
    K : int
        Number of factors used.
    loadings : ndarray of shape (p, K)
    factor : ndarray of shape (K,)
        Estimate of the averaged realized factor.
    residual_variances : ndarray of shape (p,)
        Idiosyncratic variances, floored at a small positive value.
    eigenvalues : ndarray of shape (K,)
        Retained eigenvalues ``max(lambda_k, 0)``.
    all_eigenvalues : ndarray of shape (p,)
        Full descending spectrum of the covariance estimate.
    floored : ndarray of int
        Features whose residual variance was raised to the floor.
    """

    K: int
    loadings: np.ndarray
    factor: np.ndarray
    residual_variances: np.ndarray
    eigenvalues: np.ndarray
    all_eigenvalues: np.ndarray
    floored: np.ndarray = field(default_factory=lambda: np.empty(0, dtype=int))


def _fix_signs(V):
    # largest-|entry| of each column made positive, ties to the lowest index
    idx = np.argmax(np.abs(V), axis=0)
    signs = np.sign(V[idx, np.arange(V.shape[1])])
    signs[signs == 0] = 1.0
    return V * signs


def jacobi_eigh(A, tol=1e-12, max_sweeps=100):
    """Cyclic Jacobi eigendecomposition of a symmetric matrix.

    Returns ``(eigenvalues, eigenvectors)`` unsorted. Converges when the
    off-diagonal Frobenius mass drops below ``tol * ||A||_F``.
    """
    A = np.array(A, dtype=float)
    p = A.shape[0]
    V = np.eye(p)
    norm = np.linalg.norm(A)
    if norm == 0:
        return np.zeros(p), V
    for _ in range(max_sweeps):
        off = np.sqrt(max(np.sum(A * A) - np.sum(np.diag(A) ** 2), 0.0))
        if off <= tol * norm:
            return np.diag(A).copy(), V
        for j in range(p - 1):
            for k in range(j + 1, p):
                if A[j, k] == 0.0:
                    continue
                theta = (A[k, k] - A[j, j]) / (2.0 * A[j, k])
                t = np.sign(theta) / (abs(theta) + np.sqrt(theta * theta + 1.0))
                if theta == 0:
                    t = 1.0
                c = 1.0 / np.sqrt(t * t + 1.0)
                s = t * c
                aj = A[:, j].copy()
                ak = A[:, k].copy()
                A[:, j] = c * aj - s * ak
                A[:, k] = s * aj + c * ak
                rj = A[j, :].copy()
                rk = A[k, :].copy()
                A[j, :] = c * rj - s * rk
                A[k, :] = s * rj + c * rk
                vj = V[:, j].copy()
                vk = V[:, k].copy()
                V[:, j] = c * vj - s * vk
                V[:, k] = s * vj + c * vk
    raise ConvergenceError(f"Jacobi did not converge in {max_sweeps} sweeps")


def symmetric_eig(A, method="lapack"):
    """Full eigendecomposition, eigenvalues descending, deterministic signs.

    ``method="lapack"`` uses :func:`numpy.linalg.eigh`; ``method="jacobi"``
    the pure-numpy :func:`jacobi_eigh` (slow, for small matrices).
    """
    A = np.asarray(A, dtype=float)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ValueError("A must be square")
    if not np.all(np.isfinite(A)):
        raise ValueError("A must be finite")
    if not np.array_equal(A, A.T):
        raise ValueError("A must be exactly symmetric")
    if method == "lapack":
        w, V = np.linalg.eigh(A)
    elif method == "jacobi":
        w, V = jacobi_eigh(A)
    else:
        raise ValueError(f"unknown method {method!r}")
    order = np.argsort(-w, kind="stable")
    return EigDecomp(w[order], _fix_signs(V[:, order]))


def estimate_loadings(cov, K, eig=None):
    """Loadings ``(sqrt(max(lambda_1, 0)) v_1, ..., sqrt(max(lambda_K, 0)) v_K)``."""
    if eig is None:
        eig = symmetric_eig(cov)
    p = eig.eigenvalues.size
    if not 1 <= K <= p:
        raise ValueError(f"K must be in [1, {p}], got {K}")
    lam = np.maximum(eig.eigenvalues[:K], 0.0)
    return eig.eigenvectors[:, :K] * np.sqrt(lam)


def _huber_objective(r, gamma):
    a = np.abs(r)
    return np.sum(np.where(a <= gamma, 0.5 * r * r, gamma * a - 0.5 * gamma * gamma))


def estimate_factors(xbar, loadings, gamma, tol=FACTOR_TOL, max_iter=FACTOR_MAX_ITER):
    """Huber regression of ``xbar`` on the rows of ``loadings``.

    Minimizes ``sum_j huber_loss(xbar_j - b_j^T f, gamma)`` over ``f``.
    Starts from least squares and takes Newton steps on the in-band rows
    (IRLS weights ``min(1, gamma / |r|)`` when the in-band rows are rank
    deficient), halving the step until the objective does not increase.
    ``gamma=np.inf`` returns the least-squares solution.
    """
    xbar = np.asarray(xbar, dtype=float)
    B = np.asarray(loadings, dtype=float)
    if B.ndim != 2 or B.shape[0] != xbar.size:
        raise ValueError("loadings must have shape (p, K) matching xbar")
    K = B.shape[1]
    if np.linalg.matrix_rank(B) < K:
        raise ValueError("loadings are rank deficient")
    if not gamma > 0:
        raise ValueError("gamma must be positive")
    f = np.linalg.lstsq(B, xbar, rcond=None)[0]
    if np.isinf(gamma):
        return f
    gscale = max(1.0, gamma * np.abs(B).sum())
    r = xbar - B @ f
    obj = _huber_objective(r, gamma)
    for _ in range(max_iter):
        psi = np.clip(r, -gamma, gamma)
        grad = B.T @ psi
        if np.linalg.norm(grad) <= tol * gscale:
            return f
        inband = np.abs(r) <= gamma
        H = B[inband].T @ B[inband]
        if inband.sum() < K or np.linalg.cond(H) > 1e12:
            w = np.minimum(1.0, gamma / np.maximum(np.abs(r), 1e-300))
            H = (B * w[:, None]).T @ B
        step = np.linalg.solve(H, grad)
        t = 1.0
        while True:
            f_new = f + t * step
            r_new = xbar - B @ f_new
            obj_new = _huber_objective(r_new, gamma)
            if obj_new <= obj or t < 1e-12:
                break
            t *= 0.5
        if np.all(f_new == f) or obj_new > obj:
            # no representable descent left: at the minimizer to precision
            return f
        f, r, obj = f_new, r_new, obj_new
    raise ConvergenceError(
        f"factor regression did not converge in {max_iter} iterations",
        last_iterate=f)


def variance_floor(reference_variances, rel=1e-8, absolute=1e-12):
    """Positive floor for idiosyncratic variances."""
    med = float(np.median(np.asarray(reference_variances, dtype=float)))
    return max(rel * med, absolute)


def second_moment_scale(data):
    """Robust per-column scale of ``X_j^2``: ``median(X_j^2) / median(chi2_1)``.

    Matches ``E X_j^2`` for centred Gaussian columns. Columns with a zero
    median fall back to ``mean(X_j^2)``, then to 1.
    """
    S = np.asarray(data, dtype=float) ** 2
    s = np.median(S, axis=0) / CHI2_1_MEDIAN
    s = np.where(s > 0, s, S.mean(axis=0))
    return np.where(s > 0, s, 1.0)


def residual_variances(data, mu_hat, loadings, tau_var, floor=None, scale=None,
                       tol=DEFAULT_TOL, max_iter=DEFAULT_MAX_ITER):
    """Idiosyncratic variances ``theta_j - mu_j^2 - ||b_j||^2``.

    ``theta_j`` is the Huber location of the squared column ``X_j^2``
    constrained to at least ``mu_j^2 + ||b_j||^2``. Results are raised to
    ``floor`` (default :func:`variance_floor` of the column variances).

    Parameters
    ----------
    tau_var : float or ndarray
        Robustification parameter for the squared columns.
    scale : ndarray of shape (p,), optional
        Per-column multiplier for ``tau_var``, e.g. from
        :func:`second_moment_scale`, so that ``tau_var`` is unit free.
    """
    X = np.asarray(data, dtype=float)
    mu_hat = np.asarray(mu_hat, dtype=float)
    B = np.asarray(loadings, dtype=float).reshape(X.shape[1], -1)
    lb = mu_hat ** 2 + np.sum(B * B, axis=1)
    if scale is not None:
        tau_var = tau_var * np.asarray(scale, dtype=float)
    try:
        theta = huber_location_columns(X * X, tau_var, tol=tol, max_iter=max_iter)
    except ConvergenceError as exc:
        raise ConvergenceError(f"residual variance, column {exc.index}: {exc}",
                               last_iterate=exc.last_iterate, index=exc.index) from exc
    sig = np.maximum(theta, lb) - lb
    if floor is None:
        floor = variance_floor(X.var(axis=0))
    return np.maximum(sig, floor)


def select_num_factors(eigenvalues, K_max):
    """Eigenvalue-ratio estimate ``argmax_{k <= K_max} lambda_k / lambda_{k+1}``.

    Ratios with ``lambda_{k+1} <= 0 < lambda_k`` count as infinite; ratios
    with ``lambda_k <= 0`` are skipped. Ties go to the smallest k.
    """
    lam = np.asarray(eigenvalues, dtype=float)
    if K_max < 1:
        raise ValueError("K_max must be at least 1")
    if lam.size < K_max + 1:
        raise ValueError(f"need {K_max + 1} eigenvalues, got {lam.size}")
    best_k, best = None, -np.inf
    for k in range(1, K_max + 1):
        a, b = lam[k - 1], lam[k]
        if a <= 0:
            continue
        ratio = np.inf if b <= 0 else a / b
        if ratio > best:
            best_k, best = k, ratio
    if best_k is None:
        raise ValueError("no positive eigenvalue among the first K_max")
    return best_k
