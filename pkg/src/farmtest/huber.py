"""
Huber loss, its score function, and one-dimensional Huber M-estimators.

Every robust estimate in the package reduces to solving

    sum_i psi_tau(x_i - theta) = 0

for a column of numbers. The column-batched solver :func:`huber_location_columns`
does that for many columns at once; the scalar helpers wrap it.
"""

from dataclasses import dataclass

import numpy as np

from .exceptions import ConvergenceError

DEFAULT_TOL = 1e-10
DEFAULT_MAX_ITER = 100


@dataclass(frozen=True)
class LocationEstimate:
    value: float
    iterations: int
    residual: float


def _check_tau(tau):
    tau = np.asarray(tau, dtype=float)
    if np.any(np.isnan(tau)) or np.any(tau <= 0):
        raise ValueError("robustification parameter tau must be positive")
    return tau


def _check_finite(u, name="u"):
    u = np.asarray(u, dtype=float)
    if not np.all(np.isfinite(u)):
        raise ValueError(f"{name} must be finite")
    return u


def huber_loss(u, tau):
    """Huber loss: quadratic on ``[-tau, tau]``, linear outside.

    ``tau=np.inf`` gives the plain quadratic ``u**2 / 2``. Works elementwise on
    arrays.
    """
    tau = _check_tau(tau)
    u = _check_finite(u)
    a = np.abs(u)
    with np.errstate(invalid="ignore"):
        out = np.where(a <= tau, 0.5 * u * u, tau * a - 0.5 * tau * tau)
    return out[()] if out.ndim == 0 else out


def huber_psi(u, tau):
    """Derivative of :func:`huber_loss`, ``sign(u) * min(|u|, tau)``."""
    tau = _check_tau(tau)
    u = _check_finite(u)
    out = np.clip(u, -tau, tau)
    return out[()] if out.ndim == 0 else out


def huber_location_columns(X, tau, tol=DEFAULT_TOL, max_iter=DEFAULT_MAX_ITER,
                           return_info=False):
    """Huber location estimate of every column of ``X``.

    Parameters
    ----------
    X : ndarray of shape (n, m)
        One estimation problem per column.
    tau : float or ndarray of shape (m,)
        Robustification parameter(s); ``np.inf`` gives the column mean.
    tol : float
        Convergence threshold on ``|sum_i psi(x_i - theta)| / n``.
    max_iter : int
        Iteration cap; :class:`ConvergenceError` is raised past it.
    return_info : bool
        Also return per-column iteration counts and final residuals.

    Returns
    -------
    theta : ndarray of shape (m,)
    iterations, residuals : ndarray of shape (m,)
        Only when ``return_info`` is true.

    Notes
    -----
    Safeguarded Newton: the Newton step ``theta + S / #{|r| <= tau}`` is
    taken when it stays inside the current sign bracket of the score ``S``,
    otherwise (or when every residual is clipped, or the last step did not
    halve ``|S|``) the bracket is bisected. The bracket starts at
    ``[min x, max x]`` where the score changes sign, so the loop always
    converges.
    """
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    n, m = X.shape
    if n < 1:
        raise ValueError("need at least one sample")
    if not np.all(np.isfinite(X)):
        raise ValueError("samples must be finite")
    tau = np.broadcast_to(_check_tau(tau), (m,)).astype(float)

    theta = np.empty(m)
    iters = np.zeros(m, dtype=int)
    resid = np.zeros(m)

    inf_cols = np.isinf(tau)
    if inf_cols.any():
        theta[inf_cols] = X[:, inf_cols].mean(axis=0)
        resid[inf_cols] = np.abs((X[:, inf_cols] - theta[inf_cols]).sum(axis=0)) / n

    active = np.flatnonzero(~inf_cols)
    if active.size:
        Xa = X[:, active]
        ta = tau[active]
        th = np.median(Xa, axis=0)
        lo = Xa.min(axis=0)
        hi = Xa.max(axis=0)
        prev_abs = np.full(active.size, np.inf)
        it = np.zeros(active.size, dtype=int)
        res = np.empty(active.size)
        todo = np.arange(active.size)
        for k in range(max_iter + 1):
            r = Xa[:, todo] - th[todo]
            t = ta[todo]
            S = np.clip(r, -t, t).sum(axis=0)
            res[todo] = np.abs(S) / n
            width = hi[todo] - lo[todo]
            scale = np.maximum(np.abs(lo[todo]), np.abs(hi[todo]))
            done = (res[todo] <= tol) | (width <= 4 * np.finfo(float).eps * scale)
            it[todo] = k
            todo_next = todo[~done]
            if todo_next.size == 0:
                todo = todo_next
                break
            if k == max_iter:
                todo = todo_next
                break
            keep = ~done
            S = S[keep]
            r = r[:, keep]
            t = t[keep]
            cur = th[todo_next]
            lo_c = np.where(S > 0, cur, lo[todo_next])
            hi_c = np.where(S < 0, cur, hi[todo_next])
            lo[todo_next] = lo_c
            hi[todo_next] = hi_c
            m_in = (np.abs(r) <= t).sum(axis=0)
            with np.errstate(divide="ignore", invalid="ignore"):
                newton = cur + S / m_in
            ok = (m_in > 0) & (newton > lo_c) & (newton < hi_c) \
                & (np.abs(S) <= 0.5 * prev_abs[todo_next])
            # first step always tries Newton
            if k == 0:
                ok = (m_in > 0) & (newton > lo_c) & (newton < hi_c)
            prev_abs[todo_next] = np.abs(S)
            th[todo_next] = np.where(ok, newton, 0.5 * (lo_c + hi_c))
            todo = todo_next
        if todo.size:
            j = int(active[todo[0]])
            raise ConvergenceError(
                f"Huber location did not converge in {max_iter} iterations "
                f"(column {j}, residual {res[todo[0]]:.3e})",
                last_iterate=float(th[todo[0]]), index=j)
        theta[active] = th
        iters[active] = it
        resid[active] = res

    if return_info:
        return theta, iters, resid
    return theta


def huber_location(samples, tau, tol=DEFAULT_TOL, max_iter=DEFAULT_MAX_ITER):
    """Minimize ``sum_i huber_loss(x_i - theta, tau)`` over ``theta``.

    Returns a :class:`LocationEstimate`. ``tau=np.inf`` gives the sample mean.
    """
    x = np.asarray(samples, dtype=float).ravel()
    if x.size < 1:
        raise ValueError("need at least one sample")
    theta, iters, resid = huber_location_columns(
        x[:, None], float(tau), tol=tol, max_iter=max_iter, return_info=True)
    return LocationEstimate(float(theta[0]), int(iters[0]), float(resid[0]))


def huber_second_moment(squared_samples, tau, lower_bound,
                        tol=DEFAULT_TOL, max_iter=DEFAULT_MAX_ITER):
    """Huber location of squared observations, constrained to ``>= lower_bound``.

    The objective is convex in theta, so the constrained minimizer is the
    unconstrained one clamped at the bound.
    """
    if not np.isfinite(lower_bound):
        raise ValueError("lower_bound must be finite")
    est = huber_location(squared_samples, tau, tol=tol, max_iter=max_iter)
    return max(est.value, float(lower_bound))


def huber_pairwise_moment(products, tau, tol=DEFAULT_TOL, max_iter=DEFAULT_MAX_ITER):
    """Huber estimate of ``E[X_j X_k]`` from the products ``X_ij * X_ik``."""
    return huber_location(products, tau, tol=tol, max_iter=max_iter).value
