"""
Cross-validated choice of robustification parameters.

Each parameter is written ``tau = C * rate(n, p)``. The rate is the
theoretical order for the estimator (see :data:`RATE_KINDS`) and the constant
``C`` is picked from a grid by K-fold cross-validation of the Huber mean.
"""

from dataclasses import asdict, dataclass, field

import numpy as np

from .covariance import as_data_matrix
from .factor import second_moment_scale
from .huber import DEFAULT_MAX_ITER, DEFAULT_TOL, huber_location_columns

RATE_KINDS = ("mean", "variance", "utype_cov", "huber_cov_entry", "factor")


def default_grid():
    return np.logspace(np.log10(0.5), np.log10(5.0), 10)


def robustification_rate(kind, n, p):
    """Theoretical order of the robustification parameter.

    =================  ==========================
    kind               rate
    =================  ==========================
    mean, variance     sqrt(n / log(n p))
    utype_cov          p sqrt(n / log p)
    huber_cov_entry    sqrt(n / log(n p^2))
    factor             sqrt(p / log n)
    =================  ==========================

    ``log p`` in the U-type rate is floored at ``log 2`` so ``p = 1`` stays
    finite.
    """
    if n < 2 or p < 1:
        raise ValueError("need n >= 2 and p >= 1")
    if kind in ("mean", "variance"):
        return float(np.sqrt(n / np.log(n * p)))
    if kind == "utype_cov":
        return float(p * np.sqrt(n / np.log(max(p, 2))))
    if kind == "huber_cov_entry":
        return float(np.sqrt(n / np.log(n * p * p)))
    if kind == "factor":
        return float(np.sqrt(p / np.log(n)))
    raise ValueError(f"unknown rate kind {kind!r}")


@dataclass(frozen=True)
class CvPlan:
    """Settings for cross-validated calibration.

    ``subset_size`` and ``entry_subset_size`` default to ``min(p, 20)``
    coordinates and ``min(50, p(p+1)/2)`` covariance entries. ``trim`` drops
    that fraction of the largest held-out squared errors (0 gives the plain
    criterion). With ``standardize`` the constants of :func:`calibrate_config`
    are measured in units of the sequences' standard deviation instead of the
    data's own units. ``column_scaled_variance`` calibrates the variance
    constant on squared columns divided by their robust scale, matching
    ``residual_variances(..., scale=second_moment_scale(X))``.
    """

    folds: int = 5
    grid: tuple = tuple(default_grid())
    subset_size: int | None = None
    entry_subset_size: int | None = None
    seed: int = 0
    trim: float = 0.0
    standardize: bool = False
    column_scaled_variance: bool = True

    def __post_init__(self):
        if self.folds < 2:
            raise ValueError("folds must be at least 2")
        g = np.asarray(self.grid, dtype=float)
        if g.size == 0 or np.any(g <= 0) or np.any(np.diff(g) <= 0):
            raise ValueError("grid must be nonempty, positive and ascending")
        if not 0.0 <= self.trim < 1.0:
            raise ValueError("trim must be in [0, 1)")
        object.__setattr__(self, "grid", tuple(float(c) for c in g))


def fold_assignment(n, folds, seed):
    """Seeded permutation of ``range(n)`` split into near-equal folds."""
    if n < folds:
        raise ValueError(f"{n} samples cannot fill {folds} folds")
    perm = np.random.default_rng(seed).permutation(n)
    return np.array_split(perm, folds)


def cv_scores(samples, grid, rate, folds=5, seed=0, trim=0.0,
              tol=DEFAULT_TOL, max_iter=DEFAULT_MAX_ITER):
    """CV criterion for every grid constant and every column.

    Parameters
    ----------
    samples : array_like of shape (n,) or (n, m)
    grid : sequence of float
    rate : float or array_like of shape (m,)
        ``tau = C * rate`` (per column when an array).

    Returns
    -------
    ndarray of shape (len(grid), m)
    """
    X = np.asarray(samples, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    n, m = X.shape
    grid = np.asarray(grid, dtype=float)
    rate = np.broadcast_to(np.asarray(rate, dtype=float), (m,))
    G = grid.size
    tau = (grid[:, None] * rate[None, :]).ravel()        # (G*m,), grid-major
    sq_err = np.empty((n, G, m))
    for held in fold_assignment(n, folds, seed):
        train = np.ones(n, dtype=bool)
        train[held] = False
        Xt = X[train]
        cols = np.tile(Xt, (1, G))                         # (n_train, G*m)
        est = huber_location_columns(cols, tau, tol=tol, max_iter=max_iter)
        est = est.reshape(G, m)
        sq_err[held] = (X[held][:, None, :] - est[None, :, :]) ** 2
    if trim > 0:
        keep = n - int(np.floor(trim * n))
        sq_err = np.sort(sq_err, axis=0)[:keep]
    return sq_err.sum(axis=0) / n


def cv_criterion(samples, C, rate, folds=5, seed=0, trim=0.0):
    """``CV(C) = (1/n) sum_k sum_{i in fold k} (x_i - mu_hat^{(-k)})^2``.

    ``mu_hat^{(-k)}`` is the Huber mean of the other folds with
    ``tau = C * rate``.
    """
    x = np.asarray(samples, dtype=float).ravel()
    return float(cv_scores(x, [C], rate, folds=folds, seed=seed, trim=trim)[0, 0])


def select_constant(samples, plan, rate):
    """Grid constant minimizing the CV criterion; ties go to the smaller C.

    Returns ``(C_hat, tau_hat)``.
    """
    x = np.asarray(samples, dtype=float).ravel()
    scores = cv_scores(x, plan.grid, rate, folds=plan.folds, seed=plan.seed,
                       trim=plan.trim)[:, 0]
    i = int(np.argmin(scores))
    C = plan.grid[i]
    return C, C * rate


def _shared_constant(seqs, plan, rate, seed):
    scores = cv_scores(seqs, plan.grid, rate, folds=plan.folds, seed=seed,
                       trim=plan.trim)
    total = scores.sum(axis=1)
    return plan.grid[int(np.argmin(total))]


def sequence_scale(x, axis=0):
    """Sample standard deviation along ``axis``, replaced by 1 where it is 0."""
    x = np.asarray(x, dtype=float)
    sd = np.std(x, axis=axis, ddof=1) if x.shape[axis] > 1 else np.zeros(
        np.delete(x.shape, axis))
    return np.where(sd > 0, sd, 1.0)


@dataclass
class Calibration:
    """Shared robustification constants selected by cross-validation.

    ``tau_*`` are the values used downstream. Each equals
    ``constant * scale * rate``. ``scale`` is 1 unless the plan standardizes,
    in which case it is the median standard deviation of the calibrated
    sequences.
    """

    n: int
    p: int
    c_mean: float
    c_cov: float
    c_var: float
    c_utype: float
    c_factor: float
    scales: dict = field(default_factory=dict)
    rates: dict = field(default_factory=dict)

    @property
    def tau_mean(self):
        return self.c_mean * self.scales["mean"] * self.rates["mean"]

    @property
    def tau_cov(self):
        return self.c_cov * self.scales["huber_cov_entry"] * self.rates["huber_cov_entry"]

    @property
    def tau_var(self):
        return self.c_var * self.scales["variance"] * self.rates["variance"]

    @property
    def tau_utype(self):
        return self.c_utype * self.scales["utype_cov"] * self.rates["utype_cov"]

    @property
    def gamma(self):
        return self.c_factor * self.scales["mean"] * self.rates["factor"]

    def taus(self):
        return {"tau_mean": self.tau_mean, "tau_cov": self.tau_cov,
                "tau_var": self.tau_var, "tau_utype": self.tau_utype,
                "gamma": self.gamma}

    def to_dict(self):
        d = asdict(self)
        d.update(self.taus())
        return d


def calibrate_config(data, plan=None, kinds=("mean", "variance", "huber_cov_entry",
                                             "utype_cov")):
    """Select shared constants for the robust mean, variance, covariance
    entries and U-type estimator.

    Sampled coordinates, entries and pairs are drawn from ``plan.seed``. The
    factor-regression constant reuses the mean constant. Kinds left out of
    ``kinds`` keep the largest grid constant.
    """
    X = as_data_matrix(data, min_rows=2)
    plan = plan or CvPlan()
    n, p = X.shape
    rng = np.random.default_rng(plan.seed)
    m = plan.subset_size if plan.subset_size is not None else min(p, 20)
    m = max(1, min(m, p))
    n_entries = p * (p + 1) // 2
    e = plan.entry_subset_size if plan.entry_subset_size is not None else min(50, n_entries)
    e = max(1, min(e, n_entries))

    coords = np.sort(rng.choice(p, size=m, replace=False))
    rows, cols = np.triu_indices(p)
    ent = np.sort(rng.choice(n_entries, size=e, replace=False))
    perm = rng.permutation(n)
    fold_seed = plan.seed

    rates = {k: robustification_rate(k, n, p) for k in RATE_KINDS}

    def scale_of(seqs):
        return float(np.median(sequence_scale(seqs))) if plan.standardize else 1.0

    C_max = plan.grid[-1]
    consts = {}
    scales = {}

    means = X[:, coords]
    scales["mean"] = scale_of(means)
    consts["mean"] = (_shared_constant(means, plan, scales["mean"] * rates["mean"], fold_seed)
                      if "mean" in kinds else C_max)

    sq = X[:, coords] ** 2
    if plan.column_scaled_variance:
        sq = sq / second_moment_scale(X[:, coords])
    scales["variance"] = scale_of(sq)
    consts["variance"] = (_shared_constant(sq, plan, scales["variance"] * rates["variance"],
                                           fold_seed) if "variance" in kinds else C_max)

    prods = X[:, rows[ent]] * X[:, cols[ent]]
    scales["huber_cov_entry"] = scale_of(prods)
    consts["huber_cov_entry"] = (
        _shared_constant(prods, plan, scales["huber_cov_entry"] * rates["huber_cov_entry"],
                         fold_seed) if "huber_cov_entry" in kinds else C_max)

    # disjoint pairs give an i.i.d. sequence of half squared distances
    half = n // 2
    d = X[perm[:half]] - X[perm[half:2 * half]]
    pair_seq = 0.5 * np.sum(d * d, axis=1)
    scales["utype_cov"] = scale_of(X) ** 2
    if "utype_cov" in kinds and half >= plan.folds:
        consts["utype_cov"] = _shared_constant(
            pair_seq[:, None], plan, scales["utype_cov"] * rates["utype_cov"], fold_seed)
    else:
        consts["utype_cov"] = C_max

    scales["factor"] = scales["mean"]
    return Calibration(n=n, p=p, c_mean=consts["mean"], c_cov=consts["huber_cov_entry"],
                       c_var=consts["variance"], c_utype=consts["utype_cov"],
                       c_factor=consts["mean"], scales=scales, rates=rates)
