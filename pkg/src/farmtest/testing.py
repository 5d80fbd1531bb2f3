"""
Factor-adjusted robust multiple testing.

The one-sample pipeline :func:`farmtest` runs three stages:

1. estimate a covariance matrix, take its top-K eigenpairs as loadings and
   fit the averaged factor by Huber regression of the column means;
2. form ``T_j = sqrt(n / sigma_j) * (mu_j - b_j^T f)`` from Huber means and
   idiosyncratic variances;
3. pick the smallest threshold whose approximate FDP
   ``2 p pi0 Phi(-z) / R(z)`` is at most ``alpha`` and reject ``|T_j| >= z``.

:func:`farmtest_two_sample` and :func:`farmtest_split` reuse the stages.
"""

import math
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.special import erfc

from .covariance import (adaptive_huber_covariance, as_data_matrix, sample_covariance,
                         utype_covariance)
from .exceptions import FarmTestError, StageError
from .factor import (FACTOR_MAX_ITER, FACTOR_TOL, FactorFit, estimate_factors,
                     estimate_loadings, residual_variances, select_num_factors,
                     second_moment_scale, symmetric_eig, variance_floor)
from .huber import DEFAULT_MAX_ITER, DEFAULT_TOL, huber_location_columns
from .tuning import CvPlan, calibrate_config, default_grid

METHOD_TAGS = ("FARM-H", "FARM-U", "FAM", "Naive", "Oracle")
COVARIANCE_KINDS = ("utype", "huber", "sample")
VARIANCE_SCALES = ("column", "none")

_SQRT2 = math.sqrt(2.0)
_TAU_NAMES = ("tau_mean", "tau_cov", "tau_var", "tau_utype", "gamma")
_CONST_FOR = {"tau_mean": "c_mean", "tau_cov": "c_cov", "tau_var": "c_var",
              "tau_utype": "c_utype", "gamma": "c_factor"}
_KIND_FOR = {"c_mean": "mean", "c_cov": "huber_cov_entry", "c_var": "variance",
             "c_utype": "utype_cov"}


# -- normal distribution ----------------------------------------------------

def std_normal_cdf(z):
    """Standard normal CDF through the complementary error function."""
    z = np.asarray(z, dtype=float)
    out = 0.5 * erfc(-z / _SQRT2)
    return float(out) if out.ndim == 0 else out


def std_normal_ppf(q):
    """Inverse of :func:`std_normal_cdf` by safeguarded Newton iteration.

    Solving against our own CDF keeps a single approximation source.
    """
    q = float(q)
    if not 0.0 < q < 1.0:
        raise ValueError("q must lie in (0, 1)")
    if q > 0.5:
        return -std_normal_ppf(1.0 - q)
    if q == 0.5:
        return 0.0
    lo, hi = -40.0, 0.0
    z = -math.sqrt(-2.0 * math.log(q))
    z = min(max(z, lo), hi)
    for _ in range(200):
        F = 0.5 * math.erfc(-z / _SQRT2)
        if F > q:
            hi = z
        elif F < q:
            lo = z
        else:
            return z
        dens = math.exp(-0.5 * z * z) / math.sqrt(2.0 * math.pi)
        step = (F - q) / dens if dens > 0 else math.inf
        z_new = z - step
        if not lo < z_new < hi:
            z_new = 0.5 * (lo + hi)
        if abs(z_new - z) <= 1e-15 * max(1.0, abs(z)) or hi - lo <= 1e-15 * max(1.0, abs(z)):
            return z_new
        z = z_new
    return z


def two_sided_pvalues(statistics):
    """``P_j = 2 Phi(-|T_j|)``."""
    T = np.asarray(statistics, dtype=float)
    return erfc(np.abs(T) / _SQRT2)


# -- FDP machinery ------------------------------------------------------------

def estimate_pi0(pvalues, eta):
    """Storey's null proportion ``#{P_j > eta} / ((1 - eta) p)``, capped at 1."""
    P = np.asarray(pvalues, dtype=float)
    if not 0.0 <= eta < 1.0:
        raise ValueError("eta must lie in [0, 1)")
    if P.size == 0:
        raise ValueError("no p-values")
    return min(1.0, np.count_nonzero(P > eta) / ((1.0 - eta) * P.size))


def num_rejections(z, statistics):
    """``R(z) = #{j : |T_j| >= z}``."""
    return int(np.count_nonzero(np.abs(np.asarray(statistics, dtype=float)) >= z))


def approx_fdp(z, statistics, pi0_hat=1.0):
    """``2 p pi0 Phi(-z) / R(z)``, taken as 0 when nothing is rejected."""
    if z < 0:
        raise ValueError("z must be nonnegative")
    T = np.asarray(statistics, dtype=float)
    R = num_rejections(z, T)
    if R == 0:
        return 0.0
    return 2.0 * T.size * pi0_hat * std_normal_cdf(-z) / R


def critical_value(statistics, alpha, pi0_hat=1.0):
    """Smallest ``z >= 0`` with ``approx_fdp(z) <= alpha``.

    ``R(z)`` is constant on each plateau ``(u_{k+1}, u_k]`` between
    consecutive distinct ``|T|`` values and the approximate FDP decreases
    inside a plateau, so a plateau is feasible iff its right end is. On the
    lowest feasible plateau the boundary ``2 p pi0 Phi(-z) = alpha R`` is
    solved exactly. When no plateau with ``R >= 1`` is feasible the result is
    the next float above ``max |T|``, where nothing is rejected.
    """
    if not 0.0 < alpha < 1.0:
        raise ValueError("alpha must lie in (0, 1)")
    a = np.abs(np.asarray(statistics, dtype=float))
    p = a.size
    if p == 0:
        raise ValueError("no statistics")
    if pi0_hat <= 0:
        return 0.0
    u = np.unique(a)[::-1]                        # distinct values, descending
    R = p - np.searchsorted(np.sort(a), u, side="left")
    fdp_at_right = 2.0 * p * pi0_hat * std_normal_cdf(-u) / R
    feasible = np.flatnonzero(fdp_at_right <= alpha)
    if feasible.size == 0:
        return float(np.nextafter(u[0], np.inf))
    k = int(feasible[-1])                         # largest R = smallest z
    ratio = alpha * R[k] / (2.0 * p * pi0_hat)
    z_star = 0.0 if ratio >= 0.5 else -std_normal_ppf(ratio)
    if k == u.size - 1:
        z = max(z_star, 0.0)
    else:
        lower = u[k + 1]
        z = z_star if z_star > lower else float(np.nextafter(lower, np.inf))
    return float(min(z, u[k]))


# -- configuration and results ----------------------------------------------

@dataclass(frozen=True)
class RobustConfig:
    """All knobs of the testing pipeline.

    Robustification parameters resolve in order: ``tau_inf`` (everything
    infinite), explicit ``tau_*``/``gamma`` values, explicit ``c_*``
    constants, and finally cross-validation.

    ``K=None`` selects the number of factors by the eigenvalue ratio over
    ``1..k_max``. ``robust_factor_mean`` regresses the Huber means instead of
    the plain column means on the loadings.
    """

    alpha: float = 0.05
    eta: float = 0.5
    K: int | None = None
    k_max: int = 10
    covariance_kind: str = "utype"
    tau_inf: bool = False
    tau_mean: float | None = None
    tau_cov: float | None = None
    tau_var: float | None = None
    tau_utype: float | None = None
    gamma: float | None = None
    c_mean: float | None = None
    c_cov: float | None = None
    c_var: float | None = None
    c_utype: float | None = None
    c_factor: float | None = None
    cv_folds: int = 5
    cv_grid: tuple = tuple(default_grid())
    cv_subset_size: int | None = None
    cv_entry_subset_size: int | None = None
    cv_trim: float = 0.0
    cv_standardize: bool = False
    variance_scale: str = "column"
    robust_factor_mean: bool = False
    split_shuffle: bool = False
    tol: float = DEFAULT_TOL
    max_iter: int = DEFAULT_MAX_ITER
    factor_tol: float = FACTOR_TOL
    factor_max_iter: int = FACTOR_MAX_ITER
    variance_floor_rel: float = 1e-8
    variance_floor_abs: float = 1e-12
    seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.alpha < 1.0:
            raise ValueError("alpha must lie in (0, 1)")
        if not 0.0 <= self.eta < 1.0:
            raise ValueError("eta must lie in [0, 1)")
        if self.cv_folds < 2:
            raise ValueError("cv_folds must be at least 2")
        if self.covariance_kind not in COVARIANCE_KINDS:
            raise ValueError(f"covariance_kind must be one of {COVARIANCE_KINDS}")
        if self.variance_scale not in VARIANCE_SCALES:
            raise ValueError(f"variance_scale must be one of {VARIANCE_SCALES}")
        if self.K is not None and self.K < 1:
            raise ValueError("K must be positive")
        if self.k_max < 1:
            raise ValueError("k_max must be positive")
        object.__setattr__(self, "cv_grid", tuple(float(c) for c in self.cv_grid))

    @classmethod
    def fam(cls, **kwargs):
        """Non-robust baseline: sample covariance and infinite tau everywhere."""
        kwargs.setdefault("covariance_kind", "sample")
        return cls(tau_inf=True, **kwargs)

    @property
    def method_tag(self):
        if self.covariance_kind == "sample":
            return "FAM"
        return "FARM-U" if self.covariance_kind == "utype" else "FARM-H"

    def cv_plan(self):
        return CvPlan(folds=self.cv_folds, grid=self.cv_grid,
                      subset_size=self.cv_subset_size,
                      entry_subset_size=self.cv_entry_subset_size,
                      seed=self.seed, trim=self.cv_trim,
                      standardize=self.cv_standardize,
                      column_scaled_variance=self.variance_scale == "column")

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)


@dataclass(frozen=True)
class TestResult:
    """Outcome of one multiple-testing run."""

    statistics: np.ndarray
    pvalues: np.ndarray
    pi0_hat: float
    z_alpha: float
    rejected: np.ndarray
    fdp_estimate: float
    method_tag: str
    alpha: float
    eta: float
    taus: dict = field(default_factory=dict)
    fits: tuple = ()
    mu_hat: np.ndarray | None = None

    __test__ = False  # not a pytest class

    @property
    def num_rejections(self):
        return int(self.rejected.size)

    def to_dict(self, feature_names=None):
        rej = [int(j) for j in self.rejected]
        out = {
            "method": self.method_tag,
            "alpha": self.alpha,
            "eta": self.eta,
            "pi0_hat": self.pi0_hat,
            "z_alpha": self.z_alpha,
            "fdp_estimate": self.fdp_estimate,
            "num_rejections": len(rej),
            "rejected": rej,
            "statistics": [float(t) for t in self.statistics],
            "pvalues": [float(q) for q in self.pvalues],
            "taus": {k: float(v) for k, v in self.taus.items()},
            "num_factors": [int(f.K) for f in self.fits],
            # features whose residual variance sits at the floor; their
            # statistics are unreliable
            "floored": sorted({int(j) for f in self.fits for j in f.floored}),
        }
        if feature_names is not None:
            out["rejected_names"] = [str(feature_names[j]) for j in rej]
        return out


def decide(statistics, alpha, eta=0.0, method_tag="FARM-U", pi0_hat=None, **extra):
    """Step 3: p-values, null proportion, threshold and rejections.

    With ``eta == 0`` the null proportion is fixed at 1 so the threshold is
    the plain one. ``pi0_hat`` overrides the estimate.
    """
    T = np.asarray(statistics, dtype=float)
    P = two_sided_pvalues(T)
    if pi0_hat is None:
        pi0_hat = 1.0 if eta == 0 else estimate_pi0(P, eta)
    z = critical_value(T, alpha, pi0_hat)
    rejected = np.flatnonzero(np.abs(T) >= z)
    fdp = approx_fdp(z, T, pi0_hat)
    return TestResult(statistics=T, pvalues=P, pi0_hat=float(pi0_hat), z_alpha=z,
                      rejected=rejected, fdp_estimate=float(fdp), method_tag=method_tag,
                      alpha=alpha, eta=eta, **extra)


# -- pipeline stages ----------------------------------------------------------

def resolve_taus(data, config):
    """Robustification parameters for ``data`` under ``config``.

    Returns a dict with ``tau_mean``, ``tau_cov``, ``tau_var``, ``tau_utype``
    and ``gamma``.
    """
    if config.tau_inf:
        return dict.fromkeys(_TAU_NAMES, math.inf)
    out = {k: getattr(config, k) for k in _TAU_NAMES}
    missing = [k for k, v in out.items() if v is None]
    if not missing:
        return {k: float(v) for k, v in out.items()}
    consts = {c: getattr(config, c) for c in _CONST_FOR.values()}
    kinds = []
    for k in missing:
        c = _CONST_FOR[k]
        if k == "gamma" and consts["c_factor"] is None:
            c = "c_mean"
        if consts[c] is None and c in _KIND_FOR:
            kinds.append(_KIND_FOR[c])
    unused = {"utype": "huber_cov_entry", "huber": "utype_cov"}
    skip = {unused.get(config.covariance_kind), *(
        ("huber_cov_entry", "utype_cov") if config.covariance_kind == "sample" else ())}
    kinds = tuple(k for k in dict.fromkeys(kinds) if k not in skip)
    cal = calibrate_config(data, config.cv_plan(), kinds=kinds)
    for c, v in consts.items():
        if v is not None:
            setattr(cal, c, float(v))
    if consts["c_factor"] is None:
        cal.c_factor = cal.c_mean
    for k, v in cal.taus().items():
        if out[k] is None:
            out[k] = v
    return {k: float(v) for k, v in out.items()}


def estimate_covariance(data, config, taus, mu=None):
    kind = config.covariance_kind
    if kind == "utype":
        return utype_covariance(data, taus["tau_utype"])
    if kind == "huber":
        return adaptive_huber_covariance(data, taus["tau_mean"], taus["tau_cov"],
                                         tol=config.tol, max_iter=config.max_iter, mu=mu)
    return sample_covariance(data)


def choose_num_factors(eigenvalues, config):
    p = eigenvalues.size
    if config.K is not None:
        if config.K > p - 1:
            raise ValueError(f"K={config.K} needs p >= K + 1, got p={p}")
        return config.K
    return select_num_factors(eigenvalues, min(config.k_max, p - 1))


def fit_loadings(data, config, taus, mu=None):
    """Covariance, eigendecomposition and loadings (the first half of Step 1).

    Returns ``(cov, eig, K, loadings)``.
    """
    cov = estimate_covariance(data, config, taus, mu=mu)
    eig = symmetric_eig(cov)
    K = choose_num_factors(eig.eigenvalues, config)
    return cov, eig, K, estimate_loadings(cov, K, eig=eig)


def fit_factor_model(data, config, taus, loadings_info=None):
    """Steps 1-2 up to the statistics for one sample.

    Parameters
    ----------
    loadings_info : tuple, optional
        ``(cov, eig, K, loadings)`` from :func:`fit_loadings`, e.g. computed
        on another half of the data. Estimated from ``data`` when omitted.

    Returns
    -------
    fit : FactorFit
    mu_hat : ndarray of shape (p,)
    """
    X = data
    mu_hat = _stage("robust means", huber_location_columns, X, taus["tau_mean"],
                    tol=config.tol, max_iter=config.max_iter)
    if loadings_info is None:
        loadings_info = _stage("covariance", fit_loadings, X, config, taus, mu=mu_hat)
    cov, eig, K, B = loadings_info
    target = mu_hat if config.robust_factor_mean else X.mean(axis=0)
    f = _stage("factor regression", estimate_factors, target, B, taus["gamma"],
               tol=config.factor_tol, max_iter=config.factor_max_iter)
    floor = variance_floor(np.diag(cov), rel=config.variance_floor_rel,
                           absolute=config.variance_floor_abs)
    scale = second_moment_scale(X) if config.variance_scale == "column" else None
    sig = _stage("residual variances", residual_variances, X, mu_hat, B, taus["tau_var"],
                 floor=floor, scale=scale, tol=config.tol, max_iter=config.max_iter)
    fit = FactorFit(K=K, loadings=B, factor=f, residual_variances=sig,
                    eigenvalues=np.maximum(eig.eigenvalues[:K], 0.0),
                    all_eigenvalues=eig.eigenvalues,
                    floored=np.flatnonzero(sig <= floor))
    return fit, mu_hat


def test_statistics(mu_hat, fit, n):
    """``T_j = sqrt(n / sigma_j) * (mu_j - b_j^T f)``."""
    mu_hat = np.asarray(mu_hat, dtype=float)
    if mu_hat.shape != fit.residual_variances.shape or \
            fit.loadings.shape[0] != mu_hat.size:
        raise ValueError("shape mismatch between means and factor fit")
    if np.any(fit.residual_variances <= 0):
        raise ValueError("residual variances must be positive")
    adjusted = mu_hat - fit.loadings @ fit.factor
    return np.sqrt(n / fit.residual_variances) * adjusted


test_statistics.__test__ = False


def _stage(name, func, *args, **kwargs):
    try:
        return func(*args, **kwargs)
    except StageError:
        raise
    except (FarmTestError, ArithmeticError, np.linalg.LinAlgError, ValueError) as exc:
        raise StageError(name, exc) from exc


def _check_sizes(X, config, min_n):
    n, p = X.shape
    need = max(config.cv_folds, min_n)
    if n < need:
        raise ValueError(f"need at least {need} observations, got {n}")
    if p < (config.K or 1) + 1:
        raise ValueError(f"need p >= K + 1 columns, got p={p}")


# -- pipelines ----------------------------------------------------------------

def farmtest(data, config=None):
    """One-sample factor-adjusted robust multiple test of ``H0j: mu_j = 0``.

    Parameters
    ----------
    data : array_like of shape (n, p)
        Rows are observations, columns are hypotheses.
    config : RobustConfig, optional

    Returns
    -------
    TestResult
    """
    config = config or RobustConfig()
    X = as_data_matrix(data)
    _check_sizes(X, config, 4)
    taus = _stage("calibration", resolve_taus, X, config)
    fit, mu_hat = fit_factor_model(X, config, taus)
    T = test_statistics(mu_hat, fit, X.shape[0])
    return decide(T, config.alpha, config.eta, method_tag=config.method_tag,
                  taus=taus, fits=(fit,), mu_hat=mu_hat)


def farmtest_two_sample(data1, data2, config=None):
    """Two-sample test of ``H0j: mu_1j = mu_2j``.

    Each group gets its own factor fit; the statistic is
    ``(a_1j - a_2j) / sqrt(sigma_1j / n_1 + sigma_2j / n_2)`` with
    ``a_gj = mu_gj - b_gj^T f_g``.
    """
    config = config or RobustConfig()
    X1 = as_data_matrix(data1)
    X2 = as_data_matrix(data2)
    if X1.shape[1] != X2.shape[1]:
        raise ValueError(f"groups have different p: {X1.shape[1]} vs {X2.shape[1]}")
    _check_sizes(X1, config, 4)
    _check_sizes(X2, config, 4)
    parts = []
    for X in (X1, X2):
        taus = _stage("calibration", resolve_taus, X, config)
        fit, mu_hat = fit_factor_model(X, config, taus)
        parts.append((X.shape[0], taus, fit, mu_hat))
    T = two_sample_statistics(*[(mu, fit, n) for n, _, fit, mu in parts])
    taus = {f"{k}_{g}": v for g, (_, t, _, _) in enumerate(parts, 1) for k, v in t.items()}
    return decide(T, config.alpha, config.eta, method_tag=config.method_tag, taus=taus,
                  fits=(parts[0][2], parts[1][2]))


def two_sample_statistics(group1, group2):
    """Combine ``(mu_hat, fit, n)`` of two groups into two-sample statistics."""
    (mu1, fit1, n1), (mu2, fit2, n2) = group1, group2
    a1 = mu1 - fit1.loadings @ fit1.factor
    a2 = mu2 - fit2.loadings @ fit2.factor
    se = np.sqrt(fit1.residual_variances / n1 + fit2.residual_variances / n2)
    return (a1 - a2) / se


def split_indices(n, shuffle=False, seed=0):
    """First ``ceil(n/2)`` rows (after an optional seeded shuffle) and the rest."""
    idx = np.random.default_rng(seed).permutation(n) if shuffle else np.arange(n)
    m = (n + 1) // 2
    return idx[:m], idx[m:]


def farmtest_split(data, config=None):
    """Sample-splitting variant: loadings from one half, inference on the other.

    The approximate FDP uses ``2 p Phi(-z) / R(z)`` (no null-proportion
    correction).
    """
    config = config or RobustConfig()
    X = as_data_matrix(data)
    if X.shape[0] < 8:
        raise ValueError("sample splitting needs at least 8 observations")
    first, second = split_indices(X.shape[0], config.split_shuffle, config.seed)
    X1, X2 = X[first], X[second]
    _check_sizes(X2, config, 4)
    taus1 = _stage("calibration", resolve_taus, X1, config)
    mu1 = None
    if config.covariance_kind == "huber":
        mu1 = _stage("robust means", huber_location_columns, X1, taus1["tau_mean"],
                     tol=config.tol, max_iter=config.max_iter)
    info = _stage("covariance", fit_loadings, X1, config, taus1, mu=mu1)
    taus2 = _stage("calibration", resolve_taus, X2, config)
    fit, mu_hat = fit_factor_model(X2, config, taus2, loadings_info=info)
    T = test_statistics(mu_hat, fit, X2.shape[0])
    return decide(T, config.alpha, 0.0, method_tag=config.method_tag, pi0_hat=1.0,
                  taus=taus2, fits=(fit,), mu_hat=mu_hat)


def naive_test(data, alpha=0.05, eta=0.0):
    """No factor adjustment: ``T_j = sqrt(n) * mean_j / sd_j``."""
    X = as_data_matrix(data)
    n = X.shape[0]
    sd = X.std(axis=0, ddof=1)
    sd = np.where(sd > 0, sd, variance_floor(sd ** 2) ** 0.5)
    T = np.sqrt(n) * X.mean(axis=0) / sd
    return decide(T, alpha, eta, method_tag="Naive")

