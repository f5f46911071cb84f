"""Bivariate normal-normal random-effects model fitted by REML."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from . import _kernels as K
from .data import MIN_STUDIES, OutcomeSet, expit, require_studies
from .errors import ConvergenceError, DataError

# Deterministic start perturbations in (log sigma_a, log sigma_b, atanh rho).
START_OFFSETS = np.array([
    [0.0, 0.0, 0.0],
    [0.7, 0.7, 0.5],
    [-0.7, -0.7, -0.5],
    [0.7, -0.7, -0.5],
    [-0.7, 0.7, 0.5],
])
BOUNDARY_TOL = 1e-3
VARIANCE_FLOOR = 1e-4


@dataclass(frozen=True)
class BivariateParams:
    mu_a: float
    mu_b: float
    sigma_a: float
    sigma_b: float
    rho: float

    def __post_init__(self):
        if self.sigma_a < 0 or self.sigma_b < 0:
            raise ValueError("heterogeneity SDs must be non-negative")
        if not -1.0 <= self.rho <= 1.0:
            raise ValueError("rho must lie in [-1, 1]")

    @property
    def mu(self) -> np.ndarray:
        return np.array([self.mu_a, self.mu_b])

    @property
    def sigma(self) -> np.ndarray:
        c = self.rho * self.sigma_a * self.sigma_b
        return np.array([[self.sigma_a ** 2, c], [c, self.sigma_b ** 2]])

    @property
    def cov_ab(self) -> float:
        return self.rho * self.sigma_a * self.sigma_b


@dataclass(frozen=True)
class FitOptions:
    restarts: int = 5
    ftol: float = 1e-10
    xtol: float = 1e-8
    maxiter: int = 5000
    step: float = 0.5


@dataclass(frozen=True, eq=False)
class BivariateFit:
    params: BivariateParams
    cov_mu: np.ndarray
    reml_value: float
    converged: bool
    iterations: int
    boundary_hit: dict = field(default_factory=dict)
    n_studies: int = 0

    @property
    def mu(self) -> np.ndarray:
        return self.params.mu

    @property
    def se_mu(self) -> np.ndarray:
        return np.sqrt(np.diag(self.cov_mu))

    def to_dict(self) -> dict:
        p = self.params
        return {
            "params": {"mu_a": p.mu_a, "mu_b": p.mu_b, "sigma_a": p.sigma_a,
                       "sigma_b": p.sigma_b, "rho": p.rho},
            "cov_mu": [[float(v) for v in row] for row in self.cov_mu],
            "reml_value": self.reml_value,
            "converged": self.converged,
            "iterations": self.iterations,
            "boundary_hit": dict(self.boundary_hit),
            "n_studies": self.n_studies,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "BivariateFit":
        return cls(
            params=BivariateParams(**d["params"]),
            cov_mu=np.array(d["cov_mu"], dtype=float),
            reml_value=float(d["reml_value"]),
            converged=bool(d["converged"]),
            iterations=int(d["iterations"]),
            boundary_hit=dict(d["boundary_hit"]),
            n_studies=int(d["n_studies"]),
        )


@dataclass(frozen=True)
class Estimate:
    point: float
    lower: float
    upper: float


@dataclass(frozen=True)
class SummaryAccuracy:
    sens: Estimate
    fpr: Estimate
    level: float


@dataclass(frozen=True)
class WaldComparison:
    diff_mu_a: float
    diff_mu_b: float
    z_sens: float
    z_fpr: float
    p_sens: float
    p_fpr: float


def _check_level(level: float) -> None:
    if not 0.0 < level < 1.0:
        raise ValueError(f"confidence level must be in (0, 1), got {level}")


def gls_mean(Sigma, data: OutcomeSet) -> tuple[np.ndarray, np.ndarray]:
    """GLS summary mean and its covariance for a given between-study covariance."""
    Sigma = np.asarray(Sigma, dtype=float)
    n = len(data)
    V = np.broadcast_to(Sigma, (n, 2, 2)).copy()
    V[:, 0, 0] += data.s2_a
    V[:, 1, 1] += data.s2_b
    try:
        W = np.linalg.inv(V)
        M = W.sum(axis=0)
        cov_mu = np.linalg.inv(M)
    except np.linalg.LinAlgError:
        raise DataError("singular total-information matrix") from None
    u = np.einsum("nij,nj->i", W, data.y)
    mu = cov_mu @ u
    if not np.all(np.isfinite(mu)):
        raise DataError("non-finite GLS mean")
    return mu, cov_mu


def restricted_log_likelihood(sigma_a: float, sigma_b: float, rho: float, data: OutcomeSet) -> float:
    """REML objective with the summary mean profiled out by GLS (constants dropped)."""
    require_studies(len(data), MIN_STUDIES, "REML")
    Sigma = BivariateParams(0.0, 0.0, sigma_a, sigma_b, rho).sigma
    n = len(data)
    V = np.broadcast_to(Sigma, (n, 2, 2)).copy()
    V[:, 0, 0] += data.s2_a
    V[:, 1, 1] += data.s2_b
    sign, logdet = np.linalg.slogdet(V)
    if np.any(sign <= 0):
        raise DataError("singular or indefinite V_i")
    mu, cov_mu = gls_mean(Sigma, data)
    r = data.y - mu
    W = np.linalg.inv(V)
    quad = np.einsum("ni,nij,nj->", r, W, r)
    sign_m, logdet_m = np.linalg.slogdet(np.linalg.inv(cov_mu))
    value = -0.5 * (logdet.sum() + quad) - 0.5 * logdet_m
    if not math.isfinite(value) or sign_m <= 0:
        raise DataError("non-finite restricted log-likelihood")
    return float(value)


def moment_start(data: OutcomeSet) -> np.ndarray:
    """Method-of-moments starting point in the transformed parameterization."""
    y = data.y
    cov = np.cov(y, rowvar=False)
    va = max(cov[0, 0] - data.s2_a.mean(), VARIANCE_FLOOR)
    vb = max(cov[1, 1] - data.s2_b.mean(), VARIANCE_FLOOR)
    r = cov[0, 1] / math.sqrt(va * vb) if np.isfinite(cov[0, 1]) else 0.0
    r = min(max(r, -0.9), 0.9)
    return np.array([0.5 * math.log(va), 0.5 * math.log(vb), math.atanh(r)])


def fit_reml(data: OutcomeSet, options: FitOptions | None = None, *, strict: bool = True) -> BivariateFit:
    """Fit the bivariate model by REML with a multi-start simplex search.

    With ``strict`` (the default) a non-converged optimum raises
    :class:`ConvergenceError`; the partial fit is attached to the exception.
    """
    options = options or FitOptions()
    require_studies(len(data), MIN_STUDIES, "bivariate REML fit")
    base = moment_start(data)
    k = max(1, min(options.restarts, len(START_OFFSETS)))
    starts = base + START_OFFSETS[:k]
    xs, fs, conv, iters = K.multistart(starts, options.step, data.y_a, data.y_b, data.s2_a, data.s2_b,
                                       options.ftol, options.xtol, options.maxiter)
    if not np.any(np.isfinite(fs)):
        raise ConvergenceError("REML objective non-finite at every start")
    best = int(np.argmin(fs))
    converged = bool(conv[best]) or bool(np.any(conv & (fs <= fs[best] + 1e-8)))
    x = xs[best]
    ta = min(max(x[0], K.LOG_SIGMA_LO), K.LOG_SIGMA_HI)
    tb = min(max(x[1], K.LOG_SIGMA_LO), K.LOG_SIGMA_HI)
    tr = min(max(x[2], K.ATANH_RHO_LO), K.ATANH_RHO_HI)
    boundary = {
        "sigma_a_zero": bool(x[0] <= K.LOG_SIGMA_LO + BOUNDARY_TOL),
        "sigma_b_zero": bool(x[1] <= K.LOG_SIGMA_LO + BOUNDARY_TOL),
        "sigma_upper": bool(max(x[0], x[1]) >= K.LOG_SIGMA_HI - BOUNDARY_TOL),
        "rho_boundary": bool(abs(x[2]) >= K.ATANH_RHO_HI - BOUNDARY_TOL),
    }
    sa, sb, rho = math.exp(ta), math.exp(tb), math.tanh(tr)
    ll, mu_a, mu_b, m11, m12, m22 = K.reml_loglik(sa, sb, rho, data.y_a, data.y_b, data.s2_a, data.s2_b)
    det_m = m11 * m22 - m12 * m12
    cov_mu = np.array([[m22, -m12], [-m12, m11]]) / det_m
    fit = BivariateFit(
        params=BivariateParams(float(mu_a), float(mu_b), sa, sb, rho),
        cov_mu=cov_mu,
        reml_value=float(ll),
        converged=converged and math.isfinite(ll),
        iterations=int(iters.sum()),
        boundary_hit=boundary,
        n_studies=len(data),
    )
    if strict and not fit.converged:
        raise ConvergenceError(f"REML did not converge after {k} starts", fit=fit)
    return fit


def summary_accuracy(fit: BivariateFit, level: float = 0.95) -> SummaryAccuracy:
    """Summary sensitivity and FPR with Wald intervals back-transformed by expit."""
    _check_level(level)
    if not fit.converged:
        raise ConvergenceError("summary accuracy requires a converged fit", fit=fit)
    z = stats.norm.ppf(0.5 + level / 2)
    se = fit.se_mu

    def est(m, s):
        return Estimate(float(expit(m)), float(expit(m - z * s)), float(expit(m + z * s)))

    return SummaryAccuracy(est(fit.params.mu_a, se[0]), est(fit.params.mu_b, se[1]), level)


def chi2_2df_quantile(level: float) -> float:
    return float(stats.chi2.ppf(level, 2))


def confidence_region(fit: BivariateFit, level: float = 0.95, n_points: int = 100) -> np.ndarray:
    """Closed (n_points + 1, 2) polyline of the confidence ellipse in (FPR, sensitivity).

    The ellipse lives on the logit scale and is mapped coordinatewise through expit.
    """
    _check_level(level)
    cov = np.asarray(fit.cov_mu, dtype=float)
    try:
        L = np.linalg.cholesky(cov)
    except np.linalg.LinAlgError:
        raise DataError("singular covariance of the summary mean") from None
    radius = math.sqrt(chi2_2df_quantile(level))
    t = np.linspace(0.0, 2.0 * math.pi, n_points, endpoint=False)
    circle = np.vstack([np.cos(t), np.sin(t)])
    pts = fit.mu[:, None] + radius * (L @ circle)
    pts = np.hstack([pts, pts[:, :1]])
    return np.column_stack([expit(pts[1]), expit(pts[0])])


def wald_compare_summary(fit1: BivariateFit, fit2: BivariateFit) -> WaldComparison:
    """Wald z-tests for differences in summary logit sensitivity and logit FPR.

    The two fits must come from disjoint sets of studies; this is not checked.
    """
    for f in (fit1, fit2):
        if not f.converged:
            raise ConvergenceError("Wald comparison requires converged fits", fit=f)
    d = fit1.mu - fit2.mu
    se = np.sqrt(np.diag(fit1.cov_mu) + np.diag(fit2.cov_mu))
    with np.errstate(divide="ignore", invalid="ignore"):
        z = np.where(d == 0, 0.0, d / se)
    p = 2.0 * stats.norm.sf(np.abs(z))
    return WaldComparison(float(d[0]), float(d[1]), float(z[0]), float(z[1]), float(p[0]), float(p[1]))
