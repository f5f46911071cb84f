"""Rutter-Gatsonis SROC curve implied by a bivariate fit, and its AUC."""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from . import _kernels as K
from .data import expit, logit
from .errors import SrocUndefinedError
from .reml import BivariateFit, BivariateParams

DEFAULT_RESOLUTION = 10_000
MIN_RESOLUTION = 8
# Simpson rule in x = logit(fpr) used for the end regions: span of x and node count
PANEL_SPAN = 50.0
PANEL_NODES = 2000


@dataclass(frozen=True)
class SrocCurve:
    """SROC on the logit scale: logit(sens) = intercept + slope * logit(fpr).

    ``lam``, ``theta`` and ``beta`` are the HSROC accuracy, threshold and shape
    parameters; ``tau2_theta``/``tau2_alpha`` its variance components.
    """

    intercept: float
    slope: float
    lam: float
    theta: float
    beta: float
    tau2_theta: float
    tau2_alpha: float

    def sensitivity(self, fpr):
        """Vectorized curve evaluation on (0, 1) without range checks."""
        return expit(self.intercept + self.slope * logit(np.asarray(fpr, dtype=float)))

    def to_bivariate(self) -> tuple[np.ndarray, np.ndarray]:
        """Mean and covariance of (logit sens, logit FPR) implied by the HSROC form."""
        ea = math.exp(-self.beta / 2)
        eb = math.exp(self.beta / 2)
        mu = np.array([ea * (self.theta + self.lam / 2), eb * (self.theta - self.lam / 2)])
        var_sum = self.tau2_theta + self.tau2_alpha / 4
        cov = self.tau2_theta - self.tau2_alpha / 4
        sigma = np.array([[ea * ea * var_sum, cov], [cov, eb * eb * var_sum]])
        return mu, sigma


@dataclass(frozen=True)
class AucResult:
    value: float
    fpr_range: tuple[float, float]
    method: str
    resolution: int

    def to_dict(self) -> dict:
        return {"value": self.value, "fpr_range": list(self.fpr_range),
                "quadrature": {"method": self.method, "resolution": self.resolution}}


def hsroc_params(fit: "BivariateFit | BivariateParams") -> SrocCurve:
    """Map bivariate parameters to the equivalent HSROC parameterization."""
    p = fit.params if isinstance(fit, BivariateFit) else fit
    sa, sb = p.sigma_a, p.sigma_b
    if not (sa > 0 and sb > 0) or not (math.isfinite(sa) and math.isfinite(sb)):
        raise SrocUndefinedError("SROC undefined: zero heterogeneity axis")
    beta = math.log(sb / sa)
    r = math.sqrt(sb / sa)
    lam = r * p.mu_a - p.mu_b / r
    theta = 0.5 * (r * p.mu_a + p.mu_b / r)
    cov = p.rho * sa * sb
    slope = sa / sb
    return SrocCurve(
        intercept=p.mu_a - slope * p.mu_b,
        slope=slope,
        lam=lam,
        theta=theta,
        beta=beta,
        tau2_theta=max(0.0, 0.5 * (sa * sb + cov)),
        tau2_alpha=max(0.0, 2.0 * (sa * sb - cov)),
    )


def sroc_sensitivity_at(curve: SrocCurve, fpr: float) -> float:
    if not 0.0 < fpr < 1.0:
        raise ValueError(f"fpr must lie strictly inside (0, 1), got {fpr}")
    return K.sroc_sens(float(fpr), curve.intercept, curve.slope)


def _simpson_weights(m: int) -> np.ndarray:
    w = np.full(m + 1, 2.0)
    w[1::2] = 4.0
    w[0] = w[-1] = 1.0
    return w


@lru_cache(maxsize=32)
def quadrature_rule(lo: float, hi: float, resolution: int) -> tuple[np.ndarray, np.ndarray]:
    """Nodes on the logit(fpr) scale and weights with AUC = sum(w * expit(a + b * z)).

    Composite Simpson on a uniform fpr grid. The curve behaves like fpr**slope
    near 0 (and mirrors that near 1), which spoils Simpson's order there when
    slope < 1, so the first and last 1% of the grid are integrated in
    x = logit(fpr) instead whenever the range reaches 0 or 1. There the
    integrand is smooth and decays exponentially.
    """
    h = (hi - lo) / resolution
    edge = 2 * max(1, resolution // 200)
    k0 = edge if lo <= 0.0 else 0
    k1 = resolution - edge if hi >= 1.0 else resolution
    x = lo + h * np.arange(k0, k1 + 1)
    zs = [np.log(x) - np.log1p(-x)]
    ws = [_simpson_weights(k1 - k0) * h / 3.0]
    panel_w = _simpson_weights(PANEL_NODES) * (PANEL_SPAN / PANEL_NODES) / 3.0
    span = np.linspace(0.0, PANEL_SPAN, PANEL_NODES + 1)
    # panels run outwards from the boundary grid node over PANEL_SPAN logits
    for used, t in ((lo <= 0.0, zs[0][0] - span), (hi >= 1.0, zs[0][-1] + span)):
        if used:
            e = np.exp(-np.abs(t))
            zs.append(t)
            ws.append(panel_w * e / (1.0 + e) ** 2)
    z, w = np.concatenate(zs), np.concatenate(ws)
    z.setflags(write=False)
    w.setflags(write=False)
    return z, w


def compute_auc(curve: SrocCurve, fpr_range: tuple[float, float] = (0.0, 1.0),
                resolution: int = DEFAULT_RESOLUTION) -> AucResult:
    """Area under the SROC over ``fpr_range`` by composite Simpson's rule.

    ``resolution`` is the (even) number of uniform sub-intervals; see
    ``quadrature_rule`` for the treatment of the ends of the unit interval.
    """
    lo, hi = (float(v) for v in fpr_range)
    if resolution < MIN_RESOLUTION:
        raise ValueError(f"resolution must be at least {MIN_RESOLUTION}")
    if resolution % 2:
        raise ValueError("Simpson's rule needs an even resolution")
    if not (0.0 <= lo < hi <= 1.0):
        raise ValueError(f"invalid FPR range ({lo}, {hi}); need 0 <= lo < hi <= 1")
    z, w = quadrature_rule(lo, hi, int(resolution))
    value = K.weighted_sroc_sum(curve.intercept, curve.slope, z, w)
    return AucResult(float(value), (lo, hi), "composite-simpson", int(resolution))


def auc_of_fit(fit: "BivariateFit | BivariateParams", fpr_range=(0.0, 1.0),
               resolution: int = DEFAULT_RESOLUTION) -> float:
    return compute_auc(hsroc_params(fit), fpr_range, resolution).value


def sample_curve(curve: SrocCurve, n_points: int = 512) -> np.ndarray:
    """(n_points, 2) array of (fpr, sensitivity) on a uniform grid over [0, 1]."""
    x = np.linspace(0.0, 1.0, n_points)
    y = np.empty_like(x)
    y[1:-1] = curve.sensitivity(x[1:-1])
    y[0], y[-1] = 0.0, 1.0
    return np.column_stack([x, y])
