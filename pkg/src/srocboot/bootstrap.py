"""Parametric bootstrap for the SROC AUC: intervals, AUC comparisons, influence.

Every replicate draws from its own random stream derived from
``(seed, tag, replicate index, attempt)``, so output does not depend on the
number of worker threads or on the order in which replicates finish.
"""

from __future__ import annotations

import enum
import logging
import math
import os
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Callable

import numpy as np

from .data import Correction, Dataset, OutcomeSet, expit, outcomes_from_counts, require_studies, to_outcomes
from .errors import BudgetExceededError, ConvergenceError, DataError, SrocUndefinedError
from .reml import BivariateFit, FitOptions, fit_reml
from .sroc import DEFAULT_RESOLUTION, auc_of_fit

log = logging.getLogger(__name__)

THREADS_ENV = "SROCBOOT_THREADS"
MIN_B = 1000
MIN_P_SAMPLES = 1000

# sub-stream tags
TAG_AUC = 0
TAG_ARM1 = 1
TAG_ARM2 = 2
TAG_INFLUENCE = 3

# Errors that mark a single replicate as failed rather than aborting the run.
REPLICATE_ERRORS = (ConvergenceError, DataError, SrocUndefinedError, FloatingPointError, np.linalg.LinAlgError)


class Variant(str, enum.Enum):
    NORMAL = "normal"
    BINOMIAL = "binomial"


@dataclass(frozen=True)
class BootstrapConfig:
    b: int = 2000
    seed: int = 2020
    variant: Variant = Variant.NORMAL
    level: float = 0.95
    max_failure_fraction: float = 0.05
    threads: int | None = None
    fpr_range: tuple[float, float] = (0.0, 1.0)
    resolution: int = DEFAULT_RESOLUTION
    fit_options: FitOptions = field(default_factory=FitOptions)
    enforce_min_b: bool = True

    def __post_init__(self):
        object.__setattr__(self, "variant", Variant(self.variant))
        object.__setattr__(self, "fpr_range", tuple(float(v) for v in self.fpr_range))
        if self.b < 1 or (self.enforce_min_b and self.b < MIN_B):
            raise ValueError(f"bootstrap replicate count must be at least {MIN_B}, got {self.b}")
        if not 0.0 < self.level < 1.0:
            raise ValueError("level must be in (0, 1)")
        if not 0.0 <= self.max_failure_fraction < 1.0:
            raise ValueError("max_failure_fraction must be in [0, 1)")
        if not 0 <= self.seed < 2 ** 64:
            raise ValueError("seed must be a 64-bit unsigned integer")

    @property
    def failure_budget(self) -> int:
        return int(math.floor(self.max_failure_fraction * self.b))

    def echo(self) -> dict:
        d = asdict(self)
        d["variant"] = self.variant.value
        d["fpr_range"] = list(self.fpr_range)
        d["threads"] = None
        return d


@dataclass(eq=False)
class BootstrapRun:
    statistics: np.ndarray
    requested_b: int
    failures: list
    interval: tuple[float, float]
    point: float
    level: float
    config: BootstrapConfig

    @property
    def effective_b(self) -> int:
        return int(self.statistics.shape[0])

    def to_dict(self, max_statistics: int | None = 10_000) -> dict:
        stats = [float(v) for v in self.statistics]
        elided = max_statistics is not None and len(stats) > max_statistics
        return {
            "config": self.config.echo(),
            "point": self.point,
            "interval": list(self.interval),
            "level": self.level,
            "requested_b": self.requested_b,
            "effective_b": self.effective_b,
            "failures": [{"replicate": b, "attempt": a, "reason": r} for b, a, r in self.failures],
            "statistics": None if elided else stats,
            "statistics_elided": elided,
        }


@dataclass(eq=False)
class DaucTestResult:
    dauc: float
    auc1: float
    auc2: float
    interval: tuple[float, float]
    p_value: float
    run: BootstrapRun

    def to_dict(self, max_statistics: int | None = 10_000) -> dict:
        return {"dauc": self.dauc, "auc1": self.auc1, "auc2": self.auc2,
                "interval": list(self.interval), "p_value": self.p_value,
                "run": self.run.to_dict(max_statistics)}


@dataclass(eq=False)
class InfluenceDistribution:
    labels: tuple[str, ...]
    deltas: np.ndarray        # (B, N): AUC without study i minus full AUC, per replicate
    full_auc: np.ndarray      # (B,)
    thresholds: np.ndarray    # (N, 2)
    failures: list
    level: float
    config: BootstrapConfig


# --------------------------------------------------------------------------- streams

def replicate_rng(seed: int, tag: int, index: int, attempt: int = 0) -> np.random.Generator:
    """Independent generator for one replicate attempt."""
    ss = np.random.SeedSequence(int(seed), spawn_key=(int(tag), int(index), int(attempt)))
    return np.random.Generator(np.random.PCG64(ss))


def psd_factor(sigma: np.ndarray) -> np.ndarray:
    """L with L @ L.T == sigma; eigenvalue clipping when Cholesky fails."""
    try:
        return np.linalg.cholesky(sigma)
    except np.linalg.LinAlgError:
        w, v = np.linalg.eigh(sigma)
        return v * np.sqrt(np.clip(w, 0.0, None))


def _draw_order(labels) -> tuple[np.ndarray, np.ndarray]:
    order = np.array(sorted(range(len(labels)), key=lambda i: labels[i]), dtype=np.intp)
    inverse = np.empty_like(order)
    inverse[order] = np.arange(order.size)
    return order, inverse


def draw_random_effects(fit: BivariateFit, n: int, rng: np.random.Generator) -> np.ndarray:
    """(n, 2) draws of study-level logit (sens, FPR) from N(mu_hat, Sigma_hat)."""
    L = psd_factor(fit.params.sigma)
    z = rng.standard_normal((n, 2))
    return fit.mu + z @ L.T


def resample_counts(fit: BivariateFit, data: OutcomeSet, rng: np.random.Generator) -> np.ndarray:
    """Synthetic (N, 4) counts: random effects, then binomial TP and FP."""
    if data.source is None:
        raise DataError("binomial resampling needs the original counts")
    counts = data.source.counts()
    order, inverse = _draw_order(data.labels)
    theta = draw_random_effects(fit, len(data), rng)[inverse]
    n_a = counts[:, 0] + counts[:, 2]
    n_b = counts[:, 1] + counts[:, 3]
    tp = np.empty(len(data), dtype=np.int64)
    fp = np.empty(len(data), dtype=np.int64)
    tp[order] = rng.binomial(n_a[order], expit(theta[order, 0]))
    fp[order] = rng.binomial(n_b[order], expit(theta[order, 1]))
    return np.column_stack([tp, fp, n_a - tp, n_b - fp])


def resample_replicate(fit: BivariateFit, data: OutcomeSet, variant: "Variant | str",
                       rng: np.random.Generator) -> OutcomeSet:
    """One synthetic data set drawn from the fitted model.

    Draws are assigned to studies in label order, so permuting the input
    studies permutes the synthetic data identically.
    """
    variant = Variant(variant)
    if variant is Variant.BINOMIAL:
        counts = resample_counts(fit, data, rng)
        syn = Dataset(data.source.studies, name=data.source.name).with_counts(counts)
        return outcomes_from_counts(counts, data.correction, source=syn)
    n = len(data)
    order, inverse = _draw_order(data.labels)
    theta = draw_random_effects(fit, n, rng)[inverse]
    z = rng.standard_normal((n, 2))[inverse]
    y_a = theta[:, 0] + z[:, 0] * np.sqrt(data.s2_a)
    y_b = theta[:, 1] + z[:, 1] * np.sqrt(data.s2_b)
    return data.with_y(y_a, y_b)


# --------------------------------------------------------------------------- summaries

def percentile_interval(samples, level: float = 0.95) -> tuple[float, float]:
    """Equal-tailed percentile interval with linear interpolation of order statistics."""
    if not 0.0 < level < 1.0:
        raise ValueError(f"level must be in (0, 1), got {level}")
    x = np.asarray(samples, dtype=float)
    if x.size == 0:
        raise ValueError("no samples")
    if x.size < 2:
        raise ValueError("need at least 2 samples")
    alpha = (1.0 - level) / 2.0
    lo, hi = np.quantile(x, [alpha, 1.0 - alpha], method="linear")
    return float(lo), float(hi)


def bootstrap_p_value(samples, min_samples: int = MIN_P_SAMPLES) -> float:
    """Two-sided p-value for H0: statistic = 0 by percentile inversion (add-one)."""
    x = np.asarray(samples, dtype=float)
    if x.size < min_samples:
        raise ValueError(f"need at least {min_samples} bootstrap samples, got {x.size}")
    b = x.size
    below = (1 + np.count_nonzero(x <= 0.0)) / (b + 1)
    above = (1 + np.count_nonzero(x >= 0.0)) / (b + 1)
    return float(min(1.0, 2.0 * min(below, above)))


# --------------------------------------------------------------------------- driver

def resolve_threads(threads: int | None) -> int:
    if threads is None:
        env = os.environ.get(THREADS_ENV)
        threads = int(env) if env else 1
    return max(1, int(threads))


def run_replicates(b: int, budget: int, work: Callable[[int, int], object], threads: int | None = None):
    """Evaluate ``work(index, attempt)`` for every index, redrawing failed attempts.

    Returns (results by index, failures). Raises BudgetExceededError once more
    than ``budget`` attempts have failed in total.
    """
    lock = threading.Lock()
    failed = [0]

    def one(index):
        fails = []
        for attempt in range(budget + 1):
            with lock:
                if failed[0] > budget:
                    return None, fails
            try:
                return work(index, attempt), fails
            except REPLICATE_ERRORS as exc:
                fails.append((index, attempt, f"{type(exc).__name__}: {exc}"))
                with lock:
                    failed[0] += 1
        return None, fails

    n_threads = resolve_threads(threads)
    if n_threads == 1:
        outcomes = [one(i) for i in range(b)]
    else:
        with ThreadPoolExecutor(max_workers=n_threads) as pool:
            outcomes = list(pool.map(one, range(b)))
    failures = sorted(f for _, fs in outcomes for f in fs)
    if len(failures) > budget or any(r is None for r, _ in outcomes):
        raise BudgetExceededError(
            f"{len(failures)} replicate refits failed; budget is {budget} of {b}", failures)
    for f in failures:
        log.debug("replicate %d attempt %d failed: %s", *f)
    return [r for r, _ in outcomes], failures


def _as_outcomes(data, correction) -> OutcomeSet:
    if isinstance(data, OutcomeSet):
        return data
    if isinstance(data, Dataset):
        return to_outcomes(data, correction)
    raise TypeError(f"expected Dataset or OutcomeSet, got {type(data).__name__}")


def _replicate_auc(fit, data, config, tag, index, attempt) -> float:
    rng = replicate_rng(config.seed, tag, index, attempt)
    syn = resample_replicate(fit, data, config.variant, rng)
    refit = fit_reml(syn, config.fit_options)
    return auc_of_fit(refit, config.fpr_range, config.resolution)


def bootstrap_auc_ci(data, config: BootstrapConfig | None = None,
                     correction: "Correction | str" = Correction.AFFECTED,
                     fit: BivariateFit | None = None) -> BootstrapRun:
    """Percentile bootstrap interval for the SROC AUC."""
    config = config or BootstrapConfig()
    out = _as_outcomes(data, correction)
    require_studies(len(out), what="bootstrap AUC interval")
    fit = fit or fit_reml(out, config.fit_options)
    point = auc_of_fit(fit, config.fpr_range, config.resolution)
    results, failures = run_replicates(
        config.b, config.failure_budget,
        lambda i, a: _replicate_auc(fit, out, config, TAG_AUC, i, a), config.threads)
    stats = np.array(results, dtype=float)
    return BootstrapRun(stats, config.b, failures, percentile_interval(stats, config.level),
                        point, config.level, config)


def bootstrap_compare_auc(data1, data2, config: BootstrapConfig | None = None,
                          correction: "Correction | str" = Correction.AFFECTED) -> DaucTestResult:
    """Bootstrap interval and p-value for AUC_1 - AUC_2 (independent arms)."""
    config = config or BootstrapConfig()
    out1 = _as_outcomes(data1, correction)
    out2 = _as_outcomes(data2, correction)
    require_studies(len(out1), what="AUC comparison (first test)")
    require_studies(len(out2), what="AUC comparison (second test)")
    fit1 = fit_reml(out1, config.fit_options)
    fit2 = fit_reml(out2, config.fit_options)
    auc1 = auc_of_fit(fit1, config.fpr_range, config.resolution)
    auc2 = auc_of_fit(fit2, config.fpr_range, config.resolution)

    def work(i, a):
        return (_replicate_auc(fit1, out1, config, TAG_ARM1, i, a)
                - _replicate_auc(fit2, out2, config, TAG_ARM2, i, a))

    results, failures = run_replicates(config.b, config.failure_budget, work, config.threads)
    stats = np.array(results, dtype=float)
    interval = percentile_interval(stats, config.level)
    run = BootstrapRun(stats, config.b, failures, interval, auc1 - auc2, config.level, config)
    p = bootstrap_p_value(stats, min_samples=min(MIN_P_SAMPLES, stats.size))
    return DaucTestResult(auc1 - auc2, auc1, auc2, interval, p, run)


def leave_one_out_aucs(data: OutcomeSet, config: BootstrapConfig, strict: bool = True) -> np.ndarray:
    """AUC after removing each study in turn (NaN for failed refits if not strict)."""
    out = np.empty(len(data))
    for i in range(len(data)):
        try:
            f = fit_reml(data.drop(i), config.fit_options)
            out[i] = auc_of_fit(f, config.fpr_range, config.resolution)
        except REPLICATE_ERRORS:
            if strict:
                raise
            out[i] = math.nan
    return out


def bootstrap_influence_distribution(data, config: BootstrapConfig | None = None,
                                     correction: "Correction | str" = Correction.AFFECTED,
                                     fit: BivariateFit | None = None) -> InfluenceDistribution:
    """Per-study bootstrap distributions of the leave-one-out AUC change."""
    config = config or BootstrapConfig()
    out = _as_outcomes(data, correction)
    require_studies(len(out), 4, "leave-one-out influence diagnostics")
    fit = fit or fit_reml(out, config.fit_options)

    def work(i, a):
        rng = replicate_rng(config.seed, TAG_INFLUENCE, i, a)
        syn = resample_replicate(fit, out, config.variant, rng)
        full = auc_of_fit(fit_reml(syn, config.fit_options), config.fpr_range, config.resolution)
        return full, leave_one_out_aucs(syn, config) - full

    results, failures = run_replicates(config.b, config.failure_budget, work, config.threads)
    full = np.array([r[0] for r in results])
    deltas = np.vstack([r[1] for r in results])
    alpha = (1.0 - config.level) / 2.0
    thresholds = np.quantile(deltas, [alpha, 1.0 - alpha], axis=0, method="linear").T
    return InfluenceDistribution(tuple(out.labels), deltas, full, thresholds, failures, config.level, config)
