"""Synthetic meta-analyses from known parameters; bootstrap coverage studies."""

from __future__ import annotations

import csv
import hashlib
import logging
import math
import os
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .bootstrap import BootstrapConfig, Variant, bootstrap_auc_ci, psd_factor, replicate_rng
from .data import Correction, Dataset, Study2x2, expit, to_outcomes
from .errors import BudgetExceededError, DataError, SrocBootError
from .reml import BivariateParams, fit_reml
from .sroc import auc_of_fit

log = logging.getLogger(__name__)

TAG_SIM_DATA = 10
TAG_SIM_BOOT = 11
MAX_FAILED_FRACTION = 0.10
MIN_COVERAGE_REPLICATIONS = 100


@dataclass(frozen=True)
class SimScenario:
    true_params: BivariateParams
    n_studies: int = 20
    n_a: tuple[int, int] = (200, 200)     # inclusive range of diseased per study
    n_b: tuple[int, int] = (200, 200)     # inclusive range of non-diseased per study
    replications: int = 500
    bootstrap: BootstrapConfig = field(default_factory=lambda: BootstrapConfig(b=1000))
    seed: int = 1
    correction: Correction = Correction.AFFECTED

    def __post_init__(self):
        for name in ("n_a", "n_b"):
            v = getattr(self, name)
            v = (int(v), int(v)) if np.isscalar(v) else (int(v[0]), int(v[1]))
            if v[0] < 10 or v[1] < v[0]:
                raise ValueError(f"{name} range must satisfy 10 <= lo <= hi, got {v}")
            object.__setattr__(self, name, v)
        if self.n_studies < 3:
            raise ValueError("n_studies must be at least 3")
        if self.replications < 1:
            raise ValueError("replications must be positive")

    @property
    def true_auc(self) -> float:
        return auc_of_fit(self.true_params, self.bootstrap.fpr_range, self.bootstrap.resolution)

    def to_text(self) -> str:
        p = self.true_params
        b = self.bootstrap
        items = [
            ("mu_a", p.mu_a), ("mu_b", p.mu_b), ("sigma_a", p.sigma_a), ("sigma_b", p.sigma_b), ("rho", p.rho),
            ("n_studies", self.n_studies), ("n_a", _fmt_range(self.n_a)), ("n_b", _fmt_range(self.n_b)),
            ("replications", self.replications), ("seed", self.seed), ("correction", self.correction.value),
            ("b", b.b), ("boot_seed", b.seed), ("level", b.level), ("variant", b.variant.value),
            ("max_failure_fraction", b.max_failure_fraction), ("resolution", b.resolution),
        ]
        return "".join(f"{k} = {v}\n" for k, v in items)

    @property
    def digest(self) -> str:
        return hashlib.sha256(self.to_text().encode()).hexdigest()[:12]


def _fmt_range(r):
    return str(r[0]) if r[0] == r[1] else f"{r[0]}-{r[1]}"


def _parse_range(text: str) -> tuple[int, int]:
    if "-" in text:
        lo, hi = text.split("-", 1)
        return int(lo), int(hi)
    return int(text), int(text)


def parse_scenario(text: str) -> SimScenario:
    """Parse a ``key = value`` scenario file; ``#`` starts a comment."""
    kv = {}
    for n, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise DataError("expected 'key = value'", n)
        k, v = (s.strip() for s in line.split("=", 1))
        kv[k.lower()] = v
    known = {"mu_a", "mu_b", "sigma_a", "sigma_b", "rho", "n_studies", "n_a", "n_b", "replications", "seed",
             "correction", "b", "boot_seed", "level", "variant", "max_failure_fraction", "resolution"}
    unknown = set(kv) - known
    if unknown:
        raise DataError(f"unknown scenario key(s): {', '.join(sorted(unknown))}")
    params = BivariateParams(float(kv.get("mu_a", 1.0)), float(kv.get("mu_b", -1.5)),
                             float(kv.get("sigma_a", 0.5)), float(kv.get("sigma_b", 0.5)),
                             float(kv.get("rho", -0.4)))
    boot = BootstrapConfig(
        b=int(kv.get("b", 1000)), seed=int(kv.get("boot_seed", 2020)), level=float(kv.get("level", 0.95)),
        variant=Variant(kv.get("variant", "normal")),
        max_failure_fraction=float(kv.get("max_failure_fraction", 0.05)),
        resolution=int(kv.get("resolution", 10_000)),
        enforce_min_b=False,
    )
    return SimScenario(
        true_params=params, n_studies=int(kv.get("n_studies", 20)),
        n_a=_parse_range(kv.get("n_a", "200")), n_b=_parse_range(kv.get("n_b", "200")),
        replications=int(kv.get("replications", 500)), bootstrap=boot, seed=int(kv.get("seed", 1)),
        correction=Correction.parse(kv.get("correction", "affected")),
    )


def default_scenario(**overrides) -> SimScenario:
    """N = 20 studies, 200 subjects per arm, SDs 0.5, rho -0.4, 500 replications, B = 1000."""
    base = SimScenario(true_params=BivariateParams(1.0, -1.5, 0.5, 0.5, -0.4))
    return replace(base, **overrides)


def simulate_dataset(scenario: SimScenario, rng: np.random.Generator) -> Dataset:
    """Draw study effects from N(mu, Sigma), then binomial TP and FP counts."""
    p = scenario.true_params
    n = scenario.n_studies
    theta = p.mu + rng.standard_normal((n, 2)) @ psd_factor(p.sigma).T
    n_a = rng.integers(scenario.n_a[0], scenario.n_a[1] + 1, size=n)
    n_b = rng.integers(scenario.n_b[0], scenario.n_b[1] + 1, size=n)
    tp = rng.binomial(n_a, expit(theta[:, 0]))
    fp = rng.binomial(n_b, expit(theta[:, 1]))
    width = len(str(n))
    studies = tuple(Study2x2(f"sim{i + 1:0{width}d}", int(tp[i]), int(fp[i]), int(n_a[i] - tp[i]),
                             int(n_b[i] - fp[i])) for i in range(n))
    return Dataset(studies, name="simulated")


@dataclass
class CoverageResult:
    scenario: SimScenario
    true_auc: float
    covered: int
    completed: int
    failed: int
    widths: np.ndarray
    estimates: np.ndarray      # (completed, 5): mu_a, mu_b, sigma_a, sigma_b, rho
    failures: list

    @property
    def coverage(self) -> float:
        return self.covered / self.completed if self.completed else math.nan

    @property
    def coverage_se(self) -> float:
        c = self.coverage
        return math.sqrt(c * (1 - c) / self.completed) if self.completed else math.nan

    @property
    def mean_width(self) -> float:
        return float(np.mean(self.widths)) if self.widths.size else math.nan

    @property
    def bias(self) -> dict:
        p = self.scenario.true_params
        truth = np.array([p.mu_a, p.mu_b, p.sigma_a, p.sigma_b, p.rho])
        mean = self.estimates.mean(axis=0) if self.estimates.size else np.full(5, math.nan)
        return dict(zip(("mu_a", "mu_b", "sigma_a", "sigma_b", "rho"), (mean - truth).tolist()))

    def to_dict(self) -> dict:
        return {
            "scenario_hash": self.scenario.digest,
            "scenario": self.scenario.to_text(),
            "true_auc": self.true_auc,
            "replications": self.scenario.replications,
            "completed": self.completed,
            "failed": self.failed,
            "coverage": self.coverage,
            "coverage_se": self.coverage_se,
            "mean_width": self.mean_width,
            "bias": self.bias,
            "failures": self.failures,
        }


def _replication_config(scenario: SimScenario, r: int) -> BootstrapConfig:
    state = np.random.SeedSequence(scenario.bootstrap.seed, spawn_key=(TAG_SIM_BOOT, r)).generate_state(2, np.uint32)
    seed = int(state[0]) << 32 | int(state[1])
    return replace(scenario.bootstrap, seed=seed)


def coverage_study(scenario: SimScenario, progress=None) -> CoverageResult:
    """Empirical coverage of the bootstrap AUC interval and REML recovery bias."""
    true_auc = scenario.true_auc
    if scenario.replications < MIN_COVERAGE_REPLICATIONS:
        log.warning("%d replications is below the %d recommended for a coverage estimate",
                    scenario.replications, MIN_COVERAGE_REPLICATIONS)
    budget = int(math.floor(MAX_FAILED_FRACTION * scenario.replications))
    covered = 0
    widths, estimates, failures = [], [], []
    for r in range(scenario.replications):
        data = simulate_dataset(scenario, replicate_rng(scenario.seed, TAG_SIM_DATA, r))
        try:
            out = to_outcomes(data, scenario.correction)
            fit = fit_reml(out, scenario.bootstrap.fit_options)
            run = bootstrap_auc_ci(out, _replication_config(scenario, r), fit=fit)
        except (SrocBootError, np.linalg.LinAlgError) as exc:
            failures.append({"replication": r, "reason": f"{type(exc).__name__}: {exc}"})
            if len(failures) > budget:
                raise BudgetExceededError(
                    f"coverage study aborted: {len(failures)} of {r + 1} replications failed "
                    f"(limit {budget}); last: {failures[-1]['reason']}", failures) from exc
            continue
        lo, hi = run.interval
        covered += lo <= true_auc <= hi
        widths.append(hi - lo)
        p = fit.params
        estimates.append([p.mu_a, p.mu_b, p.sigma_a, p.sigma_b, p.rho])
        if progress is not None:
            progress(r + 1, scenario.replications)
    return CoverageResult(scenario, true_auc, covered, len(widths), len(failures),
                          np.array(widths), np.array(estimates).reshape(-1, 5), failures)


LEDGER_COLUMNS = ["scenario_hash", "replications", "completed", "true_auc", "coverage", "coverage_se",
                  "mean_width", "bias_mu_a", "bias_mu_b", "bias_sigma_a", "bias_sigma_b", "bias_rho"]


def append_ledger(path: "str | os.PathLike", result: CoverageResult) -> None:
    """Append one row to a CSV results ledger, writing the header for a new file."""
    path = Path(path)
    new = not path.exists() or path.stat().st_size == 0
    b = result.bias
    row = [result.scenario.digest, result.scenario.replications, result.completed, result.true_auc,
           result.coverage, result.coverage_se, result.mean_width,
           b["mu_a"], b["mu_b"], b["sigma_a"], b["sigma_b"], b["rho"]]
    with open(path, "a", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        if new:
            w.writerow(LEDGER_COLUMNS)
        w.writerow(row)
