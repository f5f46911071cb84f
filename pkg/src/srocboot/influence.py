"""Leave-one-study-out AUC influence table with bootstrap thresholds."""

from __future__ import annotations

import math
from dataclasses import dataclass

from .bootstrap import (BootstrapConfig, InfluenceDistribution, _as_outcomes,
                        bootstrap_influence_distribution, leave_one_out_aucs)
from .data import Correction, require_studies
from .reml import fit_reml
from .sroc import auc_of_fit


@dataclass(frozen=True)
class InfluenceRow:
    index: int            # 1-based position in the input
    label: str
    auc_loo: float
    delta_auc: float      # AUC without this study minus AUC with all studies
    lo: float
    hi: float
    influential: bool
    converged: bool = True

    def to_dict(self) -> dict:
        return {"index": self.index, "study": self.label, "auc": self.auc_loo, "dauc": self.delta_auc,
                "p2.5": self.lo, "p97.5": self.hi, "flag": self.influential, "converged": self.converged}


@dataclass(frozen=True)
class FlaggedStudy:
    row: InfluenceRow
    direction: str


@dataclass(eq=False)
class InfluenceTable:
    full_auc: float
    rows: list[InfluenceRow]
    distribution: InfluenceDistribution

    def sorted_by_magnitude(self) -> list[InfluenceRow]:
        return sorted(self.rows, key=lambda r: -abs(r.delta_auc) if math.isfinite(r.delta_auc) else 0.0)

    def to_dict(self) -> dict:
        return {
            "full_auc": self.full_auc,
            "level": self.distribution.level,
            "config": self.distribution.config.echo(),
            "effective_b": int(self.distribution.deltas.shape[0]),
            "failures": [{"replicate": b, "attempt": a, "reason": r} for b, a, r in self.distribution.failures],
            "rows": [r.to_dict() for r in self.rows],
        }


def leave_one_out_table(data, config: BootstrapConfig | None = None,
                        correction: "Correction | str" = Correction.AFFECTED) -> InfluenceTable:
    """Observed leave-one-out AUC changes against per-study bootstrap thresholds."""
    config = config or BootstrapConfig()
    out = _as_outcomes(data, correction)
    require_studies(len(out), 4, "leave-one-out influence diagnostics")
    fit = fit_reml(out, config.fit_options)
    full = auc_of_fit(fit, config.fpr_range, config.resolution)
    loo = leave_one_out_aucs(out, config, strict=False)
    dist = bootstrap_influence_distribution(out, config, fit=fit)
    rows = []
    for i, label in enumerate(out.labels):
        lo, hi = (float(v) for v in dist.thresholds[i])
        ok = math.isfinite(loo[i])
        delta = float(loo[i] - full) if ok else math.nan
        rows.append(InfluenceRow(i + 1, label, float(loo[i]), delta, lo, hi,
                                 ok and (delta < lo or delta > hi), ok))
    return InfluenceTable(full, rows, dist)


def flag_influential(rows) -> list[FlaggedStudy]:
    """Rows whose AUC change falls outside their bootstrap thresholds."""
    flagged = []
    for r in rows:
        if not r.influential:
            continue
        direction = "AUC increases when removed" if r.delta_auc > 0 else "AUC decreases when removed"
        flagged.append(FlaggedStudy(r, direction))
    return flagged
