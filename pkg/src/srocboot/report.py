"""JSON / CSV report writers with atomic file replacement."""

from __future__ import annotations

import csv
import datetime as _dt
import io
import json
import math
import os
import tempfile
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .reml import BivariateFit, summary_accuracy

ACCURACY_COLUMNS = ["group", "n_studies", "sens", "sens_lo", "sens_hi", "fpr", "fpr_lo", "fpr_hi",
                  "sd_a", "sd_b", "rho", "auc", "auc_lo", "auc_hi"]
COMPARE_COLUMNS = ["comparison", "dauc", "dauc_lo", "dauc_hi", "p_value", "auc1", "auc2",
                  "z_sens", "p_sens", "z_fpr", "p_fpr"]
INFLUENCE_COLUMNS = ["study", "AUC", "dAUC", "p2.5", "p97.5", "flag"]


@dataclass
class Report:
    """A named result: JSON payload, CSV tables and optional SVG figure."""

    name: str
    payload: dict
    tables: dict = field(default_factory=dict)    # stem -> (columns, rows)
    svg: str | None = None


def _clean(obj):
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else None
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def to_json(payload: dict, timestamp: bool = True) -> str:
    doc = dict(payload)
    if timestamp:
        doc["generated_at"] = _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")
    return json.dumps(_clean(doc), indent=2, allow_nan=False) + "\n"


def to_csv(columns, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for row in rows:
        w.writerow([_csv_value(row.get(c)) for c in columns])
    return buf.getvalue()


def _csv_value(v):
    if v is None:
        return ""
    if isinstance(v, (float, np.floating)):
        return "" if not math.isfinite(v) else repr(float(v))
    return v


def atomic_write(path: "str | os.PathLike", text: str) -> Path:
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def write_reports(report: Report, formats, out_dir: "str | os.PathLike", timestamp: bool = True) -> list[Path]:
    """Write the requested formats (json, csv, svg) into ``out_dir``."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    if not os.access(out_dir, os.W_OK):
        raise PermissionError(f"output directory {out_dir} is not writable")
    written = []
    formats = set(formats)
    if "json" in formats:
        written.append(atomic_write(out_dir / f"{report.name}.json", to_json(report.payload, timestamp)))
    if "csv" in formats:
        for stem, (columns, rows) in report.tables.items():
            written.append(atomic_write(out_dir / f"{stem}.csv", to_csv(columns, rows)))
    if "svg" in formats and report.svg is not None:
        written.append(atomic_write(out_dir / f"{report.name}.svg", report.svg))
    return written


def format_table(columns, rows, digits: int = 3) -> str:
    """Plain-text table; numbers are rounded copies of the JSON values."""
    def fmt(v):
        if isinstance(v, bool) or v is None:
            return "" if v is None else ("yes" if v else "no")
        if isinstance(v, (float, np.floating)):
            return "nan" if not math.isfinite(v) else f"{v:.{digits}f}"
        return str(v)

    cells = [[fmt(r.get(c)) for c in columns] for r in rows]
    widths = [max([len(c)] + [len(row[i]) for row in cells]) for i, c in enumerate(columns)]
    lines = ["  ".join(c.rjust(w) for c, w in zip(columns, widths))]
    lines += ["  ".join(v.rjust(w) for v, w in zip(row, widths)) for row in cells]
    return "\n".join(lines) + "\n"


def accuracy_row(group: str, fit: BivariateFit, level: float = 0.95, auc: float | None = None,
               auc_interval=None) -> dict:
    s = summary_accuracy(fit, level)
    p = fit.params
    return {
        "group": group, "n_studies": fit.n_studies,
        "sens": s.sens.point, "sens_lo": s.sens.lower, "sens_hi": s.sens.upper,
        "fpr": s.fpr.point, "fpr_lo": s.fpr.lower, "fpr_hi": s.fpr.upper,
        "sd_a": p.sigma_a, "sd_b": p.sigma_b, "rho": p.rho,
        "auc": auc,
        "auc_lo": None if auc_interval is None else auc_interval[0],
        "auc_hi": None if auc_interval is None else auc_interval[1],
    }


def influence_rows(table) -> list[dict]:
    return [{"study": r.label, "AUC": r.auc_loo, "dAUC": r.delta_auc, "p2.5": r.lo, "p97.5": r.hi,
             "flag": r.influential} for r in table.rows]


def statistics_csv(statistics) -> tuple[list, list]:
    return ["replicate", "statistic"], [{"replicate": i + 1, "statistic": float(v)} for i, v in enumerate(statistics)]
