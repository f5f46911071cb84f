"""Study-level 2x2 data: parsing, continuity correction and logit outcomes."""

from __future__ import annotations

import csv
import enum
import io
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence, TextIO

import numpy as np

from .errors import DataError, InsufficientStudiesError

MIN_STUDIES = 3
REQUIRED_COLUMNS = ("study", "tp", "fp", "fn", "tn")


class Correction(str, enum.Enum):
    """Continuity-correction policy for zero cells."""

    AFFECTED = "affected-studies"
    ALL = "all-studies"
    NONE = "none"

    @classmethod
    def parse(cls, value: "str | Correction") -> "Correction":
        if isinstance(value, Correction):
            return value
        aliases = {"affected": cls.AFFECTED, "all": cls.ALL}
        key = str(value).strip().lower()
        if key in aliases:
            return aliases[key]
        try:
            return cls(key)
        except ValueError:
            raise ValueError(f"unknown correction policy {value!r}") from None


@dataclass(frozen=True)
class Study2x2:
    label: str
    tp: int
    fp: int
    fn: int
    tn: int
    test_group: str | None = None

    def __post_init__(self):
        for name in ("tp", "fp", "fn", "tn"):
            if getattr(self, name) < 0:
                raise DataError(f"negative count {name}={getattr(self, name)} in study {self.label!r}")
        if self.n_a < 1:
            raise DataError(f"study {self.label!r} has no diseased subjects (TP + FN = 0)")
        if self.n_b < 1:
            raise DataError(f"study {self.label!r} has no non-diseased subjects (FP + TN = 0)")

    @property
    def n_a(self) -> int:
        return self.tp + self.fn

    @property
    def n_b(self) -> int:
        return self.fp + self.tn

    @property
    def has_zero_cell(self) -> bool:
        return min(self.tp, self.fp, self.fn, self.tn) == 0


@dataclass(frozen=True)
class Dataset:
    studies: tuple[Study2x2, ...]
    name: str = ""

    def __post_init__(self):
        object.__setattr__(self, "studies", tuple(self.studies))
        seen = set()
        for s in self.studies:
            if s.label in seen:
                raise DataError(f"duplicate study label {s.label!r}")
            seen.add(s.label)

    def __len__(self) -> int:
        return len(self.studies)

    def __iter__(self):
        return iter(self.studies)

    @property
    def labels(self) -> list[str]:
        return [s.label for s in self.studies]

    def counts(self) -> np.ndarray:
        """(N, 4) integer array with columns TP, FP, FN, TN."""
        return np.array([[s.tp, s.fp, s.fn, s.tn] for s in self.studies], dtype=np.int64).reshape(-1, 4)

    def groups(self) -> list[str]:
        """Distinct test groups in first-appearance order."""
        out: list[str] = []
        for s in self.studies:
            if s.test_group is not None and s.test_group not in out:
                out.append(s.test_group)
        return out

    def select(self, group: str) -> "Dataset":
        chosen = tuple(s for s in self.studies if s.test_group == group)
        if not chosen:
            raise DataError(f"no studies in test group {group!r} (available: {', '.join(self.groups()) or 'none'})")
        return Dataset(chosen, name=f"{self.name}:{group}" if self.name else group)

    def drop(self, index: int) -> "Dataset":
        return Dataset(self.studies[:index] + self.studies[index + 1:], name=self.name)

    def with_counts(self, counts: np.ndarray) -> "Dataset":
        """Same labels and groups with replacement counts (rows TP, FP, FN, TN)."""
        return Dataset(
            tuple(
                Study2x2(s.label, int(c[0]), int(c[1]), int(c[2]), int(c[3]), s.test_group)
                for s, c in zip(self.studies, counts)
            ),
            name=self.name,
        )


@dataclass(frozen=True)
class LogitOutcome:
    y_a: float
    y_b: float
    s2_a: float
    s2_b: float


@dataclass(frozen=True, eq=False)
class OutcomeSet:
    """Per-study logit outcomes held as parallel arrays.

    ``y_a``/``y_b`` are logit sensitivity and logit FPR; ``s2_a``/``s2_b`` their
    within-study variances (the diagonal of S_i).
    """

    y_a: np.ndarray
    y_b: np.ndarray
    s2_a: np.ndarray
    s2_b: np.ndarray
    source: Dataset | None = None
    correction: Correction = Correction.AFFECTED
    labels: tuple[str, ...] = field(default=())

    def __post_init__(self):
        arrays = [np.ascontiguousarray(getattr(self, k), dtype=np.float64) for k in ("y_a", "y_b", "s2_a", "s2_b")]
        n = arrays[0].shape[0]
        if any(a.ndim != 1 or a.shape[0] != n for a in arrays):
            raise DataError("outcome arrays must be one-dimensional and of equal length")
        for k, a in zip(("y_a", "y_b", "s2_a", "s2_b"), arrays):
            a.setflags(write=False)
            object.__setattr__(self, k, a)
        if not (np.all(np.isfinite(arrays[0])) and np.all(np.isfinite(arrays[1]))):
            raise DataError("non-finite logit outcome")
        if not (np.all(arrays[2] > 0) and np.all(arrays[3] > 0) and np.all(np.isfinite(arrays[2])) and np.all(np.isfinite(arrays[3]))):
            raise DataError("within-study variances must be finite and positive")
        labels = tuple(self.labels) if self.labels else (
            tuple(self.source.labels) if self.source is not None else tuple(str(i + 1) for i in range(n))
        )
        if len(labels) != n:
            raise DataError("label count does not match outcome count")
        object.__setattr__(self, "labels", labels)

    def __len__(self) -> int:
        return self.y_a.shape[0]

    @property
    def outcomes(self) -> list[LogitOutcome]:
        return [LogitOutcome(*map(float, row)) for row in zip(self.y_a, self.y_b, self.s2_a, self.s2_b)]

    @property
    def y(self) -> np.ndarray:
        """(N, 2) matrix of outcome pairs."""
        return np.column_stack([self.y_a, self.y_b])

    def take(self, indices: Sequence[int] | np.ndarray) -> "OutcomeSet":
        idx = np.asarray(indices, dtype=np.intp)
        source = None
        if self.source is not None:
            source = Dataset(tuple(self.source.studies[i] for i in idx), name=self.source.name)
        return OutcomeSet(
            self.y_a[idx], self.y_b[idx], self.s2_a[idx], self.s2_b[idx],
            source=source, correction=self.correction, labels=tuple(self.labels[i] for i in idx),
        )

    def drop(self, index: int) -> "OutcomeSet":
        keep = [i for i in range(len(self)) if i != index]
        return self.take(keep)

    def with_y(self, y_a: np.ndarray, y_b: np.ndarray) -> "OutcomeSet":
        """Replace outcomes, keeping within-study variances and provenance."""
        return OutcomeSet(y_a, y_b, self.s2_a, self.s2_b, source=self.source,
                          correction=self.correction, labels=self.labels)


def logit(p):
    return np.log(p) - np.log1p(-p)


def expit(x):
    return 0.5 * (1.0 + np.tanh(0.5 * np.asarray(x, dtype=float)))


def _parse_count(text: str, column: str, line: int) -> int:
    raw = text.strip()
    try:
        value = int(raw)
    except ValueError:
        raise DataError(f"non-integer {column} count {raw!r}", line) from None
    if value < 0:
        raise DataError("negative count", line)
    return value


def parse_dataset(source: "str | TextIO", name: str = "") -> Dataset:
    """Parse ``study,TP,FP,FN,TN[,test]`` CSV text (or a text stream) into a Dataset.

    Lines starting with ``#`` and blank lines are skipped. Errors carry the
    physical line number of the offending row.
    """
    text = source if isinstance(source, str) else source.read()
    lines = [(i + 1, ln) for i, ln in enumerate(text.splitlines())
             if ln.strip() and not ln.lstrip().startswith("#")]
    if not lines:
        raise DataError("empty file")

    header_line, header_text = lines[0]
    header = [h.strip().lower() for h in next(csv.reader([header_text]))]
    missing = [c for c in REQUIRED_COLUMNS if c not in header]
    if missing:
        raise DataError(f"header missing column(s) {', '.join(missing)}", header_line)
    pos = {c: header.index(c) for c in header}
    has_test = "test" in pos
    if len(lines) == 1:
        raise DataError("empty file: header without data rows")

    studies = []
    seen: dict[str, int] = {}
    for line_no, row_text in lines[1:]:
        row = next(csv.reader([row_text]))
        if len(row) != len(header):
            raise DataError(f"malformed row: expected {len(header)} fields, got {len(row)}", line_no)
        label = row[pos["study"]].strip()
        if not label:
            raise DataError("empty study label", line_no)
        if label in seen:
            raise DataError(f"duplicate label {label!r} (first seen at line {seen[label]})", line_no)
        seen[label] = line_no
        tp, fp, fn, tn = (_parse_count(row[pos[c]], c.upper(), line_no) for c in ("tp", "fp", "fn", "tn"))
        group = (row[pos["test"]].strip() or None) if has_test else None
        try:
            studies.append(Study2x2(label, tp, fp, fn, tn, group))
        except DataError as exc:
            raise DataError(str(exc), line_no) from None
    return Dataset(tuple(studies), name=name)


def read_dataset(path: "str | os.PathLike") -> Dataset:
    path = Path(path)
    with open(path, encoding="utf-8-sig", newline="") as fh:
        return parse_dataset(fh, name=path.stem)


def format_dataset(d: Dataset) -> str:
    """Inverse of :func:`parse_dataset`."""
    buf = io.StringIO()
    has_test = any(s.test_group is not None for s in d)
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["study", "TP", "FP", "FN", "TN"] + (["test"] if has_test else []))
    for s in d:
        w.writerow([s.label, s.tp, s.fp, s.fn, s.tn] + ([s.test_group or ""] if has_test else []))
    return buf.getvalue()


def corrected_counts(counts: np.ndarray, policy: "Correction | str") -> np.ndarray:
    """Apply a continuity correction to an (N, 4) count array; returns floats."""
    policy = Correction.parse(policy)
    c = np.asarray(counts, dtype=np.float64).reshape(-1, 4)
    if policy is Correction.ALL:
        return c + 0.5
    zero = np.any(c == 0, axis=1)
    if policy is Correction.NONE:
        if np.any(zero):
            first = int(np.argmax(zero))
            raise DataError(f"zero cell in study #{first + 1} with correction policy 'none'")
        return c.copy()
    return c + 0.5 * zero[:, None]


def outcomes_from_counts(counts: np.ndarray, policy: "Correction | str" = Correction.AFFECTED,
                         source: Dataset | None = None, labels: Iterable[str] = ()) -> OutcomeSet:
    """Vectorized count -> logit transform used by both real and synthetic data."""
    policy = Correction.parse(policy)
    raw = np.asarray(counts).reshape(-1, 4)
    if np.any(raw[:, 0] + raw[:, 2] <= 0) or np.any(raw[:, 1] + raw[:, 3] <= 0):
        raise DataError("study with n_A = 0 or n_B = 0")
    c = corrected_counts(raw, policy)
    tp, fp, fn, tn = c.T
    y_a = np.log(tp) - np.log(fn)
    y_b = np.log(fp) - np.log(tn)
    s2_a = 1.0 / tp + 1.0 / fn
    s2_b = 1.0 / fp + 1.0 / tn
    return OutcomeSet(y_a, y_b, s2_a, s2_b, source=source, correction=policy, labels=tuple(labels))


def to_outcomes(d: Dataset, policy: "Correction | str" = Correction.AFFECTED) -> OutcomeSet:
    """Logit sensitivity/FPR and their within-study variances for every study."""
    if len(d) == 0:
        raise DataError("dataset has no studies")
    return outcomes_from_counts(d.counts(), policy, source=d)


def require_studies(n: int, minimum: int = MIN_STUDIES, what: str = "model fit") -> None:
    if n < minimum:
        raise InsufficientStudiesError(
            f"minimum study count not met: {what} needs at least {minimum} studies, got {n}")
