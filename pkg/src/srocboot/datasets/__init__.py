"""Locator for the example data sets (cervical.csv, asthma.csv).

The files are not shipped with the source tree. Drop them into this directory
or point ``SROCBOOT_DATA_DIR`` at a directory that holds them.
"""

from __future__ import annotations

import os
from pathlib import Path

from ..data import Dataset, read_dataset

DATA_ENV = "SROCBOOT_DATA_DIR"
KNOWN = ("cervical", "asthma")


def search_dirs() -> list[Path]:
    dirs = []
    env = os.environ.get(DATA_ENV)
    if env:
        dirs.append(Path(env))
    dirs.append(Path(__file__).resolve().parent)
    return dirs


def find(name: str) -> Path | None:
    stem = name[:-4] if name.endswith(".csv") else name
    for d in search_dirs():
        p = d / f"{stem}.csv"
        if p.is_file():
            return p
    return None


def available(name: str) -> bool:
    return find(name) is not None


def load(name: str) -> Dataset:
    path = find(name)
    if path is None:
        raise FileNotFoundError(
            f"example data {name!r} not found; place {name}.csv in {search_dirs()[-1]} or set {DATA_ENV}")
    return read_dataset(path)
