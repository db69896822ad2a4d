"""Bundled Q-matrices from two large-scale assessments.

``pisa2000_q.csv`` is an item-level GPDINA matrix (20 reading items, five
attributes).  ``timss2007_q.csv`` is a category-level sequential matrix (11
mathematics items, eight attributes, three items with two categories).
"""

from __future__ import annotations

import hashlib
from importlib import resources
from pathlib import Path

from .core import QKind, QMatrix, parse_q_matrix

DATASETS = {
    "pisa2000_q.csv": (QKind.GPDINA, "7dae2e744e04c8163b5ed8e4473702731d3d13756bda52b1de12eb1565797de0"),
    "timss2007_q.csv": (QKind.SEQUENTIAL, "e03bcf22ce9ca4668c8af41c337d70b3394c96d1852705181d8e1ce0495dd6a5"),
}


def dataset_bytes(name: str) -> bytes:
    if name not in DATASETS:
        raise KeyError(f"unknown dataset {name!r}; available: {', '.join(DATASETS)}")
    return resources.files("polydina").joinpath("data", name).read_bytes()


def sha256(name: str) -> str:
    return hashlib.sha256(dataset_bytes(name)).hexdigest()


def load(name: str) -> QMatrix:
    kind, _ = DATASETS[name]
    return parse_q_matrix(dataset_bytes(name).decode("utf-8"), kind)


def pisa2000() -> QMatrix:
    return load("pisa2000_q.csv")


def timss2007() -> QMatrix:
    return load("timss2007_q.csv")


def write_all(directory: str | Path) -> list[Path]:
    """Copy every bundled file into ``directory`` and return the written paths."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    out = []
    for name in DATASETS:
        path = directory / name
        path.write_bytes(dataset_bytes(name))
        out.append(path)
    return out
