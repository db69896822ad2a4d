"""Shared building blocks: attribute profiles, Q-matrices, parsing and pruning.

Conventions used throughout the package:

* Attribute profiles are indexed by ``sum_k alpha_k * 2**(k-1)`` so that the
  first attribute is the least significant bit.  For ``K=2`` the order is
  ``(0,0), (1,0), (0,1), (1,1)``.
* Response patterns are ordered in mixed radix with the last item varying
  fastest, i.e. the order produced by :func:`itertools.product`.
* Items are indexed from 0 in the Python API.  Categories are numbered from
  1 (category 0 is the "no progress" response).  Human-facing outputs such
  as witnesses, CSV files and JSON reports use 1-based item numbers.
"""

from __future__ import annotations

import csv
import io
import itertools
import os
from dataclasses import dataclass
from enum import Enum
from typing import Iterable, Sequence

import numpy as np

MAX_ATTRIBUTES = 20
DEFAULT_MATRIX_CAP = 2**26
MATRIX_CAP_ENV = "POLYDINA_MATRIX_CAP"


class PolydinaError(ValueError):
    """Base class for input and model errors raised by this package."""


class QMatrixError(PolydinaError):
    """Malformed or inconsistent Q-matrix input."""


class ParameterError(PolydinaError):
    """Item parameters or proportions that violate model constraints."""


class SizeCapError(PolydinaError):
    """A dense matrix would exceed the configured entry cap."""


class QKind(str, Enum):
    """The two Q-matrix layouts.

    ``GPDINA`` stores one requirement vector per item, shared by all of its
    nonzero categories.  ``SEQUENTIAL`` stores one requirement vector per
    category (a "restricted" Q-matrix).
    """

    GPDINA = "gpdina"
    SEQUENTIAL = "seq"


def matrix_cap() -> int:
    """Return the maximum number of dense matrix entries we agree to build."""
    raw = os.environ.get(MATRIX_CAP_ENV)
    if raw is None or raw.strip() == "":
        return DEFAULT_MATRIX_CAP
    try:
        cap = int(raw)
    except ValueError as exc:
        raise PolydinaError(f"{MATRIX_CAP_ENV} must be an integer, got {raw!r}") from exc
    if cap <= 0:
        raise PolydinaError(f"{MATRIX_CAP_ENV} must be positive, got {cap}")
    return cap


# ---------------------------------------------------------------------------
# Attribute profiles
# ---------------------------------------------------------------------------


def enumerate_profiles(K: int) -> np.ndarray:
    """All ``2**K`` attribute profiles as rows of a ``(2**K, K)`` 0/1 array.

    Row ``i`` holds the profile whose canonical index is ``i``.
    """
    if not isinstance(K, (int, np.integer)) or not 1 <= K <= MAX_ATTRIBUTES:
        raise PolydinaError(f"K must be an integer in [1, {MAX_ATTRIBUTES}], got {K!r}")
    idx = np.arange(2**K, dtype=np.int64)
    bits = (idx[:, None] >> np.arange(K, dtype=np.int64)[None, :]) & 1
    return bits.astype(np.int8)


def profile_index(a: Sequence[int]) -> int:
    """Canonical index of a profile (first attribute least significant)."""
    bits = _as_binary_vector(a, "profile")
    return int(sum(int(b) << k for k, b in enumerate(bits)))


def unit_profile(K: int, k: int) -> np.ndarray:
    """The profile mastering only attribute ``k`` (0-based)."""
    e = np.zeros(K, dtype=np.int8)
    e[k] = 1
    return e


def ideal_response(q_row: Sequence[int], a: Sequence[int]) -> int:
    """Return 1 when profile ``a`` has every attribute that ``q_row`` requires."""
    q = _as_binary_vector(q_row, "q-vector")
    alpha = _as_binary_vector(a, "profile")
    if q.shape != alpha.shape:
        raise PolydinaError(f"length mismatch: q-vector has {q.size} entries, profile has {alpha.size}")
    return int(np.all(alpha >= q))


def ideal_matrix(rows: np.ndarray, profiles: np.ndarray) -> np.ndarray:
    """Ideal responses for many rows at once.

    Returns a boolean array of shape ``(len(rows), len(profiles))`` whose
    ``(i, a)`` entry says whether profile ``a`` dominates ``rows[i]``.
    """
    rows = np.asarray(rows, dtype=np.int64)
    profiles = np.asarray(profiles, dtype=np.int64)
    if rows.ndim == 1:
        rows = rows[None, :]
    return (profiles @ rows.T).T == rows.sum(axis=1)[:, None]


def _as_binary_vector(values: Sequence[int], what: str) -> np.ndarray:
    arr = np.asarray(values)
    if arr.ndim != 1:
        raise PolydinaError(f"{what} must be one-dimensional")
    if not np.all((arr == 0) | (arr == 1)):
        raise PolydinaError(f"{what} entries must be 0 or 1, got {arr.tolist()}")
    return arr.astype(np.int8)


def check_proportions(p: Sequence[float], K: int, *, strict: bool = True) -> np.ndarray:
    """Validate a proportion vector over the ``2**K`` profiles and return it as floats.

    With ``strict=True`` every entry must be positive; otherwise zeros are
    allowed (useful for degenerate test designs).
    """
    arr = np.asarray(p, dtype=float)
    if arr.shape != (2**K,):
        raise ParameterError(f"proportion vector must have length {2**K}, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ParameterError("proportion vector contains non-finite entries")
    if strict and np.any(arr <= 0):
        raise ParameterError("proportions must be strictly positive")
    if np.any(arr < 0):
        raise ParameterError("proportions must be nonnegative")
    if abs(arr.sum() - 1.0) > 1e-12:
        raise ParameterError(f"proportions must sum to 1 (sum is {arr.sum():.15g})")
    return arr


# ---------------------------------------------------------------------------
# Response patterns
# ---------------------------------------------------------------------------


def random_proportions(K: int, rng: np.random.Generator, floor: float = 0.2) -> np.ndarray:
    """A flat Dirichlet draw mixed with the uniform vector, so every entry is positive."""
    n = 2**K
    draw = rng.dirichlet(np.ones(n))
    return (1 - floor) * draw + floor / n


def response_patterns(H: Sequence[int]) -> np.ndarray:
    """All response patterns for items with ``H[j]`` nonzero categories.

    The rows are in mixed-radix order with the last item varying fastest.
    """
    H = tuple(int(h) for h in H)
    if not H:
        return np.zeros((1, 0), dtype=np.int64)
    grid = itertools.product(*(range(h + 1) for h in H))
    return np.array(list(grid), dtype=np.int64).reshape(-1, len(H))


def pattern_index(r: Sequence[int], H: Sequence[int]) -> int:
    """Row index of response pattern ``r`` in :func:`response_patterns` order."""
    if len(r) != len(H):
        raise PolydinaError(f"pattern has {len(r)} entries, expected {len(H)}")
    index = 0
    for rj, hj in zip(r, H):
        if not 0 <= rj <= hj:
            raise PolydinaError(f"response {rj} outside 0..{hj}")
        index = index * (hj + 1) + int(rj)
    return index


def hadamard_rows(tables: Sequence[np.ndarray]) -> np.ndarray:
    """Combine per-item tables into a joint matrix by elementwise products.

    Each ``tables[j]`` has shape ``(H_j + 1, A)``.  The result has one row per
    response pattern (mixed-radix order) and entry
    ``prod_j tables[j][r_j, a]``.
    """
    if not tables:
        raise PolydinaError("need at least one item table")
    A = tables[0].shape[1]
    n_rows = 1
    for t in tables:
        n_rows *= t.shape[0]
    if n_rows * A > matrix_cap():
        raise SizeCapError(
            f"matrix with {n_rows} rows and {A} columns exceeds the cap of {matrix_cap()} entries "
            f"(set {MATRIX_CAP_ENV} to raise it)"
        )
    out = np.ones((1, A))
    for t in tables:
        out = (out[:, None, :] * t[None, :, :]).reshape(-1, A)
    return out


@dataclass(frozen=True, eq=False)
class TMatrix:
    """Dense matrix with rows keyed by response pattern and columns by profile."""

    patterns: np.ndarray
    values: np.ndarray
    H: tuple[int, ...]

    def row(self, r: Sequence[int]) -> np.ndarray:
        return self.values[pattern_index(r, self.H)]

    def to_csv(self, K: int) -> str:
        profiles = enumerate_profiles(K)
        header = ["r"] + ["".join(str(int(b)) for b in a) for a in profiles]
        lines = [",".join(header)]
        for r, vals in zip(self.patterns, self.values):
            key = "".join(str(int(x)) for x in r) if max(self.H, default=0) < 10 else "-".join(str(int(x)) for x in r)
            lines.append(",".join([key] + [repr(float(v)) for v in vals]))
        return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# Q-matrices
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class QMatrix:
    """Requirement structure linking item categories to attributes.

    ``items[j]`` is an ``(H_j, K)`` 0/1 array with one row per nonzero
    category.  For the GPDINA layout every row of an item is identical.
    Arrays are stored read-only so instances can be shared freely.
    """

    kind: QKind
    K: int
    items: tuple[np.ndarray, ...]
    labels: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        kind = QKind(self.kind)
        object.__setattr__(self, "kind", kind)
        if not isinstance(self.K, (int, np.integer)) or not 1 <= self.K <= MAX_ATTRIBUTES:
            raise QMatrixError(f"K must be in [1, {MAX_ATTRIBUTES}], got {self.K!r}")
        frozen = []
        for j, block in enumerate(self.items):
            arr = np.array(block, dtype=np.int8, copy=True)
            if arr.ndim == 1:
                arr = arr[None, :]
            if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] != self.K:
                raise QMatrixError(f"item {j + 1}: expected at least one row of {self.K} entries")
            if not np.all((arr == 0) | (arr == 1)):
                raise QMatrixError(f"item {j + 1}: entries must be 0 or 1")
            if kind is QKind.GPDINA and np.any(arr != arr[0]):
                raise QMatrixError(f"item {j + 1}: GPDINA categories must share one q-vector")
            arr.setflags(write=False)
            frozen.append(arr)
        object.__setattr__(self, "items", tuple(frozen))
        labels = tuple(str(x) for x in self.labels) or tuple(str(j + 1) for j in range(len(frozen)))
        if len(labels) != len(frozen):
            raise QMatrixError("one label per item is required")
        object.__setattr__(self, "labels", labels)

    # -- constructors -----------------------------------------------------

    @classmethod
    def gpdina(cls, rows: Iterable[Sequence[int]], H: Sequence[int] | int = 1, labels: Sequence[str] = ()) -> "QMatrix":
        """Item-level Q-matrix: one q-vector per item plus its category count."""
        rows = [np.asarray(r, dtype=np.int8) for r in rows]
        if not rows:
            raise QMatrixError("Q-matrix has no items")
        if isinstance(H, (int, np.integer)):
            H = [int(H)] * len(rows)
        if len(H) != len(rows):
            raise QMatrixError("need one category count per item")
        if any(h < 1 for h in H):
            raise QMatrixError("every item needs at least one nonzero category")
        K = rows[0].size
        blocks = tuple(np.tile(r, (int(h), 1)) for r, h in zip(rows, H))
        return cls(QKind.GPDINA, K, blocks, tuple(labels))

    @classmethod
    def sequential(cls, items: Iterable[Sequence[Sequence[int]]], labels: Sequence[str] = ()) -> "QMatrix":
        """Category-level Q-matrix: ``items[j][l-1]`` is the q-vector of category ``l``."""
        blocks = tuple(np.asarray(block, dtype=np.int8) for block in items)
        if not blocks:
            raise QMatrixError("Q-matrix has no items")
        first = blocks[0]
        K = first.shape[-1]
        return cls(QKind.SEQUENTIAL, K, blocks, tuple(labels))

    # -- derived views ----------------------------------------------------

    @property
    def J(self) -> int:
        return len(self.items)

    @property
    def H(self) -> tuple[int, ...]:
        return tuple(block.shape[0] for block in self.items)

    @property
    def rows(self) -> np.ndarray:
        """All category rows stacked item by item, shape ``(sum H, K)``."""
        return np.vstack(self.items)

    @property
    def category_keys(self) -> list[tuple[int, int]]:
        """``(item, category)`` for every stacked row; item 0-based, category 1-based."""
        return [(j, l + 1) for j, block in enumerate(self.items) for l in range(block.shape[0])]

    @property
    def item_rows(self) -> np.ndarray:
        """First-category rows, one per item (the item row for GPDINA)."""
        return np.vstack([block[0] for block in self.items])

    def is_unrestricted(self) -> bool:
        """True when every item uses the same q-vector for all categories."""
        return all(np.all(block == block[0]) for block in self.items)

    def as_kind(self, kind: QKind | str) -> "QMatrix":
        """Reinterpret the same rows under another layout.

        Converting to GPDINA requires an unrestricted matrix.
        """
        kind = QKind(kind)
        if kind is QKind.GPDINA and not self.is_unrestricted():
            raise QMatrixError("a restricted Q-matrix has no GPDINA counterpart")
        return QMatrix(kind, self.K, self.items, self.labels)

    def permuted(self, item_order: Sequence[int] | None = None, attr_order: Sequence[int] | None = None) -> "QMatrix":
        """Return a copy with items and/or attribute columns reordered."""
        item_order = list(range(self.J)) if item_order is None else list(item_order)
        attr_order = list(range(self.K)) if attr_order is None else list(attr_order)
        blocks = tuple(self.items[j][:, attr_order] for j in item_order)
        labels = tuple(self.labels[j] for j in item_order)
        return QMatrix(self.kind, self.K, blocks, labels)

    # -- comparison and export -----------------------------------------------

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, QMatrix):
            return NotImplemented
        return (
            self.kind is other.kind
            and self.K == other.K
            and self.H == other.H
            and all(np.array_equal(a, b) for a, b in zip(self.items, other.items))
        )

    def __hash__(self) -> int:
        return hash((self.kind, self.K, tuple(block.tobytes() for block in self.items)))

    def __repr__(self) -> str:
        body = "; ".join(
            "[" + ", ".join("".join(str(int(v)) for v in row) for row in block) + "]" for block in self.items
        )
        return f"QMatrix({self.kind.value}, K={self.K}, {body})"

    def to_csv(self, header: bool = True) -> str:
        """Serialize in the package's CSV layout (see :func:`parse_q_matrix`)."""
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        attrs = [f"q{k + 1}" for k in range(self.K)]
        if self.kind is QKind.GPDINA:
            if header:
                buf.write("# " + ",".join(["item", "ncat", *attrs]) + "\n")
            for label, block in zip(self.labels, self.items):
                writer.writerow([label, block.shape[0] + 1, *block[0].tolist()])
        else:
            if header:
                buf.write("# " + ",".join(["item", "category", *attrs]) + "\n")
            for label, block in zip(self.labels, self.items):
                for l, row in enumerate(block, start=1):
                    writer.writerow([label, l, *row.tolist()])
        return buf.getvalue()


def parse_q_matrix(text: str, kind: QKind | str) -> QMatrix:
    """Parse a Q-matrix from CSV text.

    Sequential files have columns ``item,category,q1..qK`` with one row per
    nonzero category.  GPDINA files have columns ``item,ncat,q1..qK`` with
    one row per item, where ``ncat`` counts all response categories including
    category 0 (so the item has ``ncat - 1`` nonzero categories).  A GPDINA
    file may repeat an item's row; repeated rows must agree.  Lines starting
    with ``#`` and blank lines are ignored.  Rows are grouped by item label in
    order of first appearance.
    """
    kind = QKind(kind)
    records = []
    for lineno, row in enumerate(csv.reader(io.StringIO(text)), start=1):
        if not row or all(cell.strip() == "" for cell in row):
            continue
        if row[0].lstrip().startswith("#"):
            continue
        records.append((lineno, [cell.strip() for cell in row]))
    if not records:
        raise QMatrixError("Q-matrix file is empty")
    width = len(records[0][1])
    if width < 3:
        raise QMatrixError("expected columns item,<category|ncat>,q1..qK")
    for lineno, row in records:
        if len(row) != width:
            raise QMatrixError(f"line {lineno}: ragged row ({len(row)} columns, expected {width})")
    K = width - 2

    groups: dict[str, list[tuple[int, int, np.ndarray]]] = {}
    for lineno, row in records:
        label = row[0]
        try:
            second = int(row[1])
        except ValueError as exc:
            raise QMatrixError(f"line {lineno}: column 2 must be an integer, got {row[1]!r}") from exc
        cells = row[2:]
        if any(c not in ("0", "1") for c in cells):
            raise QMatrixError(f"line {lineno}: non-binary cell in {cells}")
        groups.setdefault(label, []).append((lineno, second, np.array([int(c) for c in cells], dtype=np.int8)))

    labels = list(groups)
    if kind is QKind.SEQUENTIAL:
        blocks = []
        for label in labels:
            entries = sorted(groups[label], key=lambda e: e[1])
            cats = [e[1] for e in entries]
            if cats != list(range(1, len(cats) + 1)):
                raise QMatrixError(f"item {label}: categories must be 1..H without gaps, got {cats}")
            blocks.append(np.vstack([e[2] for e in entries]))
        return QMatrix(QKind.SEQUENTIAL, K, tuple(blocks), tuple(labels))

    rows, H = [], []
    for label in labels:
        entries = groups[label]
        first_line, ncat, q = entries[0]
        for lineno, other_ncat, other_q in entries[1:]:
            if other_ncat != ncat or not np.array_equal(other_q, q):
                raise QMatrixError(f"item {label}: categories disagree (lines {first_line} and {lineno})")
        if ncat < 2:
            raise QMatrixError(f"item {label}: ncat must be at least 2 (category 0 plus one more), got {ncat}")
        rows.append(q)
        H.append(ncat - 1)
    return QMatrix.gpdina(rows, H, labels)


# ---------------------------------------------------------------------------
# Pruning of all-zero rows
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PrunedSet:
    """Record of categories removed because their q-vector was all zero.

    ``removed`` lists ``(item, category)`` pairs with 1-based numbering in the
    original Q-matrix.  ``kept`` has one entry per original item: the
    original category numbers that survived (empty if the item was dropped).
    """

    removed: tuple[tuple[int, int], ...] = ()
    removed_items: tuple[int, ...] = ()
    kept: tuple[tuple[int, ...], ...] = ()

    @property
    def kept_items(self) -> tuple[int, ...]:
        """0-based original indices of the items that survived pruning."""
        return tuple(j for j, cats in enumerate(self.kept) if cats)

    def as_json(self) -> list[dict[str, int]]:
        return [{"item": j, "category": l} for j, l in self.removed]


def prune_zero_categories(q: QMatrix) -> tuple[QMatrix, PrunedSet]:
    """Remove all-zero category rows (whole items for the GPDINA layout).

    Sequential categories that survive are renumbered consecutively.  An
    item whose categories are all removed disappears and is listed in
    ``removed_items``.  If every item disappears the result has ``J == 0``;
    callers that need items (the condition checkers) reject that case.
    """
    removed: list[tuple[int, int]] = []
    removed_items: list[int] = []
    kept: list[tuple[int, ...]] = []
    blocks: list[np.ndarray] = []
    labels: list[str] = []
    for j, block in enumerate(q.items):
        zero = ~block.any(axis=1)
        removed.extend((j + 1, l + 1) for l in np.flatnonzero(zero))
        survivors = tuple(int(l) + 1 for l in np.flatnonzero(~zero))
        kept.append(survivors)
        if survivors:
            blocks.append(block[~zero])
            labels.append(q.labels[j])
        else:
            removed_items.append(j + 1)
    record = PrunedSet(tuple(removed), tuple(removed_items), tuple(kept))
    return QMatrix(q.kind, q.K, tuple(blocks), tuple(labels)), record
