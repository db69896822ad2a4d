"""Structural identifiability checks on Q-matrices.

GPDINA (a characterization):

* ``C1``: for every attribute some item requires exactly that attribute.
* ``C2``: every attribute is required by at least three items.
* ``C3``: after setting aside one unit row per attribute, the remaining rows
  have pairwise distinct columns.

Sequential model, sufficient conditions on the first-category rows ``Q1``:
``S1``-``S3`` are ``C1``-``C3`` applied to ``Q1``.

Sequential model, necessary conditions: ``S1`` again, plus

* ``S2star``: every attribute is required by at least three category rows
  which come from at least two different items;
* ``S3star``: after setting aside one unit first-category row per attribute,
  all remaining category rows (including higher categories of the
  set-aside items) have pairwise distinct columns.

When the sufficient conditions fail but the necessary ones hold, the
verdict is ``Undetermined``.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .core import PolydinaError, PrunedSet, QKind, QMatrix, prune_zero_categories

BLOCK_CHECK_MAX_ITEMS = 12


class Verdict(str, Enum):
    IDENTIFIABLE = "Identifiable"
    NOT_IDENTIFIABLE = "NotIdentifiable"
    UNDETERMINED = "Undetermined"


@dataclass(frozen=True)
class ConditionResult:
    """Outcome of one condition.

    ``attributes`` and ``rows`` are 0-based machine-readable witness fields
    (rows index the matrix the condition was evaluated on).  ``witness`` is
    a human-readable description and is empty exactly when the condition
    holds.
    """

    condition_id: str
    holds: bool
    witness: str = ""
    attributes: tuple[int, ...] = ()
    rows: tuple[int, ...] = ()
    note: str = ""

    def __post_init__(self) -> None:
        if self.holds == bool(self.witness):
            raise ValueError("witness must be non-empty exactly when the condition fails")

    def as_json(self) -> dict:
        out = {"id": self.condition_id, "holds": self.holds, "witness": self.witness}
        if self.note:
            out["note"] = self.note
        return out


@dataclass(frozen=True)
class IdentifiabilityReport:
    model: str
    K: int
    J: int
    pruned: PrunedSet
    results: tuple[ConditionResult, ...]
    verdict: Verdict
    notes: tuple[str, ...] = field(default=())

    def result(self, condition_id: str) -> ConditionResult:
        for r in self.results:
            if r.condition_id == condition_id:
                return r
        raise KeyError(condition_id)

    def holds(self, condition_id: str) -> bool:
        return self.result(condition_id).holds

    def as_json(self) -> dict:
        out = {
            "model": self.model,
            "K": self.K,
            "J": self.J,
            "pruned": self.pruned.as_json(),
            "conditions": [r.as_json() for r in self.results],
            "verdict": self.verdict.value,
        }
        if self.notes:
            out["notes"] = list(self.notes)
        return out


# ---------------------------------------------------------------------------
# Matrix-level helpers
# ---------------------------------------------------------------------------


def _attr_names(attrs) -> str:
    return ",".join(f"α{k + 1}" for k in attrs)


def unit_rows(M: np.ndarray) -> dict[int, list[int]]:
    """For every attribute, the indices of rows equal to its unit vector."""
    K = M.shape[1]
    out: dict[int, list[int]] = {k: [] for k in range(K)}
    for i, row in enumerate(M):
        if row.sum() == 1:
            out[int(np.flatnonzero(row)[0])].append(i)
    return out


def identity_block(M: np.ndarray) -> list[int] | None:
    """Greedy identity block: the first unit row for each attribute, or ``None``."""
    units = unit_rows(M)
    if any(not rows for rows in units.values()):
        return None
    return [units[k][0] for k in range(M.shape[1])]


def all_identity_blocks(M: np.ndarray):
    """Every way of choosing one unit row per attribute."""
    units = unit_rows(M)
    return itertools.product(*(units[k] for k in range(M.shape[1])))


def equal_column_pairs(M: np.ndarray) -> list[tuple[int, int]]:
    """Pairs ``(k, k')`` with ``k < k'`` whose columns in ``M`` coincide."""
    K = M.shape[1]
    return [(a, b) for a, b in itertools.combinations(range(K), 2) if np.array_equal(M[:, a], M[:, b])]


def _completeness(cid: str, M: np.ndarray, what: str) -> ConditionResult:
    units = unit_rows(M)
    missing = tuple(k for k in range(M.shape[1]) if not units[k])
    if not missing:
        return ConditionResult(cid, True)
    return ConditionResult(
        cid,
        False,
        f"no {what} equals the unit vector of {_attr_names(missing)} (missing unit rows for {_attr_names(missing)})",
        attributes=missing,
    )


def _coverage(cid: str, M: np.ndarray, what: str, minimum: int = 3) -> ConditionResult:
    counts = M.sum(axis=0)
    short = tuple(int(k) for k in np.flatnonzero(counts < minimum))
    if not short:
        return ConditionResult(cid, True)
    detail = ", ".join(f"α{k + 1} in {int(counts[k])}" for k in short)
    return ConditionResult(cid, False, f"attributes required by fewer than {minimum} {what}s: {detail}", attributes=short)


def _distinct_after_block(cid: str, remaining: np.ndarray, block: list[int], what: str) -> ConditionResult:
    pairs = equal_column_pairs(remaining)
    if not pairs:
        return ConditionResult(cid, True)
    a, b = pairs[0]
    text = "; ".join(f"columns α{x + 1} and α{y + 1} coincide" for x, y in pairs)
    return ConditionResult(
        cid,
        False,
        f"after removing the identity block ({what}s {', '.join(str(i + 1) for i in block)}): {text}",
        attributes=(a, b),
        rows=tuple(block),
    )


def _block_choice_check(M: np.ndarray, check) -> None:
    """Confirm that a distinctness check gives the same answer for every identity block.

    All unit rows for one attribute are identical, so the remaining row
    multiset never depends on the choice; the check guards that reasoning.
    """
    if M.shape[0] > BLOCK_CHECK_MAX_ITEMS:
        return
    outcomes = {check(list(block)) for block in all_identity_blocks(M)}
    if len(outcomes) > 1:
        raise RuntimeError("distinct-columns check depends on the identity block choice")


# ---------------------------------------------------------------------------
# GPDINA
# ---------------------------------------------------------------------------


def _prune_nonempty(q: QMatrix) -> tuple[QMatrix, PrunedSet]:
    if q.K < 1:
        raise PolydinaError("K must be positive")
    pruned, record = prune_zero_categories(q)
    if pruned.J == 0:
        raise PolydinaError("no items left after removing all-zero q-vectors")
    return pruned, record


def _c1_c2_c3(M: np.ndarray, ids: tuple[str, str, str], what: str) -> list[ConditionResult]:
    c1 = _completeness(ids[0], M, what)
    c2 = _coverage(ids[1], M, what)
    block = identity_block(M)
    if block is None:
        c3 = ConditionResult(ids[2], True, note=f"not applicable: {ids[0]} fails, so there is no identity block to remove")
    else:
        def remaining_distinct(chosen: list[int]) -> bool:
            return not equal_column_pairs(np.delete(M, chosen, axis=0))

        _block_choice_check(M, remaining_distinct)
        c3 = _distinct_after_block(ids[2], np.delete(M, block, axis=0), block, what)
    return [c1, c2, c3]


def check_gpdina(q: QMatrix) -> IdentifiabilityReport:
    """Evaluate C1-C3 on the item-level Q-matrix and return the verdict."""
    if q.kind is not QKind.GPDINA:
        q = q.as_kind(QKind.GPDINA)
    pruned, record = _prune_nonempty(q)
    results = _c1_c2_c3(pruned.item_rows, ("C1", "C2", "C3"), "item row")
    ok = all(r.holds for r in results)
    verdict = Verdict.IDENTIFIABLE if ok else Verdict.NOT_IDENTIFIABLE
    return IdentifiabilityReport("gpdina", pruned.K, pruned.J, record, tuple(results), verdict)


# ---------------------------------------------------------------------------
# Sequential
# ---------------------------------------------------------------------------


def extract_q1(q: QMatrix) -> np.ndarray:
    """The ``J x K`` matrix of first-category q-vectors."""
    return np.array(q.item_rows)


def check_seq_sufficient(q: QMatrix) -> list[ConditionResult]:
    """S1-S3 on the first-category matrix of an already pruned Q-matrix."""
    return _c1_c2_c3(extract_q1(q), ("S1", "S2", "S3"), "first-category row")


def _s2star(q: QMatrix) -> ConditionResult:
    rows = q.rows
    items = np.array([j for j, _ in q.category_keys])
    problems, attrs = [], []
    for k in range(q.K):
        using = np.flatnonzero(rows[:, k] == 1)
        n_items = len(set(items[using].tolist()))
        if using.size < 3 or n_items < 2:
            attrs.append(k)
            problems.append(f"α{k + 1} in {using.size} category rows from {n_items} item(s)")
    if not problems:
        return ConditionResult("S2star", True)
    return ConditionResult(
        "S2star",
        False,
        "attributes not required by at least three category rows from at least two items: " + "; ".join(problems),
        attributes=tuple(attrs),
    )


def _s3star(q: QMatrix) -> ConditionResult:
    Q1 = extract_q1(q)
    block = identity_block(Q1)
    if block is None:
        return ConditionResult("S3star", True, note="not applicable: S1 fails, so there is no identity block to remove")
    keys = q.category_keys
    rows = q.rows

    def remaining(chosen: list[int]) -> np.ndarray:
        drop = {(j, 1) for j in chosen}
        keep = [i for i, key in enumerate(keys) if key not in drop]
        return rows[keep]

    _block_choice_check(Q1, lambda chosen: not equal_column_pairs(remaining(chosen)))
    return _distinct_after_block("S3star", remaining(block), block, "first category of item")


def check_seq_necessary(q: QMatrix) -> list[ConditionResult]:
    """S1, S2star and S3star on an already pruned Q-matrix."""
    s1 = _completeness("S1", extract_q1(q), "first-category row")
    return [s1, _s2star(q), _s3star(q)]


def seq_verdict(q: QMatrix) -> IdentifiabilityReport:
    """Combine the sufficient and the necessary checks into a three-valued verdict."""
    if q.kind is not QKind.SEQUENTIAL:
        q = q.as_kind(QKind.SEQUENTIAL)
    pruned, record = _prune_nonempty(q)
    s1, s2, s3 = check_seq_sufficient(pruned)
    _, s2star, s3star = check_seq_necessary(pruned)
    results = (s1, s2, s3, s2star, s3star)
    notes: list[str] = []
    if s1.holds and s2.holds and s3.holds:
        verdict = Verdict.IDENTIFIABLE
    elif not (s1.holds and s2star.holds and s3star.holds):
        verdict = Verdict.NOT_IDENTIFIABLE
    else:
        verdict = Verdict.UNDETERMINED
        if not s2.holds:
            notes.append("S2 fails; S2* holds")
        if not s3.holds:
            notes.append("S3 fails; S3* holds")
    return IdentifiabilityReport("seq", pruned.K, pruned.J, record, results, verdict, tuple(notes))


def check(q: QMatrix) -> IdentifiabilityReport:
    """Dispatch on the Q-matrix layout."""
    return check_gpdina(q) if q.kind is QKind.GPDINA else seq_verdict(q)
