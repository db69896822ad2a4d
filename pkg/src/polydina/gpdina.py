"""GPDINA forward model.

Every item has one q-vector shared by its nonzero categories.  A respondent
who masters all required attributes completes category ``l`` with
probability ``theta_plus[j][l-1]``, everyone else with
``theta_minus[j][l-1]``.  The probability of category 0 is the complement.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .core import (
    ParameterError,
    PolydinaError,
    QKind,
    QMatrix,
    TMatrix,
    check_proportions,
    enumerate_profiles,
    hadamard_rows,
    ideal_matrix,
    ideal_response,
    response_patterns,
)


@dataclass(frozen=True, eq=False)
class GpdinaParams:
    """Category success probabilities for masters (plus) and non-masters (minus).

    ``theta_plus[j][l-1]`` is the probability that a master of item ``j``
    lands in category ``l``.  Category 0 is implicit: ``1 - sum(theta[j])``.
    """

    theta_plus: tuple[np.ndarray, ...]
    theta_minus: tuple[np.ndarray, ...]

    def __post_init__(self) -> None:
        plus = _freeze(self.theta_plus)
        minus = _freeze(self.theta_minus)
        if len(plus) != len(minus):
            raise ParameterError("theta_plus and theta_minus must cover the same items")
        for j, (a, b) in enumerate(zip(plus, minus)):
            if a.shape != b.shape:
                raise ParameterError(f"item {j + 1}: theta_plus and theta_minus lengths differ")
        object.__setattr__(self, "theta_plus", plus)
        object.__setattr__(self, "theta_minus", minus)

    @classmethod
    def from_lists(cls, theta_plus: Sequence[Sequence[float]], theta_minus: Sequence[Sequence[float]]) -> "GpdinaParams":
        return cls(tuple(np.asarray(t, dtype=float) for t in theta_plus), tuple(np.asarray(t, dtype=float) for t in theta_minus))

    @property
    def H(self) -> tuple[int, ...]:
        return tuple(t.size for t in self.theta_plus)

    def validate(self, q: QMatrix | None = None, *, ordered: bool = True) -> "GpdinaParams":
        """Check ``0 <= minus < plus <= 1`` and that each item's masses sum to at most 1.

        ``ordered=False`` skips the ``minus < plus`` requirement.  The forward
        model does not need it, and the map from the sequential model does
        not preserve it.
        """
        if q is not None and self.H != q.H:
            raise ParameterError(f"parameter category counts {self.H} do not match the Q-matrix {q.H}")
        for j, (plus, minus) in enumerate(zip(self.theta_plus, self.theta_minus)):
            if np.any(~np.isfinite(plus)) or np.any(~np.isfinite(minus)):
                raise ParameterError(f"item {j + 1}: non-finite theta")
            if np.any(minus < 0) or np.any(plus > 1):
                raise ParameterError(f"item {j + 1}: theta must lie in [0, 1]")
            if ordered and np.any(minus >= plus):
                bad = int(np.flatnonzero(minus >= plus)[0]) + 1
                raise ParameterError(f"item {j + 1}, category {bad}: need theta_minus < theta_plus")
            for name, t in (("theta_plus", plus), ("theta_minus", minus)):
                if t.sum() > 1 + 1e-12:
                    raise ParameterError(f"item {j + 1}: {name} sums to {t.sum():.6g} > 1")
        return self

    def flat(self) -> np.ndarray:
        """All free parameters as one vector: per item, plus values then minus values."""
        return np.concatenate([np.concatenate([a, b]) for a, b in zip(self.theta_plus, self.theta_minus)])

    @classmethod
    def from_flat(cls, vector: np.ndarray, H: Sequence[int]) -> "GpdinaParams":
        plus, minus, pos = [], [], 0
        for h in H:
            plus.append(np.array(vector[pos : pos + h]))
            minus.append(np.array(vector[pos + h : pos + 2 * h]))
            pos += 2 * h
        return cls(tuple(plus), tuple(minus))

    def to_json(self) -> dict:
        return {
            "model": "gpdina",
            "theta_plus": [t.tolist() for t in self.theta_plus],
            "theta_minus": [t.tolist() for t in self.theta_minus],
        }


def _freeze(arrays) -> tuple[np.ndarray, ...]:
    out = []
    for a in arrays:
        arr = np.array(a, dtype=float, copy=True).reshape(-1)
        arr.setflags(write=False)
        out.append(arr)
    return tuple(out)


def random_params(q: QMatrix, rng: np.random.Generator, margin: float = 0.1) -> GpdinaParams:
    """Random valid parameters with ``minus < plus`` in every category.

    Master category masses come from a Dirichlet draw shrunk towards uniform
    so that category 0 keeps at least ``margin / (H + 1)``; each non-master
    mass is a random fraction between 0.2 and 0.7 of the master mass.
    """
    plus, minus = [], []
    for h in q.H:
        w = (1 - margin) * rng.dirichlet(np.full(h + 1, 2.0)) + margin / (h + 1)
        # Put most of the master mass on the nonzero categories.
        w = 0.5 * w + 0.5 * np.concatenate([[0.0], np.full(h, 1.0 / h)])
        plus.append(w[1:])
        minus.append(w[1:] * rng.uniform(0.2, 0.7, size=h))
    return GpdinaParams(tuple(plus), tuple(minus))


def _check_q(q: QMatrix) -> None:
    if q.kind is not QKind.GPDINA:
        raise PolydinaError("GPDINA functions need a Q-matrix of kind 'gpdina'")


def _ideal_items(q: QMatrix) -> np.ndarray:
    """``(J, 2**K)`` boolean matrix of item-level ideal responses."""
    return ideal_matrix(q.item_rows, enumerate_profiles(q.K))


def item_tables(q: QMatrix, params: GpdinaParams) -> list[np.ndarray]:
    """Per-item ``(H_j + 1, 2**K)`` tables of ``P(R_j = l | alpha)``."""
    _check_q(q)
    xi = _ideal_items(q)
    tables = []
    for j in range(q.J):
        plus = np.concatenate([[1.0 - params.theta_plus[j].sum()], params.theta_plus[j]])
        minus = np.concatenate([[1.0 - params.theta_minus[j].sum()], params.theta_minus[j]])
        tables.append(np.where(xi[j][None, :], plus[:, None], minus[:, None]))
    return tables


def category_pmf(j: int, l: int, a: Sequence[int], params: GpdinaParams, q: QMatrix) -> float:
    """``P(R_j = l | a)`` for item ``j`` (0-based) and category ``l`` in ``0..H_j``."""
    _check_q(q)
    if not 0 <= j < q.J:
        raise PolydinaError(f"item index {j} out of range")
    H = q.H[j]
    if not 0 <= l <= H:
        raise PolydinaError(f"category {l} outside 0..{H} for item {j}")
    theta = params.theta_plus[j] if ideal_response(q.items[j][0], a) else params.theta_minus[j]
    if l == 0:
        return float(1.0 - theta.sum())
    return float(theta[l - 1])


def marginal_prob(r: Sequence[int], q: QMatrix, params: GpdinaParams, p: Sequence[float]) -> float:
    """Probability of the full response pattern ``r``."""
    _check_q(q)
    if len(r) != q.J:
        raise PolydinaError(f"pattern has {len(r)} entries for {q.J} items")
    p = np.asarray(p, dtype=float)
    if p.shape != (2**q.K,):
        raise PolydinaError(f"proportion vector must have length {2**q.K}")
    tables = item_tables(q, params)
    weights = p.copy()
    for j, rj in enumerate(r):
        if not 0 <= rj <= q.H[j]:
            raise PolydinaError(f"response {rj} outside 0..{q.H[j]} for item {j}")
        weights = weights * tables[j][rj]
    return float(weights.sum())


def build_t_matrix(q: QMatrix, params: GpdinaParams) -> TMatrix:
    """The T-matrix: entry ``(r, alpha)`` is ``prod_{j: r_j > 0} P(R_j = r_j | alpha)``.

    Items with ``r_j = 0`` are left unconstrained, so row ``0`` is all ones.
    """
    params.validate(q, ordered=False)
    tables = item_tables(q, params)
    for t in tables:
        t[0, :] = 1.0
    return TMatrix(response_patterns(q.H), hadamard_rows(tables), q.H)


def full_distribution(q: QMatrix, params: GpdinaParams, p: Sequence[float]) -> np.ndarray:
    """Probabilities of all response patterns in canonical order."""
    params.validate(q, ordered=False)
    p = check_proportions(p, q.K, strict=False)
    return hadamard_rows(item_tables(q, params)) @ p


def sample(q: QMatrix, params: GpdinaParams, p: Sequence[float], n: int, seed: int | None = None) -> np.ndarray:
    """Draw ``n`` respondents: a profile from ``p``, then one category per item."""
    if n < 1:
        raise PolydinaError("n must be at least 1")
    params.validate(q, ordered=False)
    p = check_proportions(p, q.K, strict=False)
    rng = np.random.default_rng(seed)
    profiles = rng.choice(p.size, size=n, p=p)
    tables = item_tables(q, params)
    out = np.empty((n, q.J), dtype=np.int64)
    for j, table in enumerate(tables):
        cdf = np.cumsum(table[:, profiles], axis=0)
        u = rng.random(n)
        out[:, j] = np.minimum((u[None, :] >= cdf).sum(axis=0), table.shape[0] - 1)
    return out
