"""Sequential DINA forward model.

Categories of an item are attempted in order.  Given that category ``l-1``
was reached, category ``l`` is passed with probability ``beta_plus[j][l-1]``
when the respondent masters every attribute that category requires, and
``beta_minus[j][l-1]`` otherwise.  Each category may require its own set of
attributes.

A guessing probability of exactly zero blocks progress: once a respondent
lacking the attributes of category ``l*`` meets ``beta_minus = 0`` there,
no higher category is reachable for them.  That rule is applied per profile
at evaluation time, see :func:`processing_probability` and
:func:`normalize_cascade`.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
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
class SeqParams:
    """Conditional pass probabilities per item category.

    ``cuts[j]`` is the first category (1-based) of item ``j`` whose guessing
    probability is zero, or ``None``.  It is filled in by
    :func:`normalize_cascade`; evaluation derives the same information from
    ``beta_minus`` whenever it is absent.
    """

    beta_plus: tuple[np.ndarray, ...]
    beta_minus: tuple[np.ndarray, ...]
    cuts: tuple[int | None, ...] | None = None

    def __post_init__(self) -> None:
        plus = _freeze(self.beta_plus)
        minus = _freeze(self.beta_minus)
        if len(plus) != len(minus):
            raise ParameterError("beta_plus and beta_minus must cover the same items")
        for j, (a, b) in enumerate(zip(plus, minus)):
            if a.shape != b.shape:
                raise ParameterError(f"item {j + 1}: beta_plus and beta_minus lengths differ")
        object.__setattr__(self, "beta_plus", plus)
        object.__setattr__(self, "beta_minus", minus)

    @classmethod
    def from_lists(cls, beta_plus: Sequence[Sequence[float]], beta_minus: Sequence[Sequence[float]]) -> "SeqParams":
        return cls(tuple(np.asarray(b, dtype=float) for b in beta_plus), tuple(np.asarray(b, dtype=float) for b in beta_minus))

    @property
    def H(self) -> tuple[int, ...]:
        return tuple(b.size for b in self.beta_plus)

    def validate(self, q: QMatrix | None = None, *, ordered: bool = True) -> "SeqParams":
        """Check ``0 <= beta_minus < beta_plus <= 1`` for every category.

        ``ordered=False`` only checks the ``[0, 1]`` range; see
        :meth:`GpdinaParams.validate`.
        """
        if q is not None and self.H != q.H:
            raise ParameterError(f"parameter category counts {self.H} do not match the Q-matrix {q.H}")
        for j, (plus, minus) in enumerate(zip(self.beta_plus, self.beta_minus)):
            if np.any(~np.isfinite(plus)) or np.any(~np.isfinite(minus)):
                raise ParameterError(f"item {j + 1}: non-finite beta")
            if np.any(minus < 0) or np.any(plus > 1):
                raise ParameterError(f"item {j + 1}: beta must lie in [0, 1]")
            if ordered and np.any(minus >= plus):
                bad = int(np.flatnonzero(minus >= plus)[0]) + 1
                raise ParameterError(f"item {j + 1}, category {bad}: need beta_minus < beta_plus")
        return self

    def cascade_cuts(self) -> tuple[int | None, ...]:
        """First zero-guess category per item (1-based), or ``None``."""
        if self.cuts is not None:
            return self.cuts
        return _cuts_from(self.beta_minus)

    def flat(self) -> np.ndarray:
        """All free parameters as one vector: per item, plus values then minus values."""
        return np.concatenate([np.concatenate([a, b]) for a, b in zip(self.beta_plus, self.beta_minus)])

    @classmethod
    def from_flat(cls, vector: np.ndarray, H: Sequence[int]) -> "SeqParams":
        plus, minus, pos = [], [], 0
        for h in H:
            plus.append(np.array(vector[pos : pos + h]))
            minus.append(np.array(vector[pos + h : pos + 2 * h]))
            pos += 2 * h
        return cls(tuple(plus), tuple(minus))

    def to_json(self) -> dict:
        return {
            "model": "seq",
            "beta_plus": [b.tolist() for b in self.beta_plus],
            "beta_minus": [b.tolist() for b in self.beta_minus],
        }


def _freeze(arrays) -> tuple[np.ndarray, ...]:
    out = []
    for a in arrays:
        arr = np.array(a, dtype=float, copy=True).reshape(-1)
        arr.setflags(write=False)
        out.append(arr)
    return tuple(out)


def _cuts_from(beta_minus: Sequence[np.ndarray]) -> tuple[int | None, ...]:
    cuts = []
    for minus in beta_minus:
        zeros = np.flatnonzero(minus == 0)
        cuts.append(int(zeros[0]) + 1 if zeros.size else None)
    return tuple(cuts)


def random_params(q: QMatrix, rng: np.random.Generator, margin: float = 0.1) -> SeqParams:
    """Random interior parameters: ``beta_plus`` in ``(0.5 + margin/2, 1 - margin)``, ``beta_minus`` in ``(margin, 0.5 - margin/2)``."""
    plus = tuple(rng.uniform(0.5 + margin / 2, 1 - margin, size=h) for h in q.H)
    minus = tuple(rng.uniform(margin, 0.5 - margin / 2, size=h) for h in q.H)
    return SeqParams(plus, minus)


def _check_q(q: QMatrix) -> None:
    if q.kind is not QKind.SEQUENTIAL:
        raise PolydinaError("sequential functions need a Q-matrix of kind 'seq'")


def normalize_cascade(params: SeqParams, q: QMatrix) -> SeqParams:
    """Record, per item, the first category with zero guessing probability.

    Respondents lacking that category's attributes cannot go further, so
    every later pass probability is treated as exactly 0 for them.  The
    stored ``beta`` values are not modified, which keeps the operation
    idempotent.
    """
    _check_q(q)
    if params.H != q.H:
        raise ParameterError(f"parameter category counts {params.H} do not match the Q-matrix {q.H}")
    for j, (plus, minus) in enumerate(zip(params.beta_plus, params.beta_minus)):
        if np.any(minus > plus):
            bad = int(np.flatnonzero(minus > plus)[0]) + 1
            raise ParameterError(f"item {j + 1}, category {bad}: beta_minus exceeds beta_plus")
    return replace(params, cuts=_cuts_from(params.beta_minus))


def processing_tables(q: QMatrix, params: SeqParams) -> list[np.ndarray]:
    """Per-item ``(H_j + 2, 2**K)`` arrays of ``S_j(l | alpha)`` for ``l = 0..H_j+1``."""
    _check_q(q)
    profiles = enumerate_profiles(q.K)
    cuts = params.cascade_cuts()
    tables = []
    for j, block in enumerate(q.items):
        xi = ideal_matrix(block, profiles)
        H = block.shape[0]
        S = np.zeros((H + 2, profiles.shape[0]))
        S[0] = 1.0
        S[1 : H + 1] = np.where(xi, params.beta_plus[j][:, None], params.beta_minus[j][:, None])
        cut = cuts[j]
        if cut is not None and cut < H:
            blocked = ~xi[cut - 1]
            S[cut + 1 : H + 1, blocked] = 0.0
        tables.append(S)
    return tables


def cumulative_tables(q: QMatrix, params: SeqParams) -> list[np.ndarray]:
    """Per-item ``(H_j + 1, 2**K)`` arrays of ``P(R_j >= l | alpha)``."""
    return [np.cumprod(S[:-1], axis=0) for S in processing_tables(q, params)]


def pmf_tables(q: QMatrix, params: SeqParams) -> list[np.ndarray]:
    """Per-item ``(H_j + 1, 2**K)`` arrays of ``P(R_j = l | alpha)``."""
    out = []
    for S in processing_tables(q, params):
        reach = np.cumprod(S[:-1], axis=0)
        out.append(reach * (1.0 - S[1:]))
    return out


def _check_index(q: QMatrix, j: int) -> int:
    if not 0 <= j < q.J:
        raise PolydinaError(f"item index {j} out of range")
    return q.H[j]


def processing_probability(j: int, l: int, a: Sequence[int], params: SeqParams, q: QMatrix) -> float:
    """``S_j(l | a)``: probability of passing category ``l`` after reaching ``l - 1``."""
    _check_q(q)
    H = _check_index(q, j)
    if not 0 <= l <= H + 1:
        raise PolydinaError(f"category {l} outside 0..{H + 1} for item {j}")
    if l == 0:
        return 1.0
    if l == H + 1:
        return 0.0
    cut = params.cascade_cuts()[j]
    if cut is not None and l > cut and not ideal_response(q.items[j][cut - 1], a):
        return 0.0
    if ideal_response(q.items[j][l - 1], a):
        return float(params.beta_plus[j][l - 1])
    return float(params.beta_minus[j][l - 1])


def cumulative_prob(j: int, r: int, a: Sequence[int], params: SeqParams, q: QMatrix) -> float:
    """``P(R_j >= r | a)``."""
    H = _check_index(q, j)
    if not 0 <= r <= H:
        raise PolydinaError(f"category {r} outside 0..{H} for item {j}")
    out = 1.0
    for l in range(1, r + 1):
        out *= processing_probability(j, l, a, params, q)
    return out


def item_pmf(j: int, r: int, a: Sequence[int], params: SeqParams, q: QMatrix) -> float:
    """``P(R_j = r | a) = [1 - S_j(r+1|a)] * prod_{l<=r} S_j(l|a)``."""
    return cumulative_prob(j, r, a, params, q) * (1.0 - processing_probability(j, r + 1, a, params, q))


def marginal_prob(r: Sequence[int], q: QMatrix, params: SeqParams, p: Sequence[float]) -> float:
    """Probability of the full response pattern ``r``."""
    _check_q(q)
    if len(r) != q.J:
        raise PolydinaError(f"pattern has {len(r)} entries for {q.J} items")
    p = np.asarray(p, dtype=float)
    if p.shape != (2**q.K,):
        raise PolydinaError(f"proportion vector must have length {2**q.K}")
    weights = p.copy()
    for j, (rj, table) in enumerate(zip(r, pmf_tables(q, params))):
        if not 0 <= rj <= q.H[j]:
            raise PolydinaError(f"response {rj} outside 0..{q.H[j]} for item {j}")
        weights = weights * table[rj]
    return float(weights.sum())


def full_distribution(q: QMatrix, params: SeqParams, p: Sequence[float]) -> np.ndarray:
    """Probabilities of all response patterns in canonical order."""
    params.validate(q, ordered=False)
    p = check_proportions(p, q.K, strict=False)
    return hadamard_rows(pmf_tables(q, params)) @ p


def build_ts_matrix(q: QMatrix, params: SeqParams) -> TMatrix:
    """The survival matrix: entry ``(r, alpha)`` is ``prod_{j: r_j > 0} P(R_j >= r_j | alpha)``."""
    params.validate(q, ordered=False)
    return TMatrix(response_patterns(q.H), hadamard_rows(cumulative_tables(q, params)), q.H)


def sample(q: QMatrix, params: SeqParams, p: Sequence[float], n: int, seed: int | None = None) -> np.ndarray:
    """Draw ``n`` respondents by simulating the category-by-category passes."""
    if n < 1:
        raise PolydinaError("n must be at least 1")
    params.validate(q, ordered=False)
    p = check_proportions(p, q.K, strict=False)
    rng = np.random.default_rng(seed)
    profiles = rng.choice(p.size, size=n, p=p)
    out = np.zeros((n, q.J), dtype=np.int64)
    for j, S in enumerate(processing_tables(q, params)):
        alive = np.ones(n, dtype=bool)
        for l in range(1, q.H[j] + 1):
            passed = rng.random(n) < S[l, profiles]
            alive &= passed
            out[alive, j] = l
    return out
