"""Numerical identifiability tools.

* :func:`distribution_distance` compares the response distributions of two
  parameter sets.
* :func:`jacobian_rank` measures local identifiability at a point through
  the rank of the finite-difference Jacobian of the parameter-to-distribution
  map.
* :func:`construct_counterexample` builds two distinct parameter sets with
  the same response distribution for Q-matrices that violate a structural
  condition, and :func:`verify_counterexample` checks such a pair.

The constructions all follow one pattern.  A violated condition leaves a
small set of key attributes that only a few item categories can see.
Profiles are grouped by their key attributes, the class proportions are
made proportional across the remaining attributes, and the distribution
then splits into a few low-order moment equations in the group shares and
the parameters of the revealing categories.  One parameter is moved by
``eps`` and the remaining square system is solved by damped Newton.

Available kinds:

``C1``
    GPDINA, some attribute has no unit item row.  Profiles ``0`` and
    ``e_k`` respond identically, so mass moves freely between them.
``C2``
    GPDINA, some attribute is required by at most two items.
``C3``
    GPDINA, two attributes are only separated by their unit items.  The two
    unit items are first projected onto a geometric ladder
    ``theta[l] = kappa**(l-1) * theta[1]`` (same total mass).
``S1_zero_guess``
    Sequential, some attribute has no unit first-category row.  With zero
    guessing on every first category, ``0`` and ``e_k`` never get past
    category 0.
``S2star``
    Sequential, some attribute is required by too few category rows or by a
    single item.
``S3star``
    Sequential, two attributes are only separated by the first categories of
    their unit items.
``NotId1`` / ``NotId2``
    Two fixed two-attribute designs which satisfy the necessary conditions
    but lose identifiability once one item has zero guessing on its first
    category.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Callable, Sequence, Union

import numpy as np

from . import gpdina, seqdina
from .conditions import check_gpdina, equal_column_pairs, extract_q1, identity_block, unit_rows
from .core import (
    ParameterError,
    PolydinaError,
    QKind,
    QMatrix,
    check_proportions,
    enumerate_profiles,
    prune_zero_categories,
)
from .gpdina import GpdinaParams
from .seqdina import SeqParams

Params = Union[GpdinaParams, SeqParams]

KINDS = ("C1", "C2", "C3", "S1_zero_guess", "S2star", "S3star", "NotId1", "NotId2")
GPDINA_KINDS = ("C1", "C2", "C3")
INTERIOR_MARGIN = 1e-3
RANK_RTOL = 1e-8
DIST_TOL = 1e-10
NEWTON_TOL = 1e-12


class ConstructionError(PolydinaError):
    """A counterexample could not be built for the given input."""


class ConvergenceError(ConstructionError):
    """Damped Newton did not reach the residual tolerance."""


# ---------------------------------------------------------------------------
# Distributions and distances
# ---------------------------------------------------------------------------


def distribution(q: QMatrix, params: Params, p: Sequence[float]) -> np.ndarray:
    """Full response distribution, dispatching on the Q-matrix layout."""
    if q.kind is QKind.GPDINA:
        return gpdina.full_distribution(q, params, p)
    return seqdina.full_distribution(q, params, p)


def distribution_distance(q: QMatrix, first: tuple[Params, Sequence[float]], second: tuple[Params, Sequence[float]]) -> float:
    """Largest absolute difference between two response distributions."""
    d1 = distribution(q, *first)
    d2 = distribution(q, *second)
    if d1.shape != d2.shape:
        raise PolydinaError(f"distribution shapes differ: {d1.shape} vs {d2.shape}")
    return float(np.max(np.abs(d1 - d2)))


def parameter_distance(first: tuple[Params, Sequence[float]], second: tuple[Params, Sequence[float]]) -> float:
    """L-infinity distance over item parameters and proportions."""
    (pa, a), (pb, b) = first, second
    if type(pa) is not type(pb) or pa.H != pb.H:
        raise PolydinaError("parameter sets have different shapes")
    return float(max(np.max(np.abs(pa.flat() - pb.flat())), np.max(np.abs(np.asarray(a) - np.asarray(b)))))


# ---------------------------------------------------------------------------
# Jacobian rank
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class RankReport:
    rank: int
    expected: int
    singular_values: np.ndarray
    threshold: float

    @property
    def deficiency(self) -> int:
        return self.expected - self.rank

    @property
    def verdict(self) -> str:
        return "LocallyIdentifiable" if self.rank == self.expected else "RankDeficient"

    def as_json(self) -> dict:
        return {
            "rank": self.rank,
            "expected": self.expected,
            "verdict": self.verdict,
            "threshold": self.threshold,
            "singular_values": self.singular_values.tolist(),
        }


def _params_type(q: QMatrix):
    return GpdinaParams if q.kind is QKind.GPDINA else SeqParams


def _check_interior(q: QMatrix, params: Params, p: np.ndarray, margin: float, allow_boundary: bool) -> None:
    lo, hi = margin, 1.0 - margin
    values = [params.flat(), p]
    if q.kind is QKind.GPDINA:
        values += [1.0 - t.sum(keepdims=True) for t in params.theta_plus + params.theta_minus]
    for v in values:
        outside = (v <= lo) | (v >= hi)
        if allow_boundary:
            # Exact zeros in the item parameters are the one boundary allowed.
            outside &= v != 0.0
        if np.any(outside):
            raise ParameterError(f"jacobian_rank needs interior parameters in ({lo}, {hi})")


def jacobian_rank(
    q: QMatrix,
    params: Params,
    p: Sequence[float],
    fd_step: float = 1e-6,
    *,
    allow_boundary: bool = False,
) -> RankReport:
    """Numerical rank of the map (item parameters, proportions) -> distribution.

    Proportions enter through the chart that drops the last coordinate.
    Columns are central differences with step ``fd_step``; singular values
    below ``1e-8 * max`` count as zero.

    With ``allow_boundary=True`` item parameters may sit exactly at 0 (for
    instance zero guessing).  Those columns use the one-sided second-order
    difference ``(-3 f(x) + 4 f(x + h) - f(x + 2h)) / 2h``, whose error is of
    the same order as the central difference.
    """
    pruned, record = prune_zero_categories(q)
    if record.removed:
        raise PolydinaError("jacobian_rank needs a Q-matrix without all-zero rows (prune it first)")
    p = check_proportions(p, q.K)
    params.validate(q)
    _check_interior(q, params, p, INTERIOR_MARGIN, allow_boundary)
    n_states = int(np.prod([h + 1 for h in q.H]))
    theta = params.flat()
    x0 = np.concatenate([theta, p[:-1]])
    expected = x0.size
    if n_states - 1 < expected:
        raise PolydinaError(
            f"degenerate design: {n_states - 1} free distribution entries cannot determine {expected} parameters"
        )
    cls = _params_type(q)
    n_theta = theta.size

    def forward(x: np.ndarray) -> np.ndarray:
        chart = x[n_theta:]
        probs = np.append(chart, 1.0 - chart.sum())
        return distribution(q, cls.from_flat(x[:n_theta], q.H), probs)

    jac = np.empty((n_states, expected))
    base = forward(x0) if allow_boundary else None
    for i in range(expected):
        step = np.zeros(expected)
        step[i] = fd_step
        if allow_boundary and x0[i] == 0.0:
            jac[:, i] = (-3 * base + 4 * forward(x0 + step) - forward(x0 + 2 * step)) / (2 * fd_step)
        else:
            jac[:, i] = (forward(x0 + step) - forward(x0 - step)) / (2 * fd_step)
    sv = np.linalg.svd(jac, compute_uv=False)
    threshold = RANK_RTOL * sv[0] if sv.size else 0.0
    return RankReport(int(np.sum(sv > threshold)), expected, sv, float(threshold))


# ---------------------------------------------------------------------------
# Damped Newton
# ---------------------------------------------------------------------------


def damped_newton(
    residual: Callable[[np.ndarray], np.ndarray],
    x0: Sequence[float],
    tol: float = NEWTON_TOL,
    max_iter: int = 200,
    fd_step: float = 1e-7,
) -> tuple[np.ndarray, float, int]:
    """Solve a square system ``residual(x) = 0`` by Newton with backtracking.

    The Jacobian uses central differences (exact up to rounding for the
    quadratic systems solved here).  Returns ``(x, max |residual|, iterations)``.
    """
    x = np.asarray(x0, dtype=float).copy()
    f = residual(x)
    if f.shape != x.shape:
        raise ValueError(f"system is not square: {f.size} equations, {x.size} unknowns")
    norm = float(np.max(np.abs(f)))
    for it in range(max_iter + 1):
        if norm < tol:
            return x, norm, it
        if it == max_iter:
            break
        jac = np.empty((f.size, x.size))
        for i in range(x.size):
            h = fd_step * max(1.0, abs(x[i]))
            e = np.zeros_like(x)
            e[i] = h
            jac[:, i] = (residual(x + e) - residual(x - e)) / (2 * h)
        try:
            step = np.linalg.solve(jac, -f)
        except np.linalg.LinAlgError as exc:
            raise ConvergenceError("singular Jacobian in Newton iteration") from exc
        t = 1.0
        for _ in range(40):
            trial = x + t * step
            f_trial = residual(trial)
            n_trial = float(np.max(np.abs(f_trial)))
            if np.isfinite(n_trial) and n_trial < norm:
                break
            t *= 0.5
        else:
            # No decrease in the sup norm; accept a full step anyway when we
            # are already at rounding level, otherwise give up.
            if norm < 1e3 * tol:
                return x, norm, it
            raise ConvergenceError(f"line search failed at residual {norm:.3e}")
        x, f, norm = trial, f_trial, n_trial
    raise ConvergenceError(f"no convergence within {max_iter} iterations (residual {norm:.3e})")


# ---------------------------------------------------------------------------
# Counterexample pairs
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CounterexamplePair:
    """Two parameter sets for the same Q-matrix with equal distributions."""

    q: QMatrix
    kind: str
    original: tuple[Params, np.ndarray]
    alternative: tuple[Params, np.ndarray]
    eps: float
    coefficients: dict = field(default_factory=dict)
    residual: float = 0.0

    @property
    def model(self) -> str:
        return self.q.kind.value

    def as_json(self) -> dict:
        def side(pair):
            params, p = pair
            return {**params.to_json(), "p": np.asarray(p).tolist()}

        return {
            "model": self.model,
            "kind": self.kind,
            "eps": self.eps,
            "original": side(self.original),
            "alternative": side(self.alternative),
            "coefficients": {k: _scalar(v) for k, v in self.coefficients.items()},
            "residual": self.residual,
        }


def _scalar(value):
    if isinstance(value, (bool, int, np.integer)):
        return int(value)
    return float(value)


@dataclass(frozen=True)
class VerificationReport:
    param_distance: float
    dist_distance: float
    valid: bool
    passed: bool

    def as_json(self) -> dict:
        return {
            "param_distance": self.param_distance,
            "dist_distance": self.dist_distance,
            "valid": self.valid,
            "pass": self.passed,
        }


def verify_counterexample(pair: CounterexamplePair, q: QMatrix | None = None) -> VerificationReport:
    """Check that the pair is valid, genuinely distinct and observationally equal."""
    q = pair.q if q is None else q
    valid = True
    for params, p in (pair.original, pair.alternative):
        try:
            params.validate(q)
            check_proportions(p, q.K)
        except ParameterError:
            valid = False
    d_param = parameter_distance(pair.original, pair.alternative)
    d_dist = distribution_distance(q, pair.original, pair.alternative)
    threshold = min(abs(pair.eps) / 2, 1e-4)
    passed = valid and d_dist <= DIST_TOL and d_param >= threshold
    return VerificationReport(d_param, d_dist, valid, passed)


# -- grouping helpers ---------------------------------------------------------


def _group_layout(K: int, keys: Sequence[int]) -> tuple[np.ndarray, np.ndarray, int]:
    """Group code (bits of the key attributes) and rest code for every profile."""
    profiles = enumerate_profiles(K).astype(np.int64)
    others = [k for k in range(K) if k not in keys]
    group = sum(profiles[:, k] << i for i, k in enumerate(keys))
    rest = sum((profiles[:, k] << i for i, k in enumerate(others)), np.zeros(profiles.shape[0], dtype=np.int64))
    return np.asarray(group), np.asarray(rest), 2 ** len(others)


def _proportional(p: np.ndarray, K: int, keys: Sequence[int], groups: Sequence[int]) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Make the listed groups proportional across the non-key attributes.

    Returns the projected proportions, the per-rest weights ``m`` (summing to
    one) and the group totals.  Group totals and the combined mass of the
    listed groups at every rest value are preserved.
    """
    group, rest, n_rest = _group_layout(K, keys)
    table = np.zeros((2 ** len(keys), n_rest))
    table[group, rest] = p
    sub = table[list(groups)]
    m = sub.sum(axis=0)
    totals = sub.sum(axis=1)
    table[list(groups)] = np.outer(totals / totals.sum(), m)
    return table[group, rest], m / m.sum(), totals


def _assemble(p_shape_K: int, keys: Sequence[int], base: np.ndarray, groups: Sequence[int], weights: np.ndarray, totals: np.ndarray) -> np.ndarray:
    group, rest, n_rest = _group_layout(p_shape_K, keys)
    table = np.zeros((2 ** len(keys), n_rest))
    table[group, rest] = base
    for g, t in zip(groups, totals):
        table[g] = t * weights
    return table[group, rest]


def _finish(q, kind, original, alternative, eps, coefficients, residual) -> CounterexamplePair:
    params, p = alternative
    try:
        params.validate(q)
        check_proportions(p, q.K)
    except ParameterError as exc:
        raise ConstructionError(
            f"{kind}: solved parameters violate the model constraints ({exc}); try a smaller eps or the opposite sign"
        ) from exc
    pair = CounterexamplePair(q, kind, original, (params, np.asarray(p)), float(eps), coefficients, float(residual))
    report = verify_counterexample(pair)
    if not report.passed:
        raise ConstructionError(
            f"{kind}: verification failed (distribution distance {report.dist_distance:.3e}, "
            f"parameter distance {report.param_distance:.3e})"
        )
    return pair


def _replace_item(arrays: tuple[np.ndarray, ...], j: int, values) -> tuple[np.ndarray, ...]:
    out = [np.array(a) for a in arrays]
    out[j] = np.asarray(values, dtype=float)
    return tuple(out)


def _set_entry(arrays: tuple[np.ndarray, ...], j: int, l: int, value: float) -> tuple[np.ndarray, ...]:
    out = [np.array(a) for a in arrays]
    out[j][l] = value
    return tuple(out)


# -- shared solvers -----------------------------------------------------------


def _solve_two_group(a_minus, a_plus, b_minus, b_plus, share, eps):
    """Two latent groups seen by two items ``a`` and ``b``.

    The group-1 share is ``share``; item ``a`` uses ``a_plus`` in group 1
    and ``a_minus`` in group 0, item ``b`` likewise.  Keeps ``a_plus`` and
    ``b_minus`` fixed, sets ``b_plus[0] += eps`` and solves for the new share,
    ``a_minus`` and the rest of ``b_plus`` so that the joint table of the two
    items is unchanged.  Vectors hold the probabilities of categories 1..H.
    """
    a_minus, a_plus, b_minus, b_plus = (np.asarray(v, dtype=float) for v in (a_minus, a_plus, b_minus, b_plus))
    Ha, Hb = a_minus.size, b_minus.size
    b1_new = b_plus[0] + eps

    def unpack(x):
        s_new = x[0]
        am = x[1 : 1 + Ha]
        bp = np.concatenate([[b1_new], x[1 + Ha :]])
        return s_new, am, bp

    def table(s, am, ap, bm, bp):
        a_rows = np.vstack([np.concatenate([[1 - am.sum()], am]), np.concatenate([[1 - ap.sum()], ap])])
        b_rows = np.vstack([np.concatenate([[1 - bm.sum()], bm]), np.concatenate([[1 - bp.sum()], bp])])
        return (1 - s) * np.outer(a_rows[0], b_rows[0]) + s * np.outer(a_rows[1], b_rows[1])

    target_a = (1 - share) * a_minus + share * a_plus
    target_b = (1 - share) * b_minus + share * b_plus
    target_cross = (1 - share) * a_minus[0] * b_minus[0] + share * a_plus[0] * b_plus[0]

    def residual(x):
        s, am, bp = unpack(x)
        ra = (1 - s) * am + s * a_plus - target_a
        rb = ((1 - s) * b_minus + s * bp - target_b)[1:]
        rc = (1 - s) * am[0] * b_minus[0] + s * a_plus[0] * bp[0] - target_cross
        return np.concatenate([ra, rb, [rc]])

    x0 = np.concatenate([[share], a_minus, b_plus[1:]])
    x, norm, _ = damped_newton(residual, x0)
    s_new, am_new, bp_new = unpack(x)
    full = np.max(np.abs(table(s_new, am_new, a_plus, b_minus, bp_new) - table(share, a_minus, a_plus, b_minus, b_plus)))
    return s_new, am_new, bp_new, max(norm, float(full))


def _solve_three_group(a_minus, a_plus, b_minus, b_plus, totals, eps):
    """Three latent groups ``00``, ``10``, ``01`` seen through two binary events.

    Event ``a`` has probability ``a_plus`` in group ``10`` and ``a_minus``
    otherwise; event ``b`` has ``b_plus`` in group ``01``.  Sets
    ``a_minus += eps`` and solves for the group totals and ``b_minus`` so
    that all four moments (mass, ``a``, ``b``, ``a and b``) are unchanged.
    """
    t00, t10, t01 = totals
    x_new = a_minus + eps

    def moments(t, am, bm):
        u, v, w = t
        return np.array(
            [
                u + v + w,
                am * (u + w) + a_plus * v,
                bm * (u + v) + b_plus * w,
                am * bm * u + a_plus * bm * v + am * b_plus * w,
            ]
        )

    target = moments(totals, a_minus, b_minus)

    def residual(x):
        return moments(x[:3], x_new, x[3]) - target

    x, norm, _ = damped_newton(residual, [t00, t10, t01, b_minus])
    return x[:3], x_new, x[3], norm


# -- constructions --------------------------------------------------------------


def _no_zero_rows(q: QMatrix) -> None:
    _, record = prune_zero_categories(q)
    if record.removed:
        raise ConstructionError("counterexample constructions need a Q-matrix without all-zero rows")


def _mass_swap(q, kind, params, p, eps, k):
    # eps > 0 moves mass from e_k to 0, eps < 0 the other way.
    e_k = 1 << k
    donor = e_k if eps > 0 else 0
    if eps == 0 or p[donor] <= abs(eps):
        raise ConstructionError(f"{kind}: need 0 < |eps| < {p[donor]:.4g}, the mass of the donor profile")
    p_new = p.copy()
    p_new[0] += eps
    p_new[e_k] -= eps
    return _finish(q, kind, (params, p), (params, p_new), eps, {"attribute": k + 1}, 0.0)


def _construct_c1(q, params, p, eps):
    report = check_gpdina(q)
    c1 = report.result("C1")
    if c1.holds:
        raise ConstructionError("C1: every attribute has a unit item row")
    return _mass_swap(q, "C1", params, p, eps, c1.attributes[0])


def _ladder(theta: np.ndarray, kappa: float) -> np.ndarray:
    H = theta.size
    shape = kappa ** np.arange(H)
    return theta.sum() * shape / shape.sum()


def _construct_c2(q, params, p, eps):
    Q = q.item_rows
    units = unit_rows(Q)
    counts = Q.sum(axis=0)
    short = [k for k in range(q.K) if counts[k] < 3 and units[k]]
    if not short:
        raise ConstructionError("C2: needs an attribute with a unit item row that fewer than three items require")
    k = short[0]
    users = [int(j) for j in np.flatnonzero(Q[:, k])]
    a = units[k][0]
    s_keys = [k]
    p_proj, weights, totals = _proportional(p, q.K, s_keys, [0, 1])
    share = totals[1] / totals.sum()
    tp, tm = params.theta_plus, params.theta_minus
    if len(users) == 1:
        # Only the unit item sees the attribute: a one-item mixture.
        a1_new = tm[a][0] + eps

        def residual(x):
            s, am = x[0], np.concatenate([[a1_new], x[1:]])
            return (1 - s) * am + s * tp[a] - ((1 - share) * tm[a] + share * tp[a])

        x, norm, _ = damped_newton(residual, np.concatenate([[share], tm[a][1:]]))
        s_new = x[0]
        am_new = np.concatenate([[a1_new], x[1:]])
        new_plus, new_minus = tp, _replace_item(tm, a, am_new)
        coeffs = {"attribute": k + 1, "item_a": a + 1}
    else:
        b = users[1] if users[0] == a else users[0]
        s_new, am_new, bp_new, norm = _solve_two_group(tm[a], tp[a], tm[b], tp[b], share, eps)
        new_plus = _replace_item(tp, b, bp_new)
        new_minus = _replace_item(tm, a, am_new)
        coeffs = {"attribute": k + 1, "item_a": a + 1, "item_b": b + 1}
    totals_new = np.array([1 - s_new, s_new]) * totals.sum()
    p_new = _assemble(q.K, s_keys, p_proj, [0, 1], weights, totals_new)
    coeffs.update(_two_group_coefficients(share, s_new))
    original = (params, p_proj)
    return _finish(q, "C2", original, (GpdinaParams(new_plus, new_minus), p_new), eps, coeffs, norm)


def _two_group_coefficients(share: float, share_new: float) -> dict:
    return {
        "rho": share_new / (1 - share_new),
        "u": (1 - share) / (1 - share_new),
        "v": share / (1 - share_new),
    }


def _three_group_coefficients(totals, totals_new) -> dict:
    t00 = totals[0]
    return {
        "rho1": totals[1] / t00,
        "rho2": totals[2] / t00,
        "u": totals_new[0] / t00,
        "v": totals_new[1] / t00,
        "w": totals_new[2] / t00,
    }


def _separated_pair(M_remaining: np.ndarray, block: list[int]) -> tuple[int, int]:
    pairs = equal_column_pairs(M_remaining)
    if not pairs:
        raise ConstructionError("no pair of attributes is left indistinguishable")
    return pairs[0]


def _three_group_split(p, K, keys):
    p_proj, weights, totals = _proportional(p, K, keys, [0, 1, 2])
    return p_proj, weights, totals


def _construct_c3(q, params, p, eps, kappa):
    Q = q.item_rows
    block = identity_block(Q)
    if block is None:
        raise ConstructionError("C3: needs a unit item row for every attribute (C1)")
    k1, k2 = _separated_pair(np.delete(Q, block, axis=0), block)
    a, b = block[k1], block[k2]
    tp = _replace_item(params.theta_plus, a, _ladder(params.theta_plus[a], kappa))
    tp = _replace_item(tp, b, _ladder(tp[b], kappa))
    tm = _replace_item(params.theta_minus, a, _ladder(params.theta_minus[a], kappa))
    tm = _replace_item(tm, b, _ladder(tm[b], kappa))
    projected = GpdinaParams(tp, tm)
    keys = [k1, k2]
    p_proj, weights, totals = _three_group_split(p, q.K, keys)
    shape_a = tp[a] / tp[a].sum()
    shape_b = tp[b] / tp[b].sum()
    # eps moves the first-category guessing probability of item a; on the
    # ladder that is a move of eps / shape_a[0] in its total mass.
    totals_new, am, bm, norm = _solve_three_group(
        tm[a].sum(), tp[a].sum(), tm[b].sum(), tp[b].sum(), totals, eps / shape_a[0]
    )
    new_minus = _replace_item(tm, a, am * shape_a)
    new_minus = _replace_item(new_minus, b, bm * shape_b)
    p_new = _assemble(q.K, keys, p_proj, [0, 1, 2], weights, totals_new)
    coeffs = {"attribute_1": k1 + 1, "attribute_2": k2 + 1, "item_a": a + 1, "item_b": b + 1, "kappa": kappa}
    coeffs.update(_three_group_coefficients(totals, totals_new))
    return _finish(q, "C3", (projected, p_proj), (GpdinaParams(tp, new_minus), p_new), eps, coeffs, norm)


def _construct_s1_zero_guess(q, params, p, eps):
    Q1 = extract_q1(q)
    missing = [k for k, rows in unit_rows(Q1).items() if not rows]
    if not missing:
        raise ConstructionError("S1_zero_guess: every attribute has a unit first-category row")
    minus = tuple(np.concatenate([[0.0], m[1:]]) for m in params.beta_minus)
    zeroed = SeqParams(params.beta_plus, minus)
    return _mass_swap(q, "S1_zero_guess", zeroed, p, eps, missing[0])


def _construct_s2star(q, params, p, eps):
    Q1 = extract_q1(q)
    if identity_block(Q1) is None:
        raise ConstructionError("S2star: needs a unit first-category row for every attribute (S1); use S1_zero_guess")
    rows = q.rows
    keys = q.category_keys
    units = unit_rows(Q1)
    for k in range(q.K):
        using = [keys[i] for i in np.flatnonzero(rows[:, k])]
        items = sorted({j for j, _ in using})
        if len(using) >= 3 and len(items) >= 2:
            continue
        a = units[k][0]
        if len(items) == 1:
            return _s2star_single_item(q, params, p, eps, k, a)
        (b, l_star), = [(j, l) for j, l in using if (j, l) != (a, 1)]
        return _s2star_two_items(q, params, p, eps, k, a, b, l_star)
    raise ConstructionError("S2star: every attribute is required by at least three category rows from two items")


def _s2star_single_item(q, params, p, eps, k, a):
    """Zero guessing on the unit category hides the attribute from everyone else."""
    minus = _set_entry(params.beta_minus, a, 0, 0.0)
    base = SeqParams(params.beta_plus, minus)
    b_old = params.beta_plus[a][0]
    b_new = b_old + eps
    group, rest, n_rest = _group_layout(q.K, [k])
    masters = group == 1

    def residual(x):
        out = np.empty_like(x)
        # Mass at every rest value and the pass mass of the masters are kept.
        total_new = np.zeros(n_rest)
        total_old = np.zeros(n_rest)
        np.add.at(total_new, rest, x)
        np.add.at(total_old, rest, p)
        out[~masters] = (total_new - total_old)[rest[~masters]]
        out[masters] = b_new * x[masters] - b_old * p[masters]
        return out

    p_new, norm, _ = damped_newton(residual, p)
    plus = _set_entry(params.beta_plus, a, 0, b_new)
    coeffs = {"attribute": k + 1, "item_a": a + 1, "scale": b_old / b_new}
    return _finish(q, "S2star", (base, p), (SeqParams(plus, minus), p_new), eps, coeffs, norm)


def _s2star_two_items(q, params, p, eps, k, a, b, l_star):
    keys = [k]
    p_proj, weights, totals = _proportional(p, q.K, keys, [0, 1])
    share = totals[1] / totals.sum()
    bp, bm = params.beta_plus, params.beta_minus
    s_new, am_new, bp_new, norm = _solve_two_group(
        [bm[a][0]], [bp[a][0]], [bm[b][l_star - 1]], [bp[b][l_star - 1]], share, eps
    )
    new_minus = _set_entry(bm, a, 0, am_new[0])
    new_plus = _set_entry(bp, b, l_star - 1, bp_new[0])
    p_new = _assemble(q.K, keys, p_proj, [0, 1], weights, np.array([1 - s_new, s_new]) * totals.sum())
    coeffs = {"attribute": k + 1, "item_a": a + 1, "item_b": b + 1, "category_b": l_star}
    coeffs.update(_two_group_coefficients(share, s_new))
    return _finish(q, "S2star", (params, p_proj), (SeqParams(new_plus, new_minus), p_new), eps, coeffs, norm)


def _three_group_seq(q, kind, params, p, eps, k1, k2, a, b, coeffs):
    keys = [k1, k2]
    p_proj, weights, totals = _three_group_split(p, q.K, keys)
    bp, bm = params.beta_plus, params.beta_minus
    totals_new, am, bm_new, norm = _solve_three_group(bm[a][0], bp[a][0], bm[b][0], bp[b][0], totals, eps)
    new_minus = _set_entry(bm, a, 0, am)
    new_minus = _set_entry(new_minus, b, 0, bm_new)
    p_new = _assemble(q.K, keys, p_proj, [0, 1, 2], weights, totals_new)
    coeffs = {**coeffs, "attribute_1": k1 + 1, "attribute_2": k2 + 1, "item_a": a + 1, "item_b": b + 1}
    coeffs.update(_three_group_coefficients(totals, totals_new))
    return _finish(q, kind, (params, p_proj), (SeqParams(bp, new_minus), p_new), eps, coeffs, norm)


def _construct_s3star(q, params, p, eps):
    Q1 = extract_q1(q)
    block = identity_block(Q1)
    if block is None:
        raise ConstructionError("S3star: needs a unit first-category row for every attribute (S1)")
    drop = {(j, 1) for j in block}
    keep = [i for i, key in enumerate(q.category_keys) if key not in drop]
    k1, k2 = _separated_pair(q.rows[keep], block)
    return _three_group_seq(q, "S3star", params, p, eps, k1, k2, block[k1], block[k2], {})


def _match_design(q: QMatrix, design: Sequence[Sequence[Sequence[int]]]) -> list[int] | None:
    """Find an item order under which ``q`` equals ``design`` exactly."""
    if q.K != 2 or q.J != len(design):
        return None
    target = [np.asarray(d) for d in design]
    for order in itertools.permutations(range(q.J)):
        if all(q.items[j].shape == t.shape and np.array_equal(q.items[j], t) for j, t in zip(order, target)):
            return list(order)
    return None


# Both designs use two attributes.  In the first, the second attribute is
# measured twice and the first attribute only by a unit item and by a
# two-category item whose first category needs both attributes.  In the
# second, each attribute has one unit item and two further items need both.
NOTID1_DESIGN = ([[1, 0]], [[0, 1]], [[0, 1]], [[1, 1], [1, 0]])
NOTID2_DESIGN = ([[1, 0]], [[0, 1]], [[1, 1], [1, 0]], [[1, 1]])


def _construct_notid1(q, params, p, eps):
    order = _match_design(q, NOTID1_DESIGN)
    if order is None:
        raise ConstructionError(f"NotId1 needs the design {NOTID1_DESIGN} (items in any order)")
    i1, i2, _, i4 = order
    bp, bm = params.beta_plus, params.beta_minus
    # Zero guessing on the first category of the gate item; its second
    # category is then only reachable by full masters, so the guess there is
    # immaterial and set to 0.
    bm = _replace_item(bm, i4, [0.0, 0.0])
    base = SeqParams(bp, bm)
    a_plus, a_minus = bp[i1][0], bm[i1][0]
    c_plus, c_minus = bp[i2][0], bm[i2][0]
    g_plus = bp[i4][0]
    p00, p10, p01, p11 = p
    p11_new = p11 + eps

    def residual(x):
        q00, q10, q01, am, gp = x
        return np.array(
            [
                q00 + q10 + q01 + p11_new - 1.0,
                q01 + p11_new - (p01 + p11),
                am * (q00 + q01) + a_plus * (q10 + p11_new) - (a_minus * (p00 + p01) + a_plus * (p10 + p11)),
                am * c_minus * q00 + a_plus * c_minus * q10 + am * c_plus * q01 + a_plus * c_plus * p11_new
                - (a_minus * c_minus * p00 + a_plus * c_minus * p10 + a_minus * c_plus * p01 + a_plus * c_plus * p11),
                gp * p11_new - g_plus * p11,
            ]
        )

    x, norm, _ = damped_newton(residual, [p00, p10, p01, a_minus, g_plus])
    q00, q10, q01, am, gp = x
    new_minus = _set_entry(bm, i1, 0, am)
    new_plus = _set_entry(bp, i4, 0, gp)
    p_new = np.array([q00, q10, q01, p11_new])
    coeffs = {"item_a": i1 + 1, "gate_item": i4 + 1}
    return _finish(q, "NotId1", (base, np.asarray(p, dtype=float)), (SeqParams(new_plus, new_minus), p_new), eps, coeffs, norm)


def _construct_notid2(q, params, p, eps):
    order = _match_design(q, NOTID2_DESIGN)
    if order is None:
        raise ConstructionError(f"NotId2 needs the design {NOTID2_DESIGN} (items in any order)")
    i1, i2, i3, _ = order
    base = SeqParams(params.beta_plus, _set_entry(params.beta_minus, i3, 0, 0.0))
    return _three_group_seq(q, "NotId2", base, np.asarray(p, dtype=float), eps, 0, 1, i1, i2, {})


def construct_counterexample(
    q: QMatrix,
    kind: str,
    params: Params,
    p: Sequence[float],
    eps: float = 0.01,
    kappa: float = 0.5,
) -> CounterexamplePair:
    """Build two parameter sets with the same response distribution.

    ``params`` and ``p`` are a starting point; each construction first
    projects them onto the structure it needs (zero guessing on specific
    categories, proportional class shares, a geometric ladder) and reports
    the projected set as ``pair.original``.
    """
    if kind not in KINDS:
        raise PolydinaError(f"unknown construction kind {kind!r}; choose from {', '.join(KINDS)}")
    wants_gpdina = kind in GPDINA_KINDS
    if wants_gpdina != (q.kind is QKind.GPDINA):
        model = "gpdina" if wants_gpdina else "seq"
        raise ConstructionError(f"{kind} applies to {model} Q-matrices")
    _no_zero_rows(q)
    params.validate(q)
    p = check_proportions(p, q.K).copy()
    if not 0 < kappa < 1:
        raise ConstructionError("kappa must lie in (0, 1)")
    if kind == "C1":
        return _construct_c1(q, params, p, eps)
    if kind == "C2":
        return _construct_c2(q, params, p, eps)
    if kind == "C3":
        return _construct_c3(q, params, p, eps, kappa)
    if kind == "S1_zero_guess":
        return _construct_s1_zero_guess(q, params, p, eps)
    if kind == "S2star":
        return _construct_s2star(q, params, p, eps)
    if kind == "S3star":
        return _construct_s3star(q, params, p, eps)
    if kind == "NotId1":
        return _construct_notid1(q, params, p, eps)
    return _construct_notid2(q, params, p, eps)


def matching_kind(q: QMatrix) -> str | None:
    """The construction kind that applies to a Q-matrix found not identifiable."""
    from .conditions import check_gpdina, seq_verdict

    if q.kind is QKind.GPDINA:
        report = check_gpdina(q)
        for cid in ("C1", "C2", "C3"):
            if not report.holds(cid):
                return cid
        return None
    report = seq_verdict(q)
    if not report.holds("S1"):
        return "S1_zero_guess"
    if not report.holds("S2star"):
        return "S2star"
    if not report.holds("S3star"):
        return "S3star"
    return None
