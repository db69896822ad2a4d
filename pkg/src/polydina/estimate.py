"""Marginal maximum likelihood by EM for both response models.

Respondents are first collapsed onto their unique response patterns, so one
EM iteration costs ``O(#patterns * 2**K * J)`` regardless of the sample size.
The E-step works in log space.  M-steps:

* GPDINA: category frequencies among the posterior mass of masters
  (``theta_plus``) and of non-masters (``theta_minus``).
* Sequential: for every category, the posterior mass that passed it divided
  by the mass that reached the previous category, split the same way.

Zero guessing probabilities make the sequential likelihood non-smooth, so
the sequential EM stays in the interior: every probability is clamped to
``[1e-10, 1 - 1e-10]``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence, Union

import numpy as np

from . import gpdina, seqdina
from .core import PolydinaError, QKind, QMatrix, check_proportions, enumerate_profiles, ideal_matrix
from .gpdina import GpdinaParams
from .seqdina import SeqParams

Params = Union[GpdinaParams, SeqParams]

CLAMP = 1e-10
# A cell whose weighted denominator is below this share of the total weight
# is treated as empty.  Class proportions are clamped at CLAMP rather than
# zero, so exactly empty denominators are rare once EM has started.
EMPTY_SHARE = 1e-9


@dataclass(frozen=True)
class FitResult:
    params: Params
    p: np.ndarray
    loglik_trace: tuple[float, ...]
    iterations: int
    converged: bool
    loglik: float
    flagged: tuple[tuple[int, int, str], ...] = ()

    def as_json(self) -> dict:
        return {
            **self.params.to_json(),
            "p": self.p.tolist(),
            "loglik": self.loglik,
            "loglik_trace": list(self.loglik_trace),
            "iterations": self.iterations,
            "converged": self.converged,
            "flagged": [{"item": j + 1, "category": l, "side": side} for j, l, side in self.flagged],
        }


def _aggregate(q: QMatrix, data, weights=None) -> tuple[np.ndarray, np.ndarray]:
    data = np.asarray(data)
    if data.ndim != 2 or data.shape[0] == 0:
        raise PolydinaError("data must be a non-empty respondents x items table")
    if data.shape[1] != q.J:
        raise PolydinaError(f"data has {data.shape[1]} columns for {q.J} items")
    if not np.issubdtype(data.dtype, np.integer):
        if not np.all(np.equal(np.mod(data, 1), 0)):
            raise PolydinaError("responses must be integers")
        data = data.astype(np.int64)
    upper = np.asarray(q.H)
    bad = np.flatnonzero(np.any((data < 0) | (data > upper), axis=1))
    if bad.size:
        i = int(bad[0])
        raise PolydinaError(f"row {i + 1}: response {data[i].tolist()} outside the category range {upper.tolist()}")
    w = np.ones(data.shape[0]) if weights is None else np.asarray(weights, dtype=float)
    if w.shape != (data.shape[0],) or np.any(w < 0):
        raise PolydinaError("weights must be one non-negative number per row")
    patterns, inverse = np.unique(data, axis=0, return_inverse=True)
    counts = np.bincount(inverse.reshape(-1), weights=w, minlength=patterns.shape[0])
    return patterns, counts


def _pmf_tables(q: QMatrix, params: Params) -> list[np.ndarray]:
    if q.kind is QKind.GPDINA:
        return gpdina.item_tables(q, params)
    return seqdina.pmf_tables(q, params)


def _log_joint(q: QMatrix, params: Params, p: np.ndarray, patterns: np.ndarray) -> np.ndarray:
    """``log p_alpha + sum_j log P(r_j | alpha)`` for every pattern and profile."""
    with np.errstate(divide="ignore"):
        out = np.broadcast_to(np.log(p), (patterns.shape[0], p.size)).copy()
        for j, table in enumerate(_pmf_tables(q, params)):
            out += np.log(table)[patterns[:, j]]
    return out


def _logsumexp(a: np.ndarray) -> np.ndarray:
    top = np.max(a, axis=1, keepdims=True)
    finite = np.isfinite(top)
    shift = np.where(finite, top, 0.0)
    with np.errstate(divide="ignore"):
        return (shift + np.log(np.exp(a - shift).sum(axis=1, keepdims=True)))[:, 0]


def log_likelihood(q: QMatrix, params: Params, p: Sequence[float], data, weights=None) -> float:
    """``sum_i log sum_alpha p_alpha prod_j P(r_ij | alpha)``.

    Returns ``-inf`` when some observed pattern has probability zero; use
    :func:`zero_probability_rows` to find the offending rows.
    """
    p = check_proportions(p, q.K, strict=False)
    params.validate(q, ordered=False)
    patterns, counts = _aggregate(q, data, weights)
    per_pattern = _logsumexp(_log_joint(q, params, p, patterns))
    if np.any(np.isneginf(per_pattern) & (counts > 0)):
        return float("-inf")
    return float(np.dot(counts, per_pattern))


def zero_probability_rows(q: QMatrix, params: Params, p: Sequence[float], data) -> list[int]:
    """0-based indices of respondents whose pattern has probability zero."""
    p = check_proportions(p, q.K, strict=False)
    data = np.asarray(data)
    _aggregate(q, data)
    per_row = _logsumexp(_log_joint(q, params, p, data.astype(np.int64)))
    return [int(i) for i in np.flatnonzero(np.isneginf(per_row))]


# ---------------------------------------------------------------------------
# M-steps
# ---------------------------------------------------------------------------


def _clamp(x: np.ndarray) -> np.ndarray:
    return np.clip(x, CLAMP, 1 - CLAMP)


def _m_step_gpdina(q, patterns, post, init: GpdinaParams, flagged):
    xi = ideal_matrix(q.item_rows, enumerate_profiles(q.K))
    plus, minus = [], []
    for j in range(q.J):
        H = q.H[j]
        onehot = patterns[:, j][:, None] == np.arange(H + 1)[None, :]
        sides = []
        for side, mask, old in (("plus", xi[j], init.theta_plus[j]), ("minus", ~xi[j], init.theta_minus[j])):
            mass = post[:, mask].sum(axis=1)
            freq = mass @ onehot
            total = freq.sum()
            if total <= EMPTY_SHARE * post.sum():
                flagged.update((j, l, side) for l in range(1, H + 1))
                sides.append(np.array(old))
                continue
            full = np.clip(freq / total, CLAMP, None)
            full /= full.sum()
            sides.append(np.minimum(full[1:], 1 - CLAMP))
        plus.append(sides[0])
        minus.append(sides[1])
    return GpdinaParams(tuple(plus), tuple(minus))


def _m_step_seq(q, patterns, post, init: SeqParams, flagged):
    profiles = enumerate_profiles(q.K)
    plus, minus = [], []
    for j, block in enumerate(q.items):
        xi = ideal_matrix(block, profiles)
        bp = np.array(init.beta_plus[j])
        bm = np.array(init.beta_minus[j])
        r = patterns[:, j]
        for l in range(1, block.shape[0] + 1):
            passed = (r >= l).astype(float)
            reached = (r >= l - 1).astype(float)
            for side, mask, target in (("plus", xi[l - 1], bp), ("minus", ~xi[l - 1], bm)):
                mass = post[:, mask].sum(axis=1)
                denom = mass @ reached
                if denom <= EMPTY_SHARE * post.sum():
                    flagged.add((j, l, side))
                    continue
                target[l - 1] = (mass @ passed) / denom
        plus.append(_clamp(bp))
        minus.append(_clamp(bm))
    return SeqParams(tuple(plus), tuple(minus))


def _fix_labels(params: Params) -> Params:
    """Restore ``minus < plus`` after fitting by swapping the offending components.

    Sequential parameters are swapped per category.  :func:`em_fit` keeps the
    swap only when it does not lower the likelihood.  GPDINA category masses
    are tied by the sum-to-one constraint, so whole item vectors are swapped
    when the non-master side carries more total mass.
    """
    if isinstance(params, SeqParams):
        plus = tuple(np.maximum(a, b) for a, b in zip(params.beta_plus, params.beta_minus))
        minus = tuple(np.minimum(a, b) for a, b in zip(params.beta_plus, params.beta_minus))
        return SeqParams(plus, minus)
    plus, minus = [], []
    for a, b in zip(params.theta_plus, params.theta_minus):
        if b.sum() > a.sum():
            a, b = b, a
        plus.append(a)
        minus.append(b)
    return GpdinaParams(tuple(plus), tuple(minus))


def em_fit(
    q: QMatrix,
    data,
    init: tuple[Params, Sequence[float]],
    max_iter: int = 500,
    tol: float = 1e-8,
    weights=None,
) -> FitResult:
    """Fit item parameters and class proportions by EM.

    ``init`` is ``(params, p)``.  Iteration stops once the log-likelihood
    gain drops below ``tol``.  ``weights`` optionally gives a (possibly
    fractional) count per data row.  Cells whose weighted denominator is
    zero keep their initial value and are listed in ``flagged``; so are
    cells left with ``minus >= plus`` when swapping them would lower the
    likelihood.
    """
    params, p = init
    params.validate(q, ordered=False)
    p = check_proportions(p, q.K, strict=False)
    patterns, counts = _aggregate(q, data, weights)
    n = counts.sum()
    m_step = _m_step_gpdina if q.kind is QKind.GPDINA else _m_step_seq
    flagged: set = set()
    trace: list[float] = []
    converged = False
    it = 0
    while True:
        log_joint = _log_joint(q, params, p, patterns)
        per_pattern = _logsumexp(log_joint)
        loglik = float(np.dot(counts, per_pattern))
        trace.append(loglik)
        if len(trace) > 1 and trace[-1] - trace[-2] < tol:
            converged = True
            break
        if it == max_iter:
            break
        post = np.exp(log_joint - per_pattern[:, None]) * counts[:, None]
        p = np.clip(post.sum(axis=0) / n, CLAMP, None)
        p /= p.sum()
        params = m_step(q, patterns, post, params, flagged)
        it += 1
    final = loglik
    fixed = _fix_labels(params)
    fixed_loglik = log_likelihood(q, fixed, p, patterns, counts)
    if fixed_loglik >= loglik - 1e-9 * n:
        params, final = fixed, fixed_loglik
    else:
        # Swapping would cost likelihood, so the violation is not a label
        # switch (typically a weakly determined cell); keep it and flag it.
        for j, l in _order_violations(params):
            flagged.add((j, l, "order"))
    return FitResult(params, p, tuple(trace), it, converged, final, tuple(sorted(flagged)))


def _order_violations(params: Params) -> list[tuple[int, int]]:
    if isinstance(params, SeqParams):
        pairs = zip(params.beta_plus, params.beta_minus)
    else:
        pairs = zip(params.theta_plus, params.theta_minus)
    return [(j, int(l) + 1) for j, (a, b) in enumerate(pairs) for l in np.flatnonzero(b >= a)]


def random_init(q: QMatrix, rng: np.random.Generator, margin: float = 0.1) -> tuple[Params, np.ndarray]:
    """Interior starting values for EM."""
    module = gpdina if q.kind is QKind.GPDINA else seqdina
    return module.random_params(q, rng, margin), rng.dirichlet(np.ones(2**q.K))


# ---------------------------------------------------------------------------
# Multi-start probe
# ---------------------------------------------------------------------------


@dataclass
class Cluster:
    loglik: float
    params: Params
    p: np.ndarray
    members: list[int] = field(default_factory=list)

    def as_json(self) -> dict:
        return {**self.params.to_json(), "p": self.p.tolist(), "loglik": self.loglik, "members": self.members}


@dataclass(frozen=True)
class ProbeResult:
    n: float
    clusters: tuple[Cluster, ...]
    loglik_tol: float
    param_tol: float

    @property
    def top_clusters(self) -> tuple[Cluster, ...]:
        """Clusters whose log-likelihood is within tolerance of the best one."""
        best = self.clusters[0].loglik
        return tuple(c for c in self.clusters if best - c.loglik <= self.loglik_tol * self.n)

    def as_json(self) -> dict:
        return {
            "n": self.n,
            "n_clusters": len(self.clusters),
            "n_top_clusters": len(self.top_clusters),
            "clusters": [c.as_json() for c in self.clusters],
        }


def _flat(params: Params, p: np.ndarray) -> np.ndarray:
    return np.concatenate([params.flat(), p])


def nonidentifiability_probe(
    q: QMatrix,
    data,
    n_starts: int = 10,
    seed: int | None = 0,
    max_iter: int = 500,
    tol: float = 1e-8,
    loglik_tol: float = 1e-4,
    param_tol: float = 1e-2,
) -> ProbeResult:
    """Fit from several random starts and group the end points.

    Two fits share a cluster when their log-likelihoods differ by at most
    ``loglik_tol * n`` and their parameters by at most ``param_tol`` in
    L-infinity.  Several clusters at the top log-likelihood point to a flat
    likelihood ridge.
    """
    if n_starts < 1:
        raise PolydinaError("n_starts must be at least 1")
    rng = np.random.default_rng(seed)
    patterns, counts = _aggregate(q, data)
    n = float(counts.sum())
    fits = []
    for _ in range(n_starts):
        fit = em_fit(q, patterns, random_init(q, rng), max_iter=max_iter, tol=tol, weights=counts)
        fits.append(fit)
    order = sorted(range(n_starts), key=lambda i: -fits[i].loglik)
    clusters: list[Cluster] = []
    for i in order:
        fit = fits[i]
        x = _flat(fit.params, fit.p)
        for c in clusters:
            close_ll = abs(c.loglik - fit.loglik) <= loglik_tol * n
            if close_ll and np.max(np.abs(_flat(c.params, c.p) - x)) <= param_tol:
                c.members.append(i)
                break
        else:
            clusters.append(Cluster(fit.loglik, fit.params, fit.p, [i]))
    return ProbeResult(n, tuple(clusters), loglik_tol, param_tol)
