import numpy as np
import pytest
from hypothesis import HealthCheck, given, settings
from hypothesis import strategies as st

from polydina import datasets, gpdina, seqdina
from polydina.conditions import Verdict, check
from polydina.core import ParameterError, PolydinaError, QMatrix, random_proportions
from polydina.gpdina import GpdinaParams
from polydina.identnum import (
    KINDS,
    ConstructionError,
    ConvergenceError,
    CounterexamplePair,
    construct_counterexample,
    damped_newton,
    distribution_distance,
    jacobian_rank,
    matching_kind,
    parameter_distance,
    verify_counterexample,
)
from polydina.seqdina import SeqParams

from designs import (
    GPD_FEW_ITEMS,
    GPD_IDENTIFIABLE,
    GPD_INCOMPLETE,
    GPD_TWO_ITEMS_FOR_FIRST,
    GPD_UNSEPARATED,
    SEQ_ONE_GATE,
    SEQ_SECOND_CATEGORY_COVER,
    SEQ_SECOND_CATEGORY_SEPARATES,
    SEQ_TWO_GATES,
)

# Sequential designs that break the necessary conditions in specific ways.
SEQ_SHORT_SINGLE_ITEM = QMatrix.sequential([[[1, 0], [1, 1]], [[0, 1]], [[0, 1]], [[0, 1]]])
SEQ_SHORT_TWO_ITEMS = QMatrix.sequential([[[1, 0]], [[0, 1], [1, 1]], [[0, 1]], [[0, 1]]])
SEQ_TWO_ITEMS_TWO_CATEGORIES = QMatrix.sequential([[[1, 0], [0, 1]], [[0, 1], [1, 1]]])
SEQ_UNSEPARATED = QMatrix.sequential([[[1, 0]], [[0, 1]], [[1, 1], [1, 1]], [[1, 1]], [[1, 1]]])

CASES = [
    ("C1", GPD_INCOMPLETE),
    ("C2", GPD_FEW_ITEMS),
    ("C2", GPD_TWO_ITEMS_FOR_FIRST),
    ("C3", GPD_UNSEPARATED),
    ("S2star", SEQ_SHORT_SINGLE_ITEM),
    ("S2star", SEQ_SHORT_TWO_ITEMS),
    ("S2star", SEQ_TWO_ITEMS_TWO_CATEGORIES),
    ("S3star", SEQ_UNSEPARATED),
    ("NotId1", SEQ_ONE_GATE),
    ("NotId2", SEQ_TWO_GATES),
]
CASE_IDS = [
    "incomplete",
    "few-items",
    "two-items-for-first",
    "unseparated",
    "short-single-item",
    "short-two-items",
    "two-items-two-categories",
    "seq-unseparated",
    "one-gate",
    "two-gates",
]


def _module(q):
    return gpdina if q.kind.value == "gpdina" else seqdina


def start(q, seed=0):
    rng = np.random.default_rng(seed)
    return _module(q).random_params(q, rng), random_proportions(q.K, rng)


class TestDistances:
    def test_identical(self):
        params, p = start(GPD_IDENTIFIABLE)
        assert distribution_distance(GPD_IDENTIFIABLE, (params, p), (params, p)) == 0.0
        assert parameter_distance((params, p), (params, p)) == 0.0

    def test_perturbed_item_is_visible(self):
        params, p = start(GPD_IDENTIFIABLE)
        plus = [t.copy() for t in params.theta_plus]
        plus[0][0] -= 0.1
        other = GpdinaParams(tuple(plus), params.theta_minus)
        assert distribution_distance(GPD_IDENTIFIABLE, (params, p), (other, p)) > 1e-4
        assert parameter_distance((params, p), (other, p)) == pytest.approx(0.1)

    def test_shape_mismatch(self):
        params, p = start(GPD_IDENTIFIABLE)
        seq_params, seq_p = start(SEQ_ONE_GATE)
        with pytest.raises(PolydinaError):
            parameter_distance((params, p), (seq_params, seq_p))


class TestDampedNewton:
    def test_square_root(self):
        x, norm, iterations = damped_newton(lambda x: np.array([x[0] ** 2 - 2.0]), np.array([1.0]))
        assert x[0] == pytest.approx(np.sqrt(2), abs=1e-12)
        assert norm < 1e-12
        assert iterations < 20

    def test_coupled_system(self):
        def residual(x):
            return np.array([x[0] + x[1] - 3.0, x[0] * x[1] - 2.0])

        x, norm, _ = damped_newton(residual, np.array([0.5, 2.5]))
        np.testing.assert_allclose(sorted(x), [1.0, 2.0], atol=1e-10)

    def test_no_root(self):
        with pytest.raises(ConvergenceError):
            damped_newton(lambda x: np.array([x[0] ** 2 + 1.0]), np.array([0.3]), max_iter=30)


class TestJacobianRank:
    @pytest.mark.parametrize("seed", range(3))
    def test_identifiable_gpdina_full_rank(self, seed):
        report = jacobian_rank(GPD_IDENTIFIABLE, *start(GPD_IDENTIFIABLE, seed))
        assert report.verdict == "LocallyIdentifiable"
        assert report.rank == report.expected == 2 * sum(GPD_IDENTIFIABLE.H) + 3

    @pytest.mark.parametrize("q", [GPD_FEW_ITEMS, GPD_TWO_ITEMS_FOR_FIRST, GPD_UNSEPARATED, GPD_INCOMPLETE])
    @pytest.mark.parametrize("seed", range(3))
    def test_violating_gpdina_deficient(self, q, seed):
        report = jacobian_rank(q, *start(q, seed))
        assert report.deficiency >= 1

    @pytest.mark.parametrize("q", [SEQ_SECOND_CATEGORY_COVER, SEQ_SECOND_CATEGORY_SEPARATES])
    @pytest.mark.parametrize("seed", range(3))
    def test_undetermined_designs_full_rank(self, q, seed):
        assert jacobian_rank(q, *start(q, seed)).verdict == "LocallyIdentifiable"

    def test_boundary_rejected(self):
        params, p = start(SEQ_ONE_GATE)
        minus = [m.copy() for m in params.beta_minus]
        minus[3][0] = 0.0
        boundary = SeqParams(params.beta_plus, tuple(minus))
        with pytest.raises(ParameterError):
            jacobian_rank(SEQ_ONE_GATE, boundary, p)
        assert jacobian_rank(SEQ_ONE_GATE, boundary, p, allow_boundary=True).rank > 0

    def test_degenerate_design(self):
        q = QMatrix.gpdina([[1, 0], [0, 1]], H=[1, 1])
        with pytest.raises(PolydinaError, match="degenerate"):
            jacobian_rank(q, *start(q))

    def test_rank_bounded(self):
        report = jacobian_rank(GPD_FEW_ITEMS, *start(GPD_FEW_ITEMS))
        assert report.rank <= min(report.expected, report.singular_values.size)
        assert report.as_json()["verdict"] == "RankDeficient"


class TestConstruction:
    @pytest.mark.parametrize("kind, q", CASES, ids=CASE_IDS)
    @pytest.mark.parametrize("eps", [0.01, -0.01])
    def test_pairs_verify(self, kind, q, eps):
        pair = construct_counterexample(q, kind, *start(q), eps=eps)
        report = verify_counterexample(pair)
        assert report.passed, report
        assert report.dist_distance <= 1e-10
        assert report.param_distance >= abs(eps) / 2
        assert pair.residual < 1e-12

    def test_zero_guess_on_mathematics_design(self):
        q = datasets.timss2007()
        params, _ = start(q)
        pair = construct_counterexample(q, "S1_zero_guess", params, np.full(2**q.K, 2.0**-q.K), eps=0.002)
        report = verify_counterexample(pair)
        assert report.passed
        assert report.dist_distance < 1e-15
        assert all(m[0] == 0.0 for m in pair.original[0].beta_minus)

    def test_mass_swap_sign(self):
        params, p = start(GPD_INCOMPLETE)
        forward = construct_counterexample(GPD_INCOMPLETE, "C1", params, p, eps=0.02)
        backward = construct_counterexample(GPD_INCOMPLETE, "C1", params, p, eps=-0.02)
        assert forward.alternative[1][0] == pytest.approx(p[0] + 0.02)
        assert backward.alternative[1][0] == pytest.approx(p[0] - 0.02)

    def test_ladder_projection(self):
        pair = construct_counterexample(GPD_UNSEPARATED, "C3", *start(GPD_UNSEPARATED), kappa=0.5)
        a = pair.coefficients["item_a"] - 1
        theta = pair.original[0].theta_plus[a]
        np.testing.assert_allclose(theta[1:] / theta[:-1], 0.5)
        assert set(pair.coefficients) >= {"rho1", "rho2", "u", "v", "w", "kappa"}

    def test_two_group_coefficients(self):
        pair = construct_counterexample(GPD_TWO_ITEMS_FOR_FIRST, "C2", *start(GPD_TWO_ITEMS_FOR_FIRST))
        c = pair.coefficients
        # Old group shares rescaled by the new non-master share sum to 1 + rho.
        assert c["u"] + c["v"] == pytest.approx(1 + c["rho"], abs=1e-12)
        assert isinstance(pair.as_json()["coefficients"]["item_a"], int)

    @pytest.mark.parametrize(
        "kind, q, message",
        [
            ("C1", GPD_IDENTIFIABLE, "C1"),
            ("C2", GPD_IDENTIFIABLE, "C2"),
            ("S1_zero_guess", SEQ_ONE_GATE, "S1_zero_guess"),
            ("NotId1", SEQ_TWO_GATES, "NotId1"),
            ("C2", SEQ_ONE_GATE, "gpdina"),
        ],
    )
    def test_wrong_design(self, kind, q, message):
        with pytest.raises(ConstructionError, match=message):
            construct_counterexample(q, kind, *start(q))

    def test_unknown_kind(self):
        with pytest.raises(PolydinaError, match="unknown"):
            construct_counterexample(GPD_FEW_ITEMS, "C9", *start(GPD_FEW_ITEMS))

    def test_eps_too_large(self):
        with pytest.raises(ConstructionError):
            construct_counterexample(GPD_INCOMPLETE, "C1", *start(GPD_INCOMPLETE), eps=0.9)

    def test_items_in_any_order(self):
        order = [3, 1, 0, 2]
        q = SEQ_ONE_GATE.permuted(order, [0, 1])
        assert verify_counterexample(construct_counterexample(q, "NotId1", *start(q), eps=0.01)).passed


class TestVerification:
    def test_identical_sets_fail(self):
        params, p = start(GPD_FEW_ITEMS)
        pair = CounterexamplePair(GPD_FEW_ITEMS, "C2", (params, p), (params, p), 0.01)
        report = verify_counterexample(pair)
        assert report.param_distance == 0.0
        assert not report.passed

    def test_nudged_alternative_fails(self):
        pair = construct_counterexample(GPD_FEW_ITEMS, "C2", *start(GPD_FEW_ITEMS))
        params, p = pair.alternative
        plus = [t.copy() for t in params.theta_plus]
        plus[0][0] += 1e-3
        nudged = CounterexamplePair(pair.q, pair.kind, pair.original, (GpdinaParams(tuple(plus), params.theta_minus), p), pair.eps)
        report = verify_counterexample(nudged)
        assert report.dist_distance > 1e-10
        assert not report.passed

    def test_json(self):
        pair = construct_counterexample(SEQ_ONE_GATE, "NotId1", *start(SEQ_ONE_GATE))
        doc = pair.as_json()
        assert doc["model"] == "seq"
        assert set(doc["original"]) == {"model", "beta_plus", "beta_minus", "p"}
        assert verify_counterexample(pair).as_json()["pass"] is True


class TestRankAtConstruction:
    """The constructed families pass through points where the map is locally flat."""

    # The two-item design has fewer response patterns than parameters.
    RANKABLE = [(c, i) for c, i in zip(CASES, CASE_IDS) if i != "two-items-two-categories"]

    @pytest.mark.parametrize("kind, q", [c for c, _ in RANKABLE], ids=[i for _, i in RANKABLE])
    def test_deficient(self, kind, q):
        pair = construct_counterexample(q, kind, *start(q))
        assert jacobian_rank(q, *pair.original, allow_boundary=True).deficiency >= 1


def _random_gpdina_q(rng):
    K = int(rng.integers(1, 3))
    rows = [r for r in rng.integers(0, 2, size=(int(rng.integers(3, 7)), K)) if r.any()]
    if len(rows) < 2:
        rows = [np.eye(K, dtype=int)[0]] * 3
    return QMatrix.gpdina(rows, H=rng.integers(1, 3, size=len(rows)))


def _random_seq_q(rng):
    K = int(rng.integers(1, 3))
    items = []
    for _ in range(int(rng.integers(2, 6))):
        block = rng.integers(0, 2, size=(int(rng.integers(1, 3)), K))
        for row in block:
            if not row.any():
                row[rng.integers(K)] = 1
        items.append(block)
    return QMatrix.sequential(items)


def _construct_any(q, kind):
    """Try a few starts and perturbation sizes; constraint violations only depend on those."""
    last = None
    for seed in range(4):
        for eps in (0.01, -0.01, 0.003, -0.003, 0.001):
            params, p = start(q, seed)
            if kind in ("C1", "S1_zero_guess"):
                p = np.full(2**q.K, 2.0**-q.K)
            try:
                return construct_counterexample(q, kind, params, p, eps=eps)
            except ConstructionError as exc:
                last = exc
    raise last


@settings(max_examples=60, deadline=None, suppress_health_check=[HealthCheck.too_slow])
@given(st.integers(0, 2**31), st.booleans())
def test_non_identifiable_designs_have_counterexamples(seed, sequential):
    rng = np.random.default_rng(seed)
    q = _random_seq_q(rng) if sequential else _random_gpdina_q(rng)
    if check(q).verdict is not Verdict.NOT_IDENTIFIABLE:
        return
    pair = _construct_any(q, matching_kind(q))
    assert verify_counterexample(pair).passed


class TestRankAgreement:
    """Local rank agrees with the condition checks on a corpus of small designs."""

    @pytest.mark.parametrize("seed", range(25))
    def test_gpdina_random_points(self, seed):
        rng = np.random.default_rng(1000 + seed)
        q = _random_gpdina_q(rng)
        verdict = check(q).verdict
        for point in range(3):
            try:
                report = jacobian_rank(q, *start(q, point))
            except PolydinaError:
                pytest.skip("too few response patterns for a rank statement")
            assert (report.verdict == "LocallyIdentifiable") == (verdict is Verdict.IDENTIFIABLE)

    @pytest.mark.parametrize("seed", range(25))
    def test_sequential(self, seed):
        rng = np.random.default_rng(2000 + seed)
        q = _random_seq_q(rng)
        verdict = check(q).verdict
        try:
            if verdict is Verdict.IDENTIFIABLE:
                for point in range(3):
                    assert jacobian_rank(q, *start(q, point)).verdict == "LocallyIdentifiable"
            elif verdict is Verdict.NOT_IDENTIFIABLE:
                pair = _construct_any(q, matching_kind(q))
                assert jacobian_rank(q, *pair.original, allow_boundary=True).deficiency >= 1
        except PolydinaError as exc:
            if "degenerate" not in str(exc):
                raise
