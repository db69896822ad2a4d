import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from polydina import gpdina, seqdina
from polydina.core import (
    QKind,
    QMatrix,
    QMatrixError,
    SizeCapError,
    check_proportions,
    enumerate_profiles,
    hadamard_rows,
    ideal_response,
    parse_q_matrix,
    pattern_index,
    profile_index,
    prune_zero_categories,
    random_proportions,
    response_patterns,
)
from polydina.gpdina import GpdinaParams
from polydina.seqdina import SeqParams


class TestProfiles:
    def test_k1(self):
        assert enumerate_profiles(1).tolist() == [[0], [1]]

    def test_k2_order(self):
        assert enumerate_profiles(2).tolist() == [[0, 0], [1, 0], [0, 1], [1, 1]]

    def test_k3_index(self):
        profs = enumerate_profiles(3)
        assert profs.shape == (8, 3)
        assert profile_index([1, 0, 1]) == 5
        assert profs[5].tolist() == [1, 0, 1]

    @pytest.mark.parametrize("K", [0, 21])
    def test_out_of_range(self, K):
        with pytest.raises(ValueError):
            enumerate_profiles(K)

    @given(st.integers(1, 8))
    def test_index_round_trip(self, K):
        profs = enumerate_profiles(K)
        assert [profile_index(a) for a in profs] == list(range(2**K))
        assert len({tuple(a) for a in profs}) == 2**K


class TestIdealResponse:
    @pytest.mark.parametrize(
        "q, a, expected",
        [((1, 0), (1, 1), 1), ((1, 1), (1, 0), 0), ((0, 0), (0, 0), 1), ((0, 0, 0), (1, 0, 1), 1)],
    )
    def test_examples(self, q, a, expected):
        assert ideal_response(q, a) == expected

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            ideal_response((1, 0), (1, 0, 1))

    @given(st.lists(st.tuples(st.integers(0, 1), st.integers(0, 1), st.integers(0, 1)), min_size=3, max_size=3))
    def test_monotone(self, triple):
        q, a, b = triple
        hi = tuple(max(x, y) for x, y in zip(a, b))
        assert ideal_response(q, hi) >= ideal_response(q, a)


class TestPatterns:
    def test_last_item_fastest(self):
        pats = response_patterns([1, 2])
        assert pats.tolist() == [list(r) for r in itertools.product(range(2), range(3))]

    @given(st.lists(st.integers(1, 3), min_size=1, max_size=4))
    def test_index_matches_position(self, H):
        pats = response_patterns(H)
        for i, r in enumerate(pats):
            assert pattern_index(r, H) == i

    def test_hadamard_cap(self, monkeypatch):
        monkeypatch.setenv("POLYDINA_MATRIX_CAP", "10")
        with pytest.raises(SizeCapError):
            hadamard_rows([np.ones((3, 4)), np.ones((3, 4))])


class TestProportions:
    def test_sum_tolerance(self):
        check_proportions([0.25] * 4, 2)
        with pytest.raises(ValueError):
            check_proportions([0.25, 0.25, 0.25, 0.26], 2)

    def test_wrong_length(self):
        with pytest.raises(ValueError):
            check_proportions([0.5, 0.5], 2)

    def test_random_is_positive(self, rng):
        p = random_proportions(3, rng)
        assert np.all(p > 0)
        np.testing.assert_allclose(p.sum(), 1.0, atol=1e-12)


class TestParse:
    def test_two_rows_sequential(self):
        q = parse_q_matrix("1,1,1,0\n2,1,0,1\n", "seq")
        assert (q.J, q.K, q.H) == (2, 2, (1, 1))
        assert q.rows.tolist() == [[1, 0], [0, 1]]

    def test_groups_by_item_in_file_order(self):
        text = "# item,category,q1,q2\n1,1,1,0\n3a,1,0,1\n3a,2,1,1\n2,1,1,1\n"
        q = parse_q_matrix(text, QKind.SEQUENTIAL)
        assert q.labels == ("1", "3a", "2")
        assert q.H == (1, 2, 1)

    def test_gpdina_ncat_counts_category_zero(self):
        q = parse_q_matrix("# item,ncat,q1,q2\n1,3,1,0\n2,2,0,1\n", "gpdina")
        assert q.H == (2, 1)

    def test_zero_row_parses(self):
        q = parse_q_matrix("1,1,0,0\n", "seq")
        pruned, record = prune_zero_categories(q)
        assert pruned.J == 0
        assert record.removed == ((1, 1),)

    @pytest.mark.parametrize(
        "text, kind, message",
        [
            ("", "seq", "empty"),
            ("1,1,1,0\n2,1,0\n", "seq", "ragged"),
            ("1,1,2,0\n", "seq", "binary"),
            ("1,2,1,0\n1,2,0,1\n", "gpdina", "disagree"),
        ],
    )
    def test_errors(self, text, kind, message):
        with pytest.raises(QMatrixError, match=message):
            parse_q_matrix(text, kind)

    @given(st.lists(st.lists(st.lists(st.integers(0, 1), min_size=3, max_size=3), min_size=1, max_size=3), min_size=1, max_size=4))
    def test_csv_round_trip(self, items):
        q = QMatrix.sequential(items, labels=[str(j + 1) for j in range(len(items))])
        assert parse_q_matrix(q.to_csv(), "seq") == q


class TestPrune:
    def test_removes_zero_item(self):
        q = QMatrix.sequential([[[1, 0]], [[0, 0]], [[0, 1]]])
        pruned, record = prune_zero_categories(q)
        assert pruned.rows.tolist() == [[1, 0], [0, 1]]
        assert record.removed == ((2, 1),)

    def test_identity_case(self):
        q = QMatrix.sequential([[[1, 0]], [[0, 1]]])
        pruned, record = prune_zero_categories(q)
        assert pruned == q
        assert record.removed == ()

    def test_renumbers_categories(self):
        q = QMatrix.sequential([[[1, 0], [0, 0], [0, 1]]])
        pruned, record = prune_zero_categories(q)
        assert pruned.items[0].tolist() == [[1, 0], [0, 1]]
        assert record.kept == ((1, 3),)


def _random_q_with_zero_rows(rng, kind):
    J, K = int(rng.integers(2, 5)), int(rng.integers(1, 4))
    items = []
    for _ in range(J):
        H = int(rng.integers(1, 3))
        if kind == "gpdina":
            row = rng.integers(0, 2, size=K)
            items.append([row] * H)
        else:
            items.append([rng.integers(0, 2, size=K) for _ in range(H)])
    items[0] = [np.zeros(K, dtype=int)] * len(items[0])
    if kind == "seq" and len(items[1]) == 1:
        items[1] = [items[1][0], np.zeros(K, dtype=int)]
    if kind == "gpdina":
        return QMatrix.gpdina([b[0] for b in items], H=[len(b) for b in items])
    return QMatrix.sequential(items)


class TestPruningFactorization:
    """Items or categories that need no attribute factor out of the distribution."""

    @pytest.mark.parametrize("seed", range(25))
    def test_gpdina(self, seed):
        rng = np.random.default_rng(seed)
        q = _random_q_with_zero_rows(rng, "gpdina")
        params = gpdina.random_params(q, rng)
        p = random_proportions(q.K, rng)
        pruned, record = prune_zero_categories(q)
        kept = list(record.kept_items)
        dropped = [j for j in range(q.J) if j not in kept]
        full = gpdina.full_distribution(q, params, p)
        if pruned.J == 0:
            small, small_H = np.ones(1), ()
        else:
            sub = GpdinaParams(tuple(params.theta_plus[j] for j in kept), tuple(params.theta_minus[j] for j in kept))
            small, small_H = gpdina.full_distribution(pruned, sub, p), pruned.H
        for i, r in enumerate(response_patterns(q.H)):
            factor = 1.0
            for j in dropped:
                theta = params.theta_plus[j]
                factor *= 1 - theta.sum() if r[j] == 0 else theta[r[j] - 1]
            rest = small[pattern_index([r[j] for j in kept], small_H)] if kept else 1.0
            np.testing.assert_allclose(full[i], factor * rest, atol=1e-12)

    @pytest.mark.parametrize("seed", range(25))
    def test_sequential_survival(self, seed):
        rng = np.random.default_rng(100 + seed)
        q = _random_q_with_zero_rows(rng, "seq")
        params = seqdina.random_params(q, rng)
        pruned, record = prune_zero_categories(q)
        kept_items = list(record.kept_items)
        sub = SeqParams(
            tuple(params.beta_plus[j][[l - 1 for l in record.kept[j]]] for j in kept_items),
            tuple(params.beta_minus[j][[l - 1 for l in record.kept[j]]] for j in kept_items),
        )
        full = seqdina.build_ts_matrix(q, params)
        small = seqdina.build_ts_matrix(pruned, sub) if pruned.J else None
        for r in response_patterns(q.H):
            factor = 1.0
            reduced = []
            for j in range(q.J):
                zero_cats = [l for l in range(1, r[j] + 1) if l not in record.kept[j]]
                for l in zero_cats:
                    factor *= params.beta_plus[j][l - 1]
                if j in kept_items:
                    reduced.append(sum(1 for l in record.kept[j] if l <= r[j]))
            expected = factor * (small.row(reduced) if small is not None else np.ones(2**q.K))
            np.testing.assert_allclose(full.row(r), expected, atol=1e-12)


class TestQMatrix:
    def test_gpdina_rows_shared(self):
        q = QMatrix.gpdina([[1, 0], [0, 1]], H=[2, 3])
        assert q.is_unrestricted()
        assert q.H == (2, 3)

    def test_restricted_has_no_gpdina_form(self):
        q = QMatrix.sequential([[[1, 0], [0, 1]]])
        with pytest.raises(QMatrixError):
            q.as_kind("gpdina")

    def test_arrays_are_read_only(self):
        q = QMatrix.sequential([[[1, 0]]])
        with pytest.raises(ValueError):
            q.items[0][0, 0] = 0
