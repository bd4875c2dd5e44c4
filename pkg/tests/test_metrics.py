from __future__ import annotations

import json
import random

import pytest
from hypothesis import given, strategies as st

from lro.errors import LroError
from lro.metrics import (
    RankingTruth,
    ari,
    exact_match_ratio,
    hit_rate_at_k,
    kendall_tau_on_hits,
    llm_judge_score,
    nmi,
    prf,
    table_exact_match,
)
from lro.relation import Relation

from mockkit import engine_with
from oracles import ari_pair_counting, nmi_entropy, random_partition, tau_by_inversions


class TestPrf:
    def test_equal_sets(self):
        m = prf({"a", "b"}, {"a", "b"})
        assert (m.precision, m.recall, m.f1) == (1.0, 1.0, 1.0)

    def test_half_overlap(self):
        m = prf({"a", "b"}, {"a", "c"})
        assert (m.precision, m.recall, m.f1) == (0.5, 0.5, 0.5)

    def test_empty_pred_nonempty_truth(self):
        m = prf(set(), {"a"})
        assert (m.precision, m.recall, m.f1) == (0.0, 0.0, 0.0)

    def test_both_empty_is_perfect(self):
        m = prf(set(), set())
        assert (m.precision, m.recall, m.f1) == (1.0, 1.0, 1.0)

    def test_nonempty_pred_empty_truth(self):
        m = prf({"a"}, set())
        assert (m.precision, m.recall, m.f1) == (0.0, 0.0, 0.0)

    @given(st.sets(st.integers(0, 12)), st.sets(st.integers(0, 12)))
    def test_swap_symmetry(self, pred, truth):
        a, b = prf(pred, truth), prf(truth, pred)
        assert a.precision == b.recall and a.recall == b.precision
        assert a.f1 == pytest.approx(b.f1)


class TestExactMatch:
    def test_identical(self):
        assert exact_match_ratio(["a", "b"], ["a", "b"]) == 1.0

    def test_disjoint(self):
        assert exact_match_ratio(["a", "b"], ["x", "y"]) == 0.0

    def test_half(self):
        assert exact_match_ratio(["a", "b", "c", "d"], ["a", "x", "c", "y"]) == 0.5

    def test_whitespace_canonicalized(self):
        assert exact_match_ratio([" a "], ["a"]) == 1.0

    def test_case_fold_flag(self):
        assert exact_match_ratio(["A"], ["a"]) == 0.0
        assert exact_match_ratio(["A"], ["a"], case_fold=True) == 1.0

    def test_length_mismatch(self):
        with pytest.raises(LroError):
            exact_match_ratio(["a"], ["a", "b"])


class TestJudgeScore:
    def judge_engine(self, responses=(), model="judge-model"):
        engine, backend = engine_with(responses=list(responses), model=model)
        return engine, backend

    def test_string_equal_short_circuits(self):
        judge, backend = self.judge_engine()
        assert llm_judge_score(["a", "b"], ["a", "b"], judge) == 1.0
        assert backend.calls == []

    def test_alternating_verdicts(self):
        judge, backend = self.judge_engine(responses=[
            json.dumps({"identical": True}), json.dumps({"identical": False}),
            json.dumps({"identical": True}), json.dumps({"identical": False}),
        ])
        score = llm_judge_score(["1", "2", "3", "4"], ["w", "x", "y", "z"], judge)
        assert score == 0.5
        assert len(backend.calls) == 4

    def test_empty_lists_vacuous(self):
        judge, _ = self.judge_engine()
        assert llm_judge_score([], [], judge) == 1.0

    def test_judge_model_must_differ(self):
        judge, _ = self.judge_engine(model="same-model")
        with pytest.raises(LroError):
            llm_judge_score(["a"], ["b"], judge, task_model="same-model")


class TestPartitionMetrics:
    def test_identical_partitions(self):
        p = [["a", "b"], ["c"]]
        assert ari(p, p) == 1.0
        assert nmi(p, p) == pytest.approx(1.0)

    def test_label_invariance(self):
        pred = [["a", "b"], ["c", "d"]]
        relabeled = [["c", "d"], ["a", "b"]]
        assert ari(pred, relabeled) == pytest.approx(ari(pred, pred))
        assert nmi(pred, relabeled) == pytest.approx(1.0)

    def test_both_single_cluster(self):
        p = [["a", "b", "c"]]
        assert ari(p, p) == 1.0
        assert nmi(p, p) == 1.0

    def test_element_set_mismatch(self):
        with pytest.raises(LroError):
            ari([["a"]], [["b"]])
        with pytest.raises(LroError):
            nmi([["a"]], [["b"]])

    def test_anticorrelated_partitions_negative_ari(self):
        # by hand: 0 co-clustered pairs agree, E[RI] = 2*2/6, max = 2
        # -> (0 - 2/3) / (2 - 2/3) = -0.5
        pred = [["a", "b"], ["c", "d"]]
        truth = [["a", "c"], ["b", "d"]]
        assert ari(pred, truth) == pytest.approx(-0.5)
        assert ari_pair_counting(pred, truth) == pytest.approx(-0.5)

    def test_matches_oracles_random(self):
        rng = random.Random(2024)
        for _ in range(400):
            n = rng.randint(1, 8)
            elements = list(range(n))
            pred = random_partition(rng, elements)
            truth_labels = random_partition(rng, elements)
            assert ari(pred, truth_labels) == pytest.approx(
                ari_pair_counting(pred, truth_labels), abs=1e-9)
            assert nmi(pred, truth_labels) == pytest.approx(
                nmi_entropy(pred, truth_labels), abs=1e-9)

    def test_invariant_under_relabeling_and_reordering(self):
        rng = random.Random(404)
        for _ in range(200):
            n = rng.randint(2, 8)
            elements = list(range(n))
            pred = random_partition(rng, elements)
            truth = random_partition(rng, elements)
            shuffled = [list(members) for members in pred]
            for members in shuffled:
                rng.shuffle(members)
            rng.shuffle(shuffled)
            assert ari(shuffled, truth) == pytest.approx(ari(pred, truth), abs=1e-12)
            assert nmi(shuffled, truth) == pytest.approx(nmi(pred, truth), abs=1e-12)


class TestRankingMetrics:
    def rows(self, n):
        return [(str(i),) for i in range(n)]

    def test_pred_equals_truth(self):
        truth = RankingTruth(self.rows(5), 3)
        assert hit_rate_at_k(self.rows(5), truth) == 1.0
        assert kendall_tau_on_hits(self.rows(5), truth) == 1.0

    def test_reverse_full_cutoff_saturates(self):
        rows = self.rows(4)
        truth = RankingTruth(rows, 4)
        assert hit_rate_at_k(list(reversed(rows)), truth) == 1.0
        assert kendall_tau_on_hits(list(reversed(rows)), truth) == -1.0

    def test_half_overlap_at_k2(self):
        truth = RankingTruth(self.rows(4), 2)  # top-2: rows 0,1
        pred = [("0",), ("2",), ("1",), ("3",)]  # top-2: rows 0,2
        assert hit_rate_at_k(pred, truth) == 0.5

    def test_tau_single_hit_is_one(self):
        truth = RankingTruth(self.rows(4), 1)
        pred = [("3",), ("0",), ("1",), ("2",)]
        assert kendall_tau_on_hits(pred, truth) == 1.0

    def test_non_permutation_rejected(self):
        truth = RankingTruth(self.rows(3), 2)
        with pytest.raises(LroError):
            hit_rate_at_k(self.rows(2), truth)
        with pytest.raises(LroError):
            kendall_tau_on_hits([("9",), ("1",), ("2",)], truth)

    def test_bad_cutoff_rejected(self):
        with pytest.raises(LroError):
            RankingTruth(self.rows(3), 0)
        with pytest.raises(LroError):
            RankingTruth(self.rows(3), 4)

    def test_matches_inversion_oracle_random(self):
        rng = random.Random(7)
        for _ in range(400):
            n = rng.randint(1, 8)
            rows = [(str(i),) for i in range(n)]
            pred = rows[:]
            rng.shuffle(pred)
            k = rng.randint(1, n)
            truth = RankingTruth(rows, k)
            expected = tau_by_inversions([tuple(r) for r in pred], [tuple(r) for r in rows], k)
            assert kendall_tau_on_hits(pred, truth) == expected

    @given(st.permutations(range(7)), st.integers(1, 7))
    def test_tau_of_self_is_one(self, perm, k):
        rows = [(str(i),) for i in perm]
        truth = RankingTruth(rows, k)
        assert kendall_tau_on_hits(rows, truth) == 1.0


class TestTableExactMatch:
    def test_one_cell_result(self):
        pred = Relation("result", ["Name"], [("Alley Wok",)])
        truth = Relation("truth", ["Name"], [("Alley Wok",)])
        assert table_exact_match(pred, truth)

    def test_row_order_insensitive_mode(self):
        a = Relation("a", ["x"], [("1",), ("2",)])
        b = Relation("b", ["x"], [("2",), ("1",)])
        assert not table_exact_match(a, b, order_sensitive=True)
        assert table_exact_match(a, b, order_sensitive=False)

    def test_extra_row_fails(self):
        a = Relation("a", ["x"], [("1",), ("2",)])
        b = Relation("b", ["x"], [("1",)])
        assert not table_exact_match(a, b, order_sensitive=False)

    def test_schema_mismatch_fails(self):
        a = Relation("a", ["x"], [("1",)])
        b = Relation("b", ["y"], [("1",)])
        assert not table_exact_match(a, b)

    def test_equivalence_relation_properties(self):
        rng = random.Random(3)
        rels = []
        for _ in range(6):
            rows = [(str(rng.randint(0, 2)),) for _ in range(rng.randint(0, 3))]
            rels.append(Relation("r", ["x"], rows))
        for sensitive in (True, False):
            for a in rels:
                assert table_exact_match(a, a, sensitive)  # reflexive
                for b in rels:
                    assert table_exact_match(a, b, sensitive) == table_exact_match(b, a, sensitive)
                    for c in rels:
                        if table_exact_match(a, b, sensitive) and table_exact_match(b, c, sensitive):
                            assert table_exact_match(a, c, sensitive)
