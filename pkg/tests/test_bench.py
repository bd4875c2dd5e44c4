from __future__ import annotations

import json

import pytest

from lro.bench import (
    QueryOutcome,
    QuerySpec,
    Report,
    default_order_sensitive,
    emit_report,
    load_suite,
    run_suite,
    stratify,
)
from lro.errors import LroError
from lro.plan import parse_plan
from lro.relation import Relation

from mockkit import cluster_all_response, engine_with, impute_rule, order_rule, select_rule


def spec(id="q", plan="SELECT Name FROM Restaurants LIMIT 1;", truth=None,
         lro_count=2, **kw):
    truth = truth if truth is not None else Relation("t", ["Name"], [("Alley Wok",)])
    return QuerySpec(id=id, question="?", plan_text=plan, ground_truth=truth,
                     lro_count=lro_count, **kw)


class TestStratify:
    def test_two_lros_all_easy_dims(self):
        s = stratify(spec(table_count=1, hop_count=1, knowledge_level=1))
        assert (s.lro, s.overall, s.bucket) == (1, 4, "easy")

    def test_three_lros_all_hard(self):
        s = stratify(spec(lro_count=3, table_count=3, hop_count=3, knowledge_level=3))
        assert (s.lro, s.overall, s.bucket) == (3, 12, "hard")

    def test_two_lros_medium_dims(self):
        s = stratify(spec(table_count=2, hop_count=2, knowledge_level=2))
        assert (s.overall, s.bucket) == (7, "medium")

    def test_single_lro_bypasses(self):
        assert stratify(spec(lro_count=1)) is None

    def test_overall_always_dimension_sum(self):
        for lro_count in (2, 3):
            for t in (1, 2, 3):
                for h in (1, 2, 3):
                    for k in (1, 2, 3):
                        s = stratify(spec(lro_count=lro_count, table_count=t,
                                          hop_count=h, knowledge_level=k))
                        assert s.overall == s.lro + t + h + k
                        assert 4 <= s.overall <= 12

    def test_invalid_lro_count_rejected(self):
        with pytest.raises(LroError):
            spec(lro_count=4)

    def test_custom_thresholds(self):
        s = stratify(spec(table_count=2, hop_count=2, knowledge_level=2),
                     easy_max=7, medium_max=9)
        assert s.bucket == "easy"


class TestOrderSensitiveDefault:
    def test_order_then_limit_is_sensitive(self):
        plan = parse_plan("SELECT Name FROM T ORDER BY LLM_ORDER('row', 'x') LIMIT 1;")
        assert default_order_sensitive(plan.root)

    def test_classical_order_by_is_sensitive(self):
        plan = parse_plan("SELECT * FROM T ORDER BY Age DESC;")
        assert default_order_sensitive(plan.root)

    def test_filter_only_is_insensitive(self):
        plan = parse_plan("SELECT * FROM T WHERE LLM_SELECT('row', 'x');")
        assert not default_order_sensitive(plan.root)


class TestRunSuite:
    def engine_factory(self, rules=None, responses=None, **kw):
        def make():
            engine, _ = engine_with(rules=rules, responses=list(responses or []), **kw)
            return engine
        return make

    def test_single_passing_spec(self, small_db):
        report = run_suite([spec()], small_db, self.engine_factory())
        assert report.accuracy == 1.0
        assert report.outcomes[0].status == "pass"

    def test_failing_spec(self, small_db):
        bad = spec(truth=Relation("t", ["Name"], [("Wrong",)]))
        report = run_suite([bad], small_db, self.engine_factory())
        assert report.accuracy == 0.0
        assert report.outcomes[0].status == "fail"

    def test_timeout_isolated(self, small_db):
        slow_rule = lambda req: ("{}", 10_000.0)
        plan = "SELECT Name FROM Restaurants ORDER BY LLM_ORDER('row', 'slow');"
        specs = [
            spec(id="slow", plan=plan),
            spec(id="fine"),
        ]
        report = run_suite(specs, small_db, self.engine_factory(rules=[slow_rule]))
        by_id = {o.id: o for o in report.outcomes}
        assert by_id["slow"].status == "timeout"
        assert by_id["fine"].status == "pass"

    def test_error_isolated(self, small_db):
        specs = [spec(id="broken", plan="SELECT FROM;"), spec(id="fine")]
        report = run_suite(specs, small_db, self.engine_factory())
        by_id = {o.id: o for o in report.outcomes}
        assert by_id["broken"].status == "error"
        assert by_id["fine"].status == "pass"
        assert report.accuracy == 0.5

    def test_sixty_spec_headline(self, small_db):
        wrong = Relation("t", ["Name"], [("Nope",)])
        specs = [spec(id=f"q{i}") for i in range(52)]
        specs += [spec(id=f"q{52 + i}", truth=wrong) for i in range(8)]
        report = run_suite(specs, small_db, self.engine_factory())
        assert report.passes == 52
        assert abs(report.accuracy * 100 - 86.67) <= 0.01

    def test_accuracy_invariant_under_reordering(self, small_db):
        wrong = Relation("t", ["Name"], [("Nope",)])
        specs = [spec(id="a"), spec(id="b", truth=wrong), spec(id="c")]
        fwd = run_suite(specs, small_db, self.engine_factory())
        rev = run_suite(list(reversed(specs)), small_db, self.engine_factory())
        assert fwd.accuracy == rev.accuracy

    def test_concurrent_flag_matches_sequential(self, small_db):
        plan = "SELECT * FROM Restaurants WHERE LLM_SELECT('row', 'bay area');"
        keep = lambda text: "Palo Alto" in text or "San Francisco" in text
        truth = Relation("t", ["Name", "Location", "Description"], [
            ("Alley Wok", "Palo Alto", "Cozy spot for Sichuan classics"),
            ("Golden Gate Dim Sum", "San Francisco", "Bustling carts of dumplings"),
        ])
        specs = [spec(id=f"q{i}", plan=plan, truth=truth, order_sensitive=False)
                 for i in range(6)]
        factory = self.engine_factory(rules=[select_rule(keep)])
        sequential = run_suite(specs, small_db, factory)
        threaded = run_suite(specs, small_db, factory, concurrent=True)
        assert [o.status for o in sequential.outcomes] == \
            [o.status for o in threaded.outcomes]
        assert [o.id for o in threaded.outcomes] == [s.id for s in specs]
        assert sequential.accuracy == threaded.accuracy == 1.0

    def test_per_query_cost_matches_ledger(self, small_db):
        plan = "SELECT * FROM Restaurants WHERE LLM_SELECT('row', 'all of them');"
        truth = Relation("t", ["Name", "Location", "Description"], [])
        s = spec(plan=plan, truth=truth)
        prices = {"mock": (2.0, 8.0)}
        engines = []

        def make():
            engine, _ = engine_with(rules=[select_rule(lambda t: False)], prices=prices)
            engines.append(engine)
            return engine

        report = run_suite([s], small_db, make, prices=prices)
        outcome = report.outcomes[0]
        ledger = engines[0].gateway.ledger
        expected = (ledger.total_input_tokens() * 2.0 +
                    ledger.total_output_tokens() * 8.0) / 1e6
        assert outcome.cost == pytest.approx(expected)
        assert outcome.status == "pass"

    def test_single_lro_select_f1(self, small_db):
        plan = "SELECT * FROM Restaurants WHERE LLM_SELECT('row', 'bay area');"
        keep = lambda text: "Palo Alto" in text or "San Francisco" in text
        truth = Relation("t", ["Name", "Location", "Description"], [
            ("Alley Wok", "Palo Alto", "Cozy spot for Sichuan classics"),
        ])
        s = spec(plan=plan, truth=truth, lro_count=1)
        report = run_suite([s], small_db, self.engine_factory(rules=[select_rule(keep)]))
        outcome = report.outcomes[0]
        assert outcome.bucket == "single"
        # pred = {Alley Wok, Golden Gate}, truth = {Alley Wok}
        assert outcome.metrics["precision"] == 0.5
        assert outcome.metrics["recall"] == 1.0
        assert outcome.metrics["f1"] == pytest.approx(2 / 3)

    def test_single_lro_impute_em_and_judge(self, small_db):
        plan = ("SELECT Name, LLM_IMPUTE('Vibe', 'One-word vibe.') "
                "FROM Restaurants LIMIT 2;")
        truth = Relation("t", ["Name", "Vibe"], [
            ("Alley Wok", "cozy"), ("Bella Pasta", "romantic"),
        ])
        s = spec(plan=plan, truth=truth, lro_count=1, order_sensitive=False)
        judge_engine, _ = engine_with(
            responses=[json.dumps({"identical": True})], model="judge")
        fill = lambda column, record: "cozy"
        report = run_suite(
            [s], small_db, self.engine_factory(rules=[impute_rule(fill)]),
            judge=judge_engine,
        )
        outcome = report.outcomes[0]
        assert outcome.metrics["em"] == 0.5
        assert outcome.metrics["judge"] == 1.0  # non-equal pair judged identical
        assert report.judge_model == "judge"

    def test_single_lro_cluster_ari(self, small_db):
        plan = "SELECT * FROM Enterprises GROUP BY LLM_CLUSTER('row', 'by sector');"
        truth_rows = [
            ("Microsoft", "Satya Nadella", "tech"),
            ("Google", "Sundar Pichai", "tech"),
            ("Reckitt", "Kris Licht", "retail"),
            ("P&G", "Jon Moeller", "retail"),
        ]
        truth = Relation("t", ["Enterprise", "CEO", "cluster"], truth_rows)
        s = spec(plan=plan, truth=truth, lro_count=1, order_sensitive=False)
        responses = [cluster_all_response([("tech", [0, 1]), ("retail", [2, 3])])]
        report = run_suite([s], small_db, self.engine_factory(responses=responses))
        outcome = report.outcomes[0]
        assert outcome.metrics["ari"] == 1.0
        assert outcome.metrics["nmi"] == 1.0
        assert outcome.status == "pass"

    def test_single_lro_order_ranking_metrics(self, small_db):
        plan = "SELECT * FROM Restaurants ORDER BY LLM_ORDER('row', 'by appeal');"
        rank = lambda text: 0.0 if "Alley Wok" in text else 1.0
        truth = Relation("t", ["Name", "Location", "Description"], [])
        # ground truth: mock's winner first, others in input order
        engine_probe, _ = engine_with(rules=[order_rule(rank)])
        from lro.operators import ALL, Requirement, lro_order
        probe_result = lro_order(
            engine_probe,
            small_db.get("Restaurants"), Requirement("by appeal"), ALL)
        truth = Relation("t", probe_result.columns, probe_result.rows)
        s = spec(plan=plan, truth=truth, lro_count=1, k=2)
        report = run_suite([s], small_db, self.engine_factory(rules=[order_rule(rank)]))
        outcome = report.outcomes[0]
        assert outcome.metrics["hr_at_k"] == 1.0
        assert outcome.metrics["tau"] == 1.0


class TestLoadSuite:
    def test_inline_and_file_ground_truth(self, tmp_path):
        gt_file = tmp_path / "truth.csv"
        gt_file.write_text("Name\nAlley Wok\n", encoding="utf-8")
        suite = {
            "queries": [
                {
                    "id": "inline",
                    "question": "who?",
                    "plan": "SELECT Name FROM Restaurants LIMIT 1;",
                    "ground_truth": {"columns": ["Name"], "rows": [["Alley Wok"]]},
                    "dimensions": {"lro_count": 2, "table_count": 1,
                                   "hop_count": 1, "knowledge_level": 1},
                },
                {
                    "id": "fileref",
                    "plan": "SELECT Name FROM Restaurants LIMIT 1;",
                    "ground_truth_file": "truth.csv",
                    "dimensions": {"lro_count": 1},
                    "order_sensitive": False,
                },
            ]
        }
        path = tmp_path / "suite.json"
        path.write_text(json.dumps(suite), encoding="utf-8")
        specs = load_suite(str(path))
        assert [s.id for s in specs] == ["inline", "fileref"]
        assert specs[0].ground_truth.rows == (("Alley Wok",),)
        assert specs[1].ground_truth.rows == (("Alley Wok",),)
        assert specs[1].order_sensitive is False

    def test_unparseable_plan_rejected_at_load(self, tmp_path):
        suite = {"queries": [{
            "id": "bad", "plan": "SELECT FROM;",
            "ground_truth": {"columns": ["x"], "rows": []},
            "dimensions": {"lro_count": 2},
        }]}
        path = tmp_path / "suite.json"
        path.write_text(json.dumps(suite), encoding="utf-8")
        with pytest.raises(LroError, match="plan does not parse"):
            load_suite(str(path))


class TestEmitReport:
    def make_report(self):
        outcomes = [
            QueryOutcome(id="h1", status="fail", bucket="hard"),
            QueryOutcome(id="e1", status="pass", bucket="easy",
                         metrics={"f1": 1.0}, cost=0.01),
            QueryOutcome(id="m1", status="pass", bucket="medium"),
        ]
        return Report(outcomes=outcomes, accuracy=2 / 3,
                      bucket_accuracy={"easy": 1.0, "medium": 1.0, "hard": 0.0},
                      total_cost={"total": 0.01})

    def test_emit_deterministic(self, tmp_path):
        report = self.make_report()
        emit_report(report, str(tmp_path / "a"))
        emit_report(report, str(tmp_path / "b"))
        for name in ("report.json", "queries.csv"):
            assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()

    def test_csv_grouped_by_bucket(self, tmp_path):
        report = self.make_report()
        emit_report(report, str(tmp_path))
        lines = (tmp_path / "queries.csv").read_text().splitlines()
        buckets = [line.split(",")[0] for line in lines[1:]]
        assert buckets == ["easy", "medium", "hard"]

    def test_empty_report(self, tmp_path):
        report = Report(outcomes=[], accuracy=0.0, bucket_accuracy={}, total_cost={})
        emit_report(report, str(tmp_path))
        payload = json.loads((tmp_path / "report.json").read_text())
        assert payload["queries"] == 0
