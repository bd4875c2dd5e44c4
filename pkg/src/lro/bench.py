"""Benchmark harness: loads query-spec suites, executes them, stratifies
multi-LRO queries by difficulty, and emits accuracy/cost reports.

A query-spec file is a JSON object {"queries": [...]}; the field schema is
documented in docs/query-spec-format.md. Multi-LRO queries pass or fail on
whole-table exact match; single-LRO queries are additionally scored with
the operator-appropriate metric.
"""

from __future__ import annotations

import csv
import io
import json
import os
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Tuple

from .errors import BackendError, GatewayTimeout, LroError
from .gateway import cost as ledger_cost
from .metrics import (
    RankingTruth,
    ari,
    canonical,
    exact_match_ratio,
    hit_rate_at_k,
    kendall_tau_on_hits,
    llm_judge_score,
    nmi,
    prf,
    table_exact_match,
)
from .plan import (
    CLUSTER_LABEL_COLUMN,
    ClassicalOrderBy,
    Limit,
    LroClusterNode,
    LroImputeColumnNode,
    LroMatchJoinNode,
    LroOrderNode,
    LroSelectNode,
    Project,
    execute,
    lro_nodes,
    parse_plan,
)
from .plan.nodes import chain
from .relation import Database, Relation, load_relation


@dataclass(frozen=True)
class QuerySpec:
    id: str
    question: str
    plan_text: str
    ground_truth: Relation
    lro_count: int
    table_count: int = 1
    hop_count: int = 1
    knowledge_level: int = 1
    order_sensitive: Optional[bool] = None
    k: Optional[int] = None  # ranking cutoff for order query scoring

    def __post_init__(self):
        if self.lro_count not in (1, 2, 3):
            raise LroError(f"spec {self.id}: lro_count must be 1, 2, or 3")
        for name in ("table_count", "hop_count", "knowledge_level"):
            if getattr(self, name) not in (1, 2, 3):
                raise LroError(f"spec {self.id}: {name} must score 1..3")


@dataclass(frozen=True)
class StratifiedScore:
    lro: int
    tables: int
    hops: int
    knowledge: int
    overall: int
    bucket: str


def stratify(spec: QuerySpec, easy_max: int = 5, medium_max: int = 8) -> Optional[StratifiedScore]:
    """Difficulty score: the LRO dimension maps 2 LROs -> 1 and 3 -> 3; the
    other dimensions pass through their 1-3 annotations; overall is the sum.
    Single-LRO specs bypass stratification (returns None)."""
    if spec.lro_count == 1:
        return None
    lro_score = 1 if spec.lro_count == 2 else 3
    overall = lro_score + spec.table_count + spec.hop_count + spec.knowledge_level
    if overall <= easy_max:
        bucket = "easy"
    elif overall <= medium_max:
        bucket = "medium"
    else:
        bucket = "hard"
    return StratifiedScore(
        lro=lro_score, tables=spec.table_count, hops=spec.hop_count,
        knowledge=spec.knowledge_level, overall=overall, bucket=bucket,
    )


def load_suite(path: str) -> List[QuerySpec]:
    base = os.path.dirname(os.path.abspath(path))
    with open(path, "r", encoding="utf-8") as fh:
        data = json.load(fh)
    specs = []
    for entry in data.get("queries", []):
        if "plan" in entry:
            plan_text = entry["plan"]
        else:
            with open(os.path.join(base, entry["plan_file"]), "r", encoding="utf-8") as fh:
                plan_text = fh.read()
        if "ground_truth" in entry:
            gt = entry["ground_truth"]
            truth = Relation("truth", gt["columns"], [tuple(r) for r in gt["rows"]])
        else:
            truth = load_relation(os.path.join(base, entry["ground_truth_file"]))
        dims = entry.get("dimensions", {})
        try:
            parse_plan(plan_text)
        except LroError as exc:
            raise LroError(f"spec {entry.get('id')}: plan does not parse: {exc}") from exc
        specs.append(QuerySpec(
            id=str(entry["id"]),
            question=entry.get("question", ""),
            plan_text=plan_text,
            ground_truth=truth,
            lro_count=int(dims.get("lro_count", 1)),
            table_count=int(dims.get("table_count", 1)),
            hop_count=int(dims.get("hop_count", 1)),
            knowledge_level=int(dims.get("knowledge_level", 1)),
            order_sensitive=entry.get("order_sensitive"),
            k=entry.get("k"),
        ))
    return specs


@dataclass
class QueryOutcome:
    id: str
    status: str  # pass | fail | error | timeout
    bucket: Optional[str]
    metrics: Dict[str, float] = field(default_factory=dict)
    cost: float = 0.0
    per_model_cost: Dict[str, float] = field(default_factory=dict)
    wall_time: float = 0.0
    llm_calls: int = 0
    input_tokens: int = 0
    output_tokens: int = 0
    error: str = ""


@dataclass
class Report:
    outcomes: List[QueryOutcome]
    accuracy: float
    bucket_accuracy: Dict[str, float]
    total_cost: Dict[str, float]
    judge_model: Optional[str] = None
    thresholds: Tuple[int, int] = (5, 8)

    @property
    def passes(self) -> int:
        return sum(1 for o in self.outcomes if o.status == "pass")


def default_order_sensitive(plan_root) -> bool:
    """Row order matters iff the last order-changing operator is an ordering:
    walk from the root past Limit/Project; True iff an Order node is next."""
    for node in chain(plan_root):
        if isinstance(node, (Limit, Project)):
            continue
        return isinstance(node, (LroOrderNode, ClassicalOrderBy))
    return False


def run_suite(specs: List[QuerySpec], db: Database, make_engine: Callable,
              *, judge=None, easy_max: int = 5, medium_max: int = 8,
              prices: Optional[Dict[str, Tuple[float, float]]] = None,
              concurrent: bool = False) -> Report:
    """Execute every spec independently (own engine, own ledger, own
    timeout); failures and timeouts are recorded, never aborting the suite.
    ``make_engine`` returns a fresh LroEngine per query.

    Specs run sequentially by default for reproducible ledgers; with
    ``concurrent`` they run on a pool capped at the gateway's configured
    parallelism, each still with an isolated ledger."""
    judge_model = None
    if judge is not None:
        judge_model = getattr(judge.gateway.backend, "model", judge.gateway.cfg.model)

    def run_one(spec: QuerySpec) -> QueryOutcome:
        score = stratify(spec, easy_max, medium_max)
        bucket = score.bucket if score else "single"
        engine = make_engine()
        outcome = QueryOutcome(id=spec.id, status="error", bucket=bucket)
        try:
            plan = parse_plan(spec.plan_text, db)
            result, _ledger, _trace = execute(plan, db, engine)
            order_sensitive = (
                spec.order_sensitive if spec.order_sensitive is not None
                else default_order_sensitive(plan.root)
            )
            passed = table_exact_match(result, spec.ground_truth, order_sensitive)
            outcome.status = "pass" if passed else "fail"
            outcome.metrics["exact_match"] = 1.0 if passed else 0.0
            if spec.lro_count == 1:
                outcome.metrics.update(
                    _single_lro_metrics(plan, result, spec, judge)
                )
        except GatewayTimeout as exc:
            outcome.status = "timeout"
            outcome.error = str(exc)
        except (LroError, BackendError, OSError) as exc:
            outcome.status = "error"
            outcome.error = str(exc)

        ledger = engine.gateway.ledger
        outcome.wall_time = engine.gateway.query_elapsed()
        outcome.llm_calls = ledger.call_count()
        outcome.input_tokens = ledger.total_input_tokens()
        outcome.output_tokens = ledger.total_output_tokens()
        if prices:
            ledger.prices = dict(prices)
            try:
                outcome.per_model_cost = ledger_cost(ledger)
                outcome.cost = outcome.per_model_cost.pop("total")
            except LroError as exc:
                outcome.error = (outcome.error + f" [cost: {exc}]").strip()
        return outcome

    if concurrent and specs:
        probe = make_engine()
        workers = max(1, probe.gateway.cfg.parallelism)
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=workers) as pool:
            outcomes = list(pool.map(run_one, specs))
    else:
        outcomes = [run_one(spec) for spec in specs]

    total_cost: Dict[str, float] = {}
    for outcome in outcomes:
        for model, dollars in outcome.per_model_cost.items():
            total_cost[model] = total_cost.get(model, 0.0) + dollars

    total = len(outcomes)
    accuracy = (sum(1 for o in outcomes if o.status == "pass") / total) if total else 0.0
    bucket_accuracy: Dict[str, float] = {}
    for bucket in ("easy", "medium", "hard", "single"):
        members = [o for o in outcomes if o.bucket == bucket]
        if members:
            bucket_accuracy[bucket] = sum(1 for o in members if o.status == "pass") / len(members)
    total_cost["total"] = sum(total_cost.values())
    return Report(
        outcomes=outcomes, accuracy=accuracy, bucket_accuracy=bucket_accuracy,
        total_cost=total_cost, judge_model=judge_model,
        thresholds=(easy_max, medium_max),
    )


def _single_lro_metrics(plan, result: Relation, spec: QuerySpec, judge) -> Dict[str, float]:
    nodes = lro_nodes(plan.root)
    if not nodes:
        return {}
    node = nodes[0]
    truth = spec.ground_truth
    metrics: Dict[str, float] = {}

    if isinstance(node, (LroSelectNode, LroMatchJoinNode)):
        pred_set = {tuple(canonical(c) for c in row) for row in result.rows}
        truth_set = {tuple(canonical(c) for c in row) for row in truth.rows}
        set_metrics = prf(pred_set, truth_set)
        metrics["precision"] = set_metrics.precision
        metrics["recall"] = set_metrics.recall
        metrics["f1"] = set_metrics.f1
    elif isinstance(node, LroImputeColumnNode):
        column = node.new_column
        if column in result.columns and column in truth.columns \
                and result.row_count == truth.row_count:
            pred_cells = result.column_values(column)
            truth_cells = truth.column_values(column)
            metrics["em"] = exact_match_ratio(pred_cells, truth_cells)
            if judge is not None:
                metrics["judge"] = llm_judge_score(pred_cells, truth_cells, judge)
        else:
            metrics["em"] = 0.0
    elif isinstance(node, LroClusterNode):
        pred_partition = _label_partition(result)
        truth_partition = _label_partition(truth)
        if pred_partition is not None and truth_partition is not None:
            try:
                metrics["ari"] = ari(pred_partition, truth_partition)
                metrics["nmi"] = nmi(pred_partition, truth_partition)
            except LroError:
                metrics["ari"] = metrics["nmi"] = 0.0
        else:
            metrics["ari"] = metrics["nmi"] = 0.0
    elif isinstance(node, LroOrderNode):
        k = spec.k or truth.row_count
        try:
            ranking = RankingTruth(truth.rows, k)
            metrics["hr_at_k"] = hit_rate_at_k(result.rows, ranking)
            metrics["tau"] = kendall_tau_on_hits(result.rows, ranking)
        except LroError:
            metrics["hr_at_k"] = metrics["tau"] = 0.0
    return metrics


def _label_partition(rel: Relation):
    """Partition of row contents (label column removed) keyed by the label
    column; None when the relation has no label column."""
    if CLUSTER_LABEL_COLUMN not in rel.columns:
        return None
    label_index = rel.column_index(CLUSTER_LABEL_COLUMN)
    groups: Dict[str, list] = {}
    for row in rel.rows:
        element = tuple(cell for i, cell in enumerate(row) if i != label_index)
        groups.setdefault(row[label_index], []).append(element)
    return [members for _label, members in sorted(groups.items())]


# --- report emission ----------------------------------------------------------------

_BUCKET_ORDER = {"easy": 0, "medium": 1, "hard": 2, "single": 3}


def report_to_json(report: Report) -> str:
    payload = {
        "accuracy": report.accuracy,
        "accuracy_pct": round(report.accuracy * 100, 2),
        "queries": len(report.outcomes),
        "passes": report.passes,
        "bucket_accuracy": {k: report.bucket_accuracy[k]
                            for k in sorted(report.bucket_accuracy, key=_BUCKET_ORDER.get)},
        "bucket_thresholds": {"easy_max": report.thresholds[0],
                              "medium_max": report.thresholds[1]},
        "total_cost": {k: round(v, 6) for k, v in sorted(report.total_cost.items())},
        "judge_model": report.judge_model,
        "per_query": [
            {
                "id": o.id,
                "status": o.status,
                "bucket": o.bucket,
                "metrics": {k: round(v, 6) for k, v in sorted(o.metrics.items())},
                "cost": round(o.cost, 6),
                "wall_time": round(o.wall_time, 6),
                "llm_calls": o.llm_calls,
                "input_tokens": o.input_tokens,
                "output_tokens": o.output_tokens,
                "error": o.error,
            }
            for o in report.outcomes
        ],
    }
    return json.dumps(payload, indent=2, ensure_ascii=False) + "\n"


def report_to_csv(report: Report) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow([
        "bucket", "id", "status", "metrics", "cost", "wall_time",
        "llm_calls", "input_tokens", "output_tokens", "error",
    ])
    indexed = list(enumerate(report.outcomes))
    indexed.sort(key=lambda pair: (_BUCKET_ORDER.get(pair[1].bucket, 9), pair[0]))
    for _i, o in indexed:
        metrics = ";".join(f"{k}={v:.6f}" for k, v in sorted(o.metrics.items()))
        writer.writerow([
            o.bucket, o.id, o.status, metrics, f"{o.cost:.6f}",
            f"{o.wall_time:.6f}", o.llm_calls, o.input_tokens,
            o.output_tokens, o.error,
        ])
    return buf.getvalue()


def emit_report(report: Report, directory: str) -> List[str]:
    os.makedirs(directory, exist_ok=True)
    json_path = os.path.join(directory, "report.json")
    csv_path = os.path.join(directory, "queries.csv")
    with open(json_path, "w", encoding="utf-8", newline="") as fh:
        fh.write(report_to_json(report))
    with open(csv_path, "w", encoding="utf-8", newline="") as fh:
        fh.write(report_to_csv(report))
    return [json_path, csv_path]
