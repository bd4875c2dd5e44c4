"""Scalability lab: sweeps input scale and batch size for row-wise Select
and column-wise Impute against rule-checkable ground truth, then aggregates
quality-cost curve data.

The two tasks have deterministic oracles: a birthdate cutoff (strictly
after 1989-11-09) for the Select task, and the Western zodiac sign computed
from fixed tropical month/day boundaries for the Impute task.
"""

from __future__ import annotations

import csv
import io
import json
import os
import re
from dataclasses import dataclass
from datetime import date
from typing import Callable, List, Optional, Sequence, Tuple

from .errors import BackendError, GatewayTimeout, LroError, MalformedOutputError
from .gateway import ChatRequest, MockScript, cost as ledger_cost, estimate_tokens
from .metrics import exact_match_ratio, prf
from .operators import ALL, ONE, LroEngine, Requirement, Variant, lro_impute, lro_select
from .relation import Granularity, Relation, take

WALL_FALL = date(1989, 11, 9)

SELECT_TASK = "select_row"
IMPUTE_TASK = "impute_column"

SELECT_REQUIREMENT = "Identify the players born after the fall of the Berlin Wall."
IMPUTE_REQUIREMENT = "Determine the zodiac sign for each player based on their date of birth."

# Tropical zodiac date boundaries: (start month, start day, sign). The
# twelve intervals partition the calendar year exactly.
ZODIAC_TABLE: Tuple[Tuple[int, int, str], ...] = (
    (1, 20, "Aquarius"),
    (2, 19, "Pisces"),
    (3, 21, "Aries"),
    (4, 20, "Taurus"),
    (5, 21, "Gemini"),
    (6, 21, "Cancer"),
    (7, 23, "Leo"),
    (8, 23, "Virgo"),
    (9, 23, "Libra"),
    (10, 23, "Scorpio"),
    (11, 22, "Sagittarius"),
    (12, 22, "Capricorn"),
)

_DATE_RE = re.compile(r"(\d{4})-(\d{2})-(\d{2})")


def parse_date_cell(cell: Optional[str]) -> Optional[date]:
    if cell is None:
        return None
    match = _DATE_RE.search(cell)
    if not match:
        return None
    year, month, day = (int(g) for g in match.groups())
    try:
        return date(year, month, day)
    except ValueError:
        return None


def zodiac_sign(month: int, day: int) -> str:
    for start_month, start_day, sign in reversed(ZODIAC_TABLE):
        if (month, day) >= (start_month, start_day):
            return sign
    return "Capricorn"  # Jan 1 .. Jan 19 wraps the Capricorn interval


@dataclass(frozen=True)
class RuleTruth:
    """Per-row oracle answers; unparseable-date rows are flagged excluded
    and skipped by scoring."""

    mask: Tuple[bool, ...]            # select task
    values: Tuple[Optional[str], ...]  # impute task
    excluded: Tuple[bool, ...]


def rule_ground_truth(task: str, rel: Relation, date_column: str) -> RuleTruth:
    dates = [parse_date_cell(cell) for cell in rel.column_values(date_column)]
    excluded = tuple(d is None for d in dates)
    if task == SELECT_TASK:
        mask = tuple(d is not None and d > WALL_FALL for d in dates)
        values = tuple(None for _ in dates)
    elif task == IMPUTE_TASK:
        mask = tuple(False for _ in dates)
        values = tuple(
            None if d is None else zodiac_sign(d.month, d.day) for d in dates
        )
    else:
        raise LroError(f"unknown sweep task {task!r}")
    return RuleTruth(mask=mask, values=values, excluded=excluded)


# --- oracle-consistent and fault-injecting mocks --------------------------------------

def oracle_rule(date_column: str) -> Callable:
    """A MockScript rule that answers the sweep's prompts by applying the
    ground-truth rule to the dates it finds in the prompt text."""
    column_re = re.compile(
        re.escape(date_column) + r":\s*(\d{4}-\d{2}-\d{2})"
    )
    entry_re = re.compile(r"^(\d+)\. (.*)$", re.MULTILINE)

    def answer_select(entry: str) -> bool:
        found = column_re.search(entry)
        if not found:
            return False
        parsed = parse_date_cell(found.group(1))
        return parsed is not None and parsed > WALL_FALL

    def answer_impute(entry: str) -> str:
        found = column_re.search(entry)
        parsed = parse_date_cell(found.group(1)) if found else None
        if parsed is None:
            return "unknown"
        return zodiac_sign(parsed.month, parsed.day)

    def rule(req: ChatRequest) -> Optional[str]:
        tag = req.tag
        if tag.startswith("select/row/one"):
            return json.dumps({"keep": answer_select(req.user)})
        if tag.startswith("select/row/"):
            indices = [
                int(m.group(1)) for m in entry_re.finditer(req.user)
                if answer_select(m.group(2))
            ]
            return json.dumps(indices)
        if tag.startswith("impute/column/one"):
            return json.dumps({"value": answer_impute(req.user)})
        if tag.startswith("impute/column/"):
            values = [answer_impute(m.group(2)) for m in entry_re.finditer(req.user)]
            return json.dumps(values)
        return None

    return rule


def token_fault_rule(inner: Callable, threshold_tokens: int = 2000) -> Callable:
    """Wrap a rule so prompts above the token threshold come back malformed,
    modeling structured-generation breakdown on long inputs."""

    def rule(req: ChatRequest) -> Optional[str]:
        if estimate_tokens(req.system + req.user) > threshold_tokens:
            return "### output corrupted: unterminated"
        return inner(req)

    return rule


def oracle_script(date_column: str, *, fault_threshold: Optional[int] = None,
                  latency: float = 0.0) -> MockScript:
    rule = oracle_rule(date_column)
    if fault_threshold is not None:
        rule = token_fault_rule(rule, fault_threshold)
    return MockScript(rules=[rule], default_latency=latency)


# --- the sweep -------------------------------------------------------------------------

@dataclass
class SweepConfig:
    task: str
    scales: Sequence[int]
    batch_sizes: Sequence[Optional[int]]  # 1 = ONE, None = ALL, else BATCH(b)
    repeats: int = 10
    timeout_seconds: Optional[float] = None  # None keeps the engine's (30 min default)
    date_column: str = "birthday"
    new_column: str = "zodiac"
    requirement: Optional[str] = None

    def __post_init__(self):
        if self.task not in (SELECT_TASK, IMPUTE_TASK):
            raise LroError(f"unknown sweep task {self.task!r}")
        if list(self.scales) != sorted(self.scales):
            raise LroError("sweep scales must be ascending")
        if self.repeats < 1:
            raise LroError("sweep repeats must be >= 1")
        if self.timeout_seconds is not None and self.timeout_seconds <= 0:
            raise LroError("sweep timeout must be > 0")

    def requirement_text(self) -> str:
        if self.requirement:
            return self.requirement
        return SELECT_REQUIREMENT if self.task == SELECT_TASK else IMPUTE_REQUIREMENT


@dataclass(frozen=True)
class SweepRecord:
    scale: int
    batch: str  # "one" | "all" | the batch size
    repeat: int
    quality: float
    input_tokens: int
    output_tokens: int
    llm_calls: int
    cost: float
    wall_time: float
    outcome: str  # ok | malformed | timeout


def batch_label(batch: Optional[int]) -> str:
    if batch is None:
        return "all"
    if batch == 1:
        return "one"
    return str(batch)


def _variant_for(batch: Optional[int]) -> Variant:
    if batch is None:
        return ALL
    if batch == 1:
        return ONE
    return Variant.batch(batch)


def sweep(cfg: SweepConfig, rel: Relation, make_engine: Callable[[], LroEngine]) -> List[SweepRecord]:
    """Run the task at every (scale, batch size, repeat) cell on the scale
    prefix of ``rel``, scoring against the rule oracle. Malformed output and
    timeouts are failed runs with quality 0, never aborting the sweep."""
    if rel.row_count < max(cfg.scales):
        raise LroError(
            f"relation has {rel.row_count} rows, below the maximum scale {max(cfg.scales)}"
        )
    requirement = Requirement(cfg.requirement_text())
    records: List[SweepRecord] = []
    for scale in cfg.scales:
        prefix = take(rel, scale)
        truth = rule_ground_truth(cfg.task, prefix, cfg.date_column)
        for batch in cfg.batch_sizes:
            variant = _variant_for(batch)
            for repeat in range(cfg.repeats):
                engine = make_engine()
                if cfg.timeout_seconds is not None:
                    engine.gateway.cfg.timeout_seconds = cfg.timeout_seconds
                engine.gateway.start_query()
                outcome = "ok"
                quality = 0.0
                try:
                    if cfg.task == SELECT_TASK:
                        result = lro_select(
                            engine, prefix, Granularity.ROW, requirement, variant
                        )
                        quality = _score_select(prefix, result, truth)
                    else:
                        result = lro_impute(
                            engine, prefix, Granularity.COLUMN, requirement, variant,
                            new_column=cfg.new_column,
                        )
                        quality = _score_impute(result, truth, cfg.new_column)
                except GatewayTimeout:
                    outcome = "timeout"
                except (MalformedOutputError, LroError, BackendError):
                    outcome = "malformed"
                ledger = engine.gateway.ledger
                dollars = 0.0
                if ledger.prices:
                    try:
                        dollars = ledger_cost(ledger)["total"]
                    except LroError:
                        dollars = 0.0
                records.append(SweepRecord(
                    scale=scale,
                    batch=batch_label(batch),
                    repeat=repeat,
                    quality=quality,
                    input_tokens=ledger.total_input_tokens(),
                    output_tokens=ledger.total_output_tokens(),
                    llm_calls=ledger.call_count(),
                    cost=dollars,
                    wall_time=engine.gateway.query_elapsed(),
                    outcome=outcome,
                ))
    return records


def _score_select(prefix: Relation, result: Relation, truth: RuleTruth) -> float:
    predicted_rows = {tuple(row) for row in result.rows}
    pred_indices = {
        i for i, row in enumerate(prefix.rows)
        if not truth.excluded[i] and tuple(row) in predicted_rows
    }
    truth_indices = {i for i, keep in enumerate(truth.mask) if keep}
    return prf(pred_indices, truth_indices).f1


def _score_impute(result: Relation, truth: RuleTruth, new_column: str) -> float:
    values = result.column_values(new_column)
    pred = [v for v, skip in zip(values, truth.excluded) if not skip]
    expected = [v for v, skip in zip(truth.values, truth.excluded) if not skip]
    if not expected:
        return 1.0
    return exact_match_ratio(pred, expected)


# --- quality-cost curve -----------------------------------------------------------------

@dataclass(frozen=True)
class CurvePoint:
    batch: str
    scale: int
    runs: int
    tokens_per_request: float
    mean_quality: float
    min_quality: float
    max_quality: float
    total_cost: float


def quality_cost_curve(records: Sequence[SweepRecord]) -> List[CurvePoint]:
    """Aggregate records per (batch, scale): mean tokens per request against
    quality spread, suitable for box-plot rendering by external tools."""
    if not records:
        raise LroError("no sweep records to aggregate")
    groups = {}
    for record in records:
        groups.setdefault((record.batch, record.scale), []).append(record)
    points = []
    for (batch, scale), group in sorted(groups.items(), key=lambda kv: (kv[0][1], kv[0][0])):
        calls = sum(r.llm_calls for r in group)
        tokens = sum(r.input_tokens for r in group)
        qualities = [r.quality for r in group]
        points.append(CurvePoint(
            batch=batch,
            scale=scale,
            runs=len(group),
            tokens_per_request=(tokens / calls) if calls else 0.0,
            mean_quality=sum(qualities) / len(qualities),
            min_quality=min(qualities),
            max_quality=max(qualities),
            total_cost=sum(r.cost for r in group),
        ))
    return points


SWEEP_CSV_COLUMNS = [
    "scale", "batch", "repeat", "quality", "input_tokens", "output_tokens",
    "llm_calls", "cost", "wall_time", "outcome",
]
CURVE_CSV_COLUMNS = [
    "batch", "scale", "runs", "tokens_per_request", "mean_quality",
    "min_quality", "max_quality", "total_cost",
]


def sweep_to_csv(records: Sequence[SweepRecord]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(SWEEP_CSV_COLUMNS)
    for r in records:
        writer.writerow([
            r.scale, r.batch, r.repeat, f"{r.quality:.6f}", r.input_tokens,
            r.output_tokens, r.llm_calls, f"{r.cost:.6f}", f"{r.wall_time:.6f}",
            r.outcome,
        ])
    return buf.getvalue()


def curve_to_csv(points: Sequence[CurvePoint]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CURVE_CSV_COLUMNS)
    for p in points:
        writer.writerow([
            p.batch, p.scale, p.runs, f"{p.tokens_per_request:.2f}",
            f"{p.mean_quality:.6f}", f"{p.min_quality:.6f}",
            f"{p.max_quality:.6f}", f"{p.total_cost:.6f}",
        ])
    return buf.getvalue()


def emit_sweep(records: Sequence[SweepRecord], directory: str) -> List[str]:
    os.makedirs(directory, exist_ok=True)
    sweep_path = os.path.join(directory, "sweep.csv")
    curve_path = os.path.join(directory, "curve.csv")
    with open(sweep_path, "w", encoding="utf-8", newline="") as fh:
        fh.write(sweep_to_csv(records))
    with open(curve_path, "w", encoding="utf-8", newline="") as fh:
        fh.write(curve_to_csv(quality_cost_curve(records)))
    return [sweep_path, curve_path]
