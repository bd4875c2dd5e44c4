"""Quality metrics: set precision/recall/F1, cell exact-match and
LLM-judge ratios, partition agreement (adjusted Rand index, normalized
mutual information), ranking metrics (top-k hit rate, Kendall tau on the
hit set), and whole-table exact match.

Degenerate conventions, stated once: an empty prediction against non-empty
truth scores 0 (not undefined) and both-empty scores perfect; NMI
normalizes by the arithmetic mean of entropies with both-zero-entropy
defined as 1.0; tau is 1.0 when the hit set has at most one row.
"""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

from .errors import LroError
from .prompts import Shape
from .relation import Relation


def canonical(cell: Optional[str], case_fold: bool = False) -> Optional[str]:
    if cell is None:
        return None
    cell = cell.strip()
    return cell.casefold() if case_fold else cell


@dataclass(frozen=True)
class SetMetrics:
    precision: float
    recall: float
    f1: float


def prf(pred: Iterable, truth: Iterable) -> SetMetrics:
    pred, truth = set(pred), set(truth)
    overlap = len(pred & truth)
    if pred:
        precision = overlap / len(pred)
    else:
        precision = 1.0 if not truth else 0.0
    if truth:
        recall = overlap / len(truth)
    else:
        recall = 1.0 if not pred else 0.0
    f1 = 0.0 if precision + recall == 0 else 2 * precision * recall / (precision + recall)
    return SetMetrics(precision, recall, f1)


def exact_match_ratio(pred: Sequence[Optional[str]], truth: Sequence[Optional[str]],
                      case_fold: bool = False) -> float:
    if len(pred) != len(truth):
        raise LroError(f"cell list lengths differ: {len(pred)} vs {len(truth)}")
    if not pred:
        return 1.0
    hits = sum(
        1 for p, t in zip(pred, truth)
        if canonical(p, case_fold) == canonical(t, case_fold)
    )
    return hits / len(pred)


def llm_judge_score(pred: Sequence[Optional[str]], truth: Sequence[Optional[str]],
                    judge, task_model: str = "") -> float:
    """Fraction of positions the judge model deems semantically identical.

    ``judge`` is an LroEngine backed by a model different from the task
    model; exact (canonical) string equality short-circuits without a call.
    """
    if len(pred) != len(truth):
        raise LroError(f"cell list lengths differ: {len(pred)} vs {len(truth)}")
    judge_model = getattr(judge.gateway.backend, "model", judge.gateway.cfg.model)
    if task_model and judge_model == task_model:
        raise LroError(
            f"judge model {judge_model!r} must differ from the task model"
        )
    if not pred:
        return 1.0
    verdicts: List[Optional[bool]] = [None] * len(pred)
    pending: List[int] = []
    for i, (p, t) in enumerate(zip(pred, truth)):
        if canonical(p) == canonical(t):
            verdicts[i] = True
        else:
            pending.append(i)
    if pending:
        reqs = [
            judge.builder.judge(truth[i] or "", pred[i] or "", f"judge#{i}")
            for i in pending
        ]
        parsed = judge.ask_many(reqs, [Shape("verdict")] * len(pending))
        for i, verdict in zip(pending, parsed):
            verdicts[i] = verdict.value
    return sum(1 for v in verdicts if v) / len(pred)


# --- partition metrics ---------------------------------------------------------

def _partition_labels(pred, truth) -> Tuple[List[int], List[int]]:
    """Validate both partitions cover the same element set and return
    parallel per-element cluster labels."""
    pred_map: Dict = {}
    for label, members in enumerate(pred):
        for element in members:
            if element in pred_map:
                raise LroError(f"element {element!r} appears twice in the predicted partition")
            pred_map[element] = label
    truth_map: Dict = {}
    for label, members in enumerate(truth):
        for element in members:
            if element in truth_map:
                raise LroError(f"element {element!r} appears twice in the truth partition")
            truth_map[element] = label
    if set(pred_map) != set(truth_map):
        raise LroError("partitions cover different element sets")
    elements = list(pred_map)
    return [pred_map[e] for e in elements], [truth_map[e] for e in elements]


def _contingency(a: List[int], b: List[int]) -> Dict[Tuple[int, int], int]:
    table: Dict[Tuple[int, int], int] = {}
    for x, y in zip(a, b):
        table[(x, y)] = table.get((x, y), 0) + 1
    return table


def _comb2(x: int) -> int:
    return x * (x - 1) // 2


def ari(pred, truth) -> float:
    """Hubert-Arabie adjusted Rand index between two partitions."""
    a, b = _partition_labels(pred, truth)
    n = len(a)
    if n < 2:
        return 1.0
    table = _contingency(a, b)
    sum_ij = sum(_comb2(c) for c in table.values())
    sum_a = sum(_comb2(c) for c in Counter(a).values())
    sum_b = sum(_comb2(c) for c in Counter(b).values())
    total = _comb2(n)
    expected = sum_a * sum_b / total
    maximum = (sum_a + sum_b) / 2
    if maximum == expected:
        # Both all-singletons or both one cluster: identical by construction.
        return 1.0
    return (sum_ij - expected) / (maximum - expected)


def nmi(pred, truth) -> float:
    """Mutual information normalized by the arithmetic mean of entropies."""
    a, b = _partition_labels(pred, truth)
    n = len(a)
    if n == 0:
        raise LroError("nmi needs at least one element")
    table = _contingency(a, b)
    counts_a = Counter(a)
    counts_b = Counter(b)
    h_a = -sum((c / n) * math.log(c / n) for c in counts_a.values())
    h_b = -sum((c / n) * math.log(c / n) for c in counts_b.values())
    if h_a == 0.0 and h_b == 0.0:
        return 1.0
    mi = 0.0
    for (x, y), c in table.items():
        mi += (c / n) * math.log((c * n) / (counts_a[x] * counts_b[y]))
    return mi / ((h_a + h_b) / 2)


# --- ranking metrics -----------------------------------------------------------

@dataclass(frozen=True)
class RankingTruth:
    rows: Tuple
    k: int

    def __init__(self, rows: Sequence, k: int):
        rows = tuple(tuple(r) for r in rows)
        if not 1 <= k <= len(rows):
            raise LroError(f"cutoff k={k} must be within 1..{len(rows)}")
        if len(set(rows)) != len(rows):
            raise LroError("ranking truth rows must be distinct")
        object.__setattr__(self, "rows", rows)
        object.__setattr__(self, "k", k)


def _check_permutation(pred: Sequence, truth: RankingTruth) -> List[Tuple]:
    pred = [tuple(r) for r in pred]
    if sorted(pred) != sorted(truth.rows):
        raise LroError("prediction is not a permutation of the truth rows")
    return pred


def hit_rate_at_k(pred: Sequence, truth: RankingTruth) -> float:
    pred = _check_permutation(pred, truth)
    top_pred = set(pred[: truth.k])
    top_truth = set(truth.rows[: truth.k])
    return len(top_pred & top_truth) / truth.k


def kendall_tau_on_hits(pred: Sequence, truth: RankingTruth) -> float:
    """Kendall tau over the hit set (rows in both top-k lists), comparing
    relative orders in prediction vs truth; 1.0 when the hit set has at
    most one row."""
    pred = _check_permutation(pred, truth)
    hits = set(pred[: truth.k]) & set(truth.rows[: truth.k])
    if len(hits) <= 1:
        return 1.0
    pred_rank = {row: i for i, row in enumerate(pred) if row in hits}
    truth_rank = {row: i for i, row in enumerate(truth.rows) if row in hits}
    ordered = sorted(hits, key=lambda row: pred_rank[row])
    concordant = discordant = 0
    for i in range(len(ordered)):
        for j in range(i + 1, len(ordered)):
            if truth_rank[ordered[i]] < truth_rank[ordered[j]]:
                concordant += 1
            else:
                discordant += 1
    return (concordant - discordant) / _comb2(len(ordered))


# --- table comparison ------------------------------------------------------------

def table_exact_match(pred: Relation, truth: Relation, order_sensitive: bool = True,
                      case_fold: bool = False) -> bool:
    """True iff schemas are equal and the row sequences (or multisets, when
    order does not matter) are equal under canonical cell comparison."""
    if [canonical(c) for c in pred.columns] != [canonical(c) for c in truth.columns]:
        return False
    pred_rows = [tuple(canonical(c, case_fold) for c in row) for row in pred.rows]
    truth_rows = [tuple(canonical(c, case_fold) for c in row) for row in truth.rows]
    if order_sensitive:
        return pred_rows == truth_rows
    return Counter(pred_rows) == Counter(truth_rows)
