"""Deterministic mock backends for tests: rule callbacks that answer each
operator's prompts by parsing the candidate text back out of them."""

from __future__ import annotations

import json
import re
from typing import Callable, Optional

from lro.gateway import BackendConfig, Gateway, MockBackend, MockScript, UsageLedger
from lro.operators import LroEngine
from lro.prompts import PromptOptions

ENTRY_RE = re.compile(r"^(\d+)\. (.*)$", re.MULTILINE)
CANDIDATE_RE = re.compile(r"Candidate:\n(.*?)\n\nOutput", re.DOTALL)
PAIR_RE = re.compile(r"Candidate 0:\n(.*?)\n\nCandidate 1:\n(.*?)\n\nOutput", re.DOTALL)
ITEM_RE = re.compile(r"Item A:\n(.*?)\n\nItem B:\n(.*?)\n\nOutput", re.DOTALL)
QUERY_RE = re.compile(r"Query item:\n(.*?)\n\nCandidates", re.DOTALL)
RECORD_RE = re.compile(r"^Record: (.*)$", re.MULTILINE)
NEW_COLUMN_RE = re.compile(r"^New column: (.*)$", re.MULTILINE)
MISSING_COLUMN_RE = re.compile(r"^Missing column: (.*)$", re.MULTILINE)


def engine_with(rules=None, responses=None, *, parallelism: int = 10,
                timeout: float = 1800.0, max_context: int = 20480,
                real_delay: float = 0.0, default_latency: float = 0.0,
                model: str = "mock", options: Optional[PromptOptions] = None,
                prices=None):
    """(LroEngine, MockBackend) wired to a scripted mock."""
    script = MockScript(
        responses=list(responses or []),
        rules=list(rules or []),
        default_latency=default_latency,
    )
    cfg = BackendConfig(
        model=model, parallelism=parallelism, timeout_seconds=timeout,
        max_context_tokens=max_context,
    )
    backend = MockBackend(script, model=model, real_delay=real_delay)
    gateway = Gateway(cfg, backend, UsageLedger(prices))
    engine = LroEngine(gateway, options=options or PromptOptions())
    return engine, backend


def select_rule(keep: Callable[[str], bool]):
    """Answers single-candidate and index-list select prompts consistently
    from one per-candidate predicate over the rendered text."""

    def rule(req):
        if not req.tag.startswith("select/"):
            return None
        if "/one" in req.tag:
            text = CANDIDATE_RE.search(req.user).group(1)
            return json.dumps({"keep": bool(keep(text))})
        indices = [int(m.group(1)) for m in ENTRY_RE.finditer(req.user)
                   if keep(m.group(2))]
        return json.dumps(indices)

    return rule


def match_rule(matches: Callable[[str, str], bool]):
    def rule(req):
        if not req.tag.startswith("match/"):
            return None
        if "/one" in req.tag:
            found = ITEM_RE.search(req.user)
            return json.dumps({"match": bool(matches(found.group(1), found.group(2)))})
        if "/semi" in req.tag:
            left = QUERY_RE.search(req.user).group(1)
            indices = [int(m.group(1)) for m in ENTRY_RE.finditer(req.user)
                       if matches(left, m.group(2))]
            return json.dumps(indices)
        # all: two numbered lists
        left_part, right_part = req.user.split("List B (addressed by index):")
        lefts = [(int(m.group(1)), m.group(2)) for m in ENTRY_RE.finditer(left_part)]
        rights = [(int(m.group(1)), m.group(2)) for m in ENTRY_RE.finditer(right_part)]
        pairs = [[i, j] for i, a in lefts for j, b in rights if matches(a, b)]
        return json.dumps(pairs)

    return rule


def order_rule(rank_of: Callable[[str], float]):
    """Realizes the fixed total order induced by ``rank_of`` (lower is
    better) across ALL, PAIR/SORT comparisons, and SCORE prompts."""

    def rule(req):
        tag = req.tag
        if tag.startswith("order/row/all"):
            entries = [(int(m.group(1)), rank_of(m.group(2)))
                       for m in ENTRY_RE.finditer(req.user)]
            order = [i for i, _rank in sorted(entries, key=lambda t: t[1])]
            return json.dumps({"order": order})
        if tag.startswith("order/row/pair") or tag.startswith("order/row/sort"):
            found = PAIR_RE.search(req.user)
            winner = 0 if rank_of(found.group(1)) <= rank_of(found.group(2)) else 1
            return json.dumps({"winner": winner})
        if tag.startswith("order/row/score"):
            text = CANDIDATE_RE.search(req.user).group(1)
            return json.dumps({"score": max(0, min(100, int(100 - rank_of(text))))})
        return None

    return rule


def impute_rule(value_of: Callable[[str, str], str]):
    """Answers cell/column impute prompts; ``value_of(column, record_text)``."""

    def rule(req):
        tag = req.tag
        if tag.startswith("impute/column/one"):
            column = NEW_COLUMN_RE.search(req.user).group(1)
            record = RECORD_RE.search(req.user).group(1)
            return json.dumps({"value": value_of(column, record)})
        if tag.startswith("impute/column/"):
            column = NEW_COLUMN_RE.search(req.user).group(1)
            values = [value_of(column, m.group(2)) for m in ENTRY_RE.finditer(req.user)]
            return json.dumps(values)
        if tag.startswith("impute/cell/one"):
            column = MISSING_COLUMN_RE.search(req.user).group(1)
            record = RECORD_RE.search(req.user).group(1)
            return json.dumps({"value": value_of(column, record)})
        if tag.startswith("impute/cell/"):
            values = []
            for m in ENTRY_RE.finditer(req.user):
                entry = m.group(2)
                column, record = entry.split(" of record: ", 1)
                values.append(value_of(column.removeprefix("column "), record))
            return json.dumps(values)
        return None

    return rule


def cluster_one_rule(label_of: Callable[[str], str]):
    def rule(req):
        if req.tag.startswith("cluster/") and "/one" in req.tag:
            text = CANDIDATE_RE.search(req.user).group(1)
            return json.dumps({"cluster": label_of(text)})
        return None

    return rule


def cluster_all_response(clusters) -> str:
    return json.dumps({
        "clusters": [{"label": label, "members": list(members)}
                     for label, members in clusters]
    })


def players_relation(n: int, filler: int = 60):
    """Synthetic roster with deterministic birthdates spread over 1985-1995,
    padded so prompts grow roughly ``filler`` chars per row."""
    from datetime import date, timedelta

    from lro.relation import Relation

    base = date(1985, 1, 1)
    rows = []
    for i in range(n):
        birthday = base + timedelta(days=(i * 97) % 3650)
        rows.append((f"p{i:04d}", birthday.isoformat(), "x" * filler))
    return Relation("players", ["name", "birthday", "note"], rows)
