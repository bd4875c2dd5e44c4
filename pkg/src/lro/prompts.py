"""Prompt construction and completion parsing for every operator variant.

Prompt text lives in template files (``$name`` placeholders, directory
configurable); building is a pure function of its inputs, so identical
inputs yield byte-identical prompts. Completions are parsed by extracting
the LAST JSON object/array in the text, which makes chain-of-thought
preambles and fenced output equally acceptable.
"""

from __future__ import annotations

import json
import os
import string
from dataclasses import dataclass, field
from typing import Dict, Optional, Sequence, Tuple

from .errors import LroError, MalformedOutputError
from .gateway import ChatRequest
from .relation import CellRef, ColumnRef, Database, Element, RowRef, TableRef

DEFAULT_TEMPLATE_DIR = os.path.join(os.path.dirname(__file__), "templates")

COT_INSTRUCTION = (
    "Reason step by step first, then give the JSON answer on the final line."
)
PLAIN_INSTRUCTION = "Answer with the JSON only, no other text."
REPAIR_REMINDER = (
    "\n\nYour previous answer was not valid for the required JSON shape. "
    "Answer again, ending with exactly the JSON value described above."
)


@dataclass(frozen=True)
class PromptOptions:
    cot: bool = False
    examples: bool = False
    example_count: int = 3
    null_marker: str = "NULL"

    def __post_init__(self):
        if self.examples and self.example_count < 1:
            raise LroError("example_count must be >= 1 when examples are enabled")


@dataclass(frozen=True)
class RenderStyle:
    """Context render_element needs beyond the element itself: the column
    names for row/cell elements and the database for table elements."""

    columns: Tuple[str, ...] = ()
    database: Optional[Database] = None


class TemplateSet:
    """Named prompt templates loaded from a directory of .txt files."""

    def __init__(self, directory: str = DEFAULT_TEMPLATE_DIR):
        self.directory = directory
        self._cache: Dict[str, string.Template] = {}

    def render(self, name: str, **values: str) -> str:
        if name not in self._cache:
            path = os.path.join(self.directory, name + ".txt")
            with open(path, "r", encoding="utf-8") as fh:
                self._cache[name] = string.Template(fh.read())
        return self._cache[name].substitute(**values)


def render_element(element: Element, style: RenderStyle,
                   opts: PromptOptions = PromptOptions()) -> str:
    """Deterministic one-line text form of a relational element."""
    if isinstance(element, RowRef):
        if style.columns and len(style.columns) == len(element.cells):
            pairs = [
                f"{name}: {opts.null_marker if cell is None else cell}"
                for name, cell in zip(style.columns, element.cells)
            ]
            return "; ".join(pairs)
        return "; ".join(opts.null_marker if c is None else c for c in element.cells)
    if isinstance(element, ColumnRef):
        if not opts.examples:
            return element.name
        samples = [v for v in element.values if v is not None][: opts.example_count]
        rendered = ", ".join(f'"{v}"' for v in samples)
        return f"{element.name} (examples: {rendered})" if samples else element.name
    if isinstance(element, CellRef):
        return opts.null_marker if element.value is None else element.value
    if isinstance(element, TableRef):
        if not (opts.examples and style.database is not None):
            return element.name
        rel = style.database.get(element.name)
        schema = ", ".join(rel.columns)
        sample_rows = []
        for row in rel.rows[: opts.example_count]:
            sample_rows.append(
                "; ".join(opts.null_marker if c is None else c for c in row)
            )
        samples = " | ".join(sample_rows)
        if samples:
            return f"{element.name} (columns: {schema}; sample rows: {samples})"
        return f"{element.name} (columns: {schema})"
    raise LroError(f"cannot render element {element!r}")


def numbered(lines: Sequence[str]) -> str:
    return "\n".join(f"{i}. {line}" for i, line in enumerate(lines))


@dataclass
class PromptBuilder:
    """Builds the ChatRequest for every (operator, variant) combination."""

    templates: TemplateSet = field(default_factory=TemplateSet)

    def _request(self, template: str, tag: str, opts: PromptOptions, **values) -> ChatRequest:
        instruction = COT_INSTRUCTION if opts.cot else PLAIN_INSTRUCTION
        user = self.templates.render(template, answer_instruction=instruction, **values)
        system = self.templates.render("system")
        return ChatRequest(system=system, user=user, tag=tag)

    # Select ------------------------------------------------------------------

    def select_one(self, element: Element, style: RenderStyle, l: str,
                   opts: PromptOptions, tag: str) -> ChatRequest:
        return self._request(
            "select_one", tag, opts,
            requirement=l, candidate=render_element(element, style, opts),
        )

    def select_all(self, elements: Sequence[Element], style: RenderStyle, l: str,
                   opts: PromptOptions, tag: str) -> ChatRequest:
        lines = [render_element(e, style, opts) for e in elements]
        return self._request(
            "select_all", tag, opts, requirement=l, candidates=numbered(lines),
        )

    # Match -------------------------------------------------------------------

    def match_one(self, left: Element, right: Element, left_style: RenderStyle,
                  right_style: RenderStyle, l: str, opts: PromptOptions,
                  tag: str) -> ChatRequest:
        return self._request(
            "match_one", tag, opts, requirement=l,
            left=render_element(left, left_style, opts),
            right=render_element(right, right_style, opts),
        )

    def match_semi(self, left: Element, rights: Sequence[Element],
                   left_style: RenderStyle, right_style: RenderStyle, l: str,
                   opts: PromptOptions, tag: str) -> ChatRequest:
        lines = [render_element(e, right_style, opts) for e in rights]
        return self._request(
            "match_semi", tag, opts, requirement=l,
            left=render_element(left, left_style, opts),
            candidates=numbered(lines),
        )

    def match_all(self, lefts: Sequence[Element], rights: Sequence[Element],
                  left_style: RenderStyle, right_style: RenderStyle, l: str,
                  opts: PromptOptions, tag: str) -> ChatRequest:
        return self._request(
            "match_all", tag, opts, requirement=l,
            left_candidates=numbered([render_element(e, left_style, opts) for e in lefts]),
            right_candidates=numbered([render_element(e, right_style, opts) for e in rights]),
        )

    # Impute ------------------------------------------------------------------

    def impute_cell_one(self, column: str, row_text: str, l: str,
                        opts: PromptOptions, tag: str) -> ChatRequest:
        return self._request(
            "impute_cell_one", tag, opts, requirement=l,
            column=column, row=row_text,
        )

    def impute_cell_many(self, blanks: Sequence[str], l: str,
                         opts: PromptOptions, tag: str) -> ChatRequest:
        return self._request(
            "impute_cell_many", tag, opts, requirement=l,
            blanks=numbered(blanks),
        )

    def impute_column_one(self, new_column: str, row_text: str, l: str,
                          opts: PromptOptions, tag: str) -> ChatRequest:
        return self._request(
            "impute_column_one", tag, opts, requirement=l,
            column=new_column, row=row_text,
        )

    def impute_column_many(self, new_column: str, row_texts: Sequence[str], l: str,
                           opts: PromptOptions, tag: str) -> ChatRequest:
        return self._request(
            "impute_column_many", tag, opts, requirement=l,
            column=new_column, rows=numbered(row_texts),
        )

    def impute_row(self, columns: Sequence[str], sample_rows: Sequence[str], l: str,
                   ordinal: int, total: int, opts: PromptOptions, tag: str) -> ChatRequest:
        sample_text = "\n".join(sample_rows) if sample_rows else "(none)"
        return self._request(
            "impute_row", tag, opts, requirement=l,
            schema=", ".join(columns), samples=sample_text,
            ordinal=str(ordinal), total=str(total),
        )

    # Cluster -----------------------------------------------------------------

    def cluster_all(self, elements: Sequence[Element], style: RenderStyle, l: str,
                    opts: PromptOptions, tag: str) -> ChatRequest:
        lines = [render_element(e, style, opts) for e in elements]
        return self._request(
            "cluster_all", tag, opts, requirement=l, candidates=numbered(lines),
        )

    def cluster_one(self, element: Element, style: RenderStyle,
                    clusters: Sequence[Tuple[str, Sequence[str]]], l: str,
                    opts: PromptOptions, tag: str) -> ChatRequest:
        if clusters:
            lines = [
                f"- {label}: {', '.join(members)}" for label, members in clusters
            ]
            existing = "\n".join(lines)
        else:
            existing = "(no clusters yet)"
        return self._request(
            "cluster_one", tag, opts, requirement=l,
            clusters=existing, candidate=render_element(element, style, opts),
        )

    # Order -------------------------------------------------------------------

    def order_all(self, elements: Sequence[Element], style: RenderStyle, l: str,
                  opts: PromptOptions, tag: str) -> ChatRequest:
        lines = [render_element(e, style, opts) for e in elements]
        return self._request(
            "order_all", tag, opts, requirement=l, candidates=numbered(lines),
        )

    def order_pair(self, a: Element, b: Element, style: RenderStyle, l: str,
                   opts: PromptOptions, tag: str) -> ChatRequest:
        return self._request(
            "order_pair", tag, opts, requirement=l,
            first=render_element(a, style, opts),
            second=render_element(b, style, opts),
        )

    def order_score(self, element: Element, style: RenderStyle, l: str,
                    opts: PromptOptions, tag: str) -> ChatRequest:
        return self._request(
            "order_score", tag, opts, requirement=l,
            candidate=render_element(element, style, opts),
        )

    # Judge -------------------------------------------------------------------

    def judge(self, expected: str, actual: str, tag: str) -> ChatRequest:
        return self._request(
            "judge", tag, PromptOptions(), expected=expected, actual=actual,
        )


def build_prompt(kind: str, variant: str, payload: dict, l: str,
                 opts: PromptOptions, builder: Optional[PromptBuilder] = None,
                 tag: str = "") -> ChatRequest:
    """Single-entry prompt construction, routing on (kind, variant).

    ``payload`` carries the per-task pieces (see the PromptBuilder method
    of the same route for the exact keys): elements and their RenderStyle,
    the left/right sides for matching, the record text and column names
    for imputation, the cluster summaries for iterative clustering.
    """
    builder = builder if builder is not None else PromptBuilder()
    style = payload.get("style", RenderStyle())
    if kind == "select":
        if variant == "one":
            return builder.select_one(payload["element"], style, l, opts, tag)
        return builder.select_all(payload["elements"], style, l, opts, tag)
    if kind == "match":
        left_style = payload.get("left_style", style)
        right_style = payload.get("right_style", style)
        if variant == "one":
            return builder.match_one(payload["left"], payload["right"],
                                     left_style, right_style, l, opts, tag)
        if variant == "semi":
            return builder.match_semi(payload["left"], payload["rights"],
                                      left_style, right_style, l, opts, tag)
        return builder.match_all(payload["lefts"], payload["rights"],
                                 left_style, right_style, l, opts, tag)
    if kind == "impute":
        if "blanks" in payload:
            return builder.impute_cell_many(payload["blanks"], l, opts, tag)
        if "blank_column" in payload:
            return builder.impute_cell_one(payload["blank_column"], payload["row"],
                                           l, opts, tag)
        if "rows" in payload:
            return builder.impute_column_many(payload["column"], payload["rows"],
                                              l, opts, tag)
        if "row" in payload:
            return builder.impute_column_one(payload["column"], payload["row"],
                                             l, opts, tag)
        return builder.impute_row(payload["columns"], payload.get("samples", []),
                                  l, payload.get("ordinal", 1),
                                  payload.get("total", 1), opts, tag)
    if kind == "cluster":
        if variant == "one":
            return builder.cluster_one(payload["element"], style,
                                       payload.get("clusters", []), l, opts, tag)
        return builder.cluster_all(payload["elements"], style, l, opts, tag)
    if kind == "order":
        if variant in ("pair", "sort"):
            return builder.order_pair(payload["first"], payload["second"],
                                      style, l, opts, tag)
        if variant == "score":
            return builder.order_score(payload["element"], style, l, opts, tag)
        return builder.order_all(payload["elements"], style, l, opts, tag)
    raise LroError(f"unknown prompt route {kind!r}/{variant!r}")


def with_repair_reminder(req: ChatRequest) -> ChatRequest:
    return ChatRequest(system=req.system, user=req.user + REPAIR_REMINDER, tag=req.tag)


# --- parsing ----------------------------------------------------------------------

@dataclass(frozen=True)
class ParsedVerdict:
    value: bool
    raw: str


@dataclass(frozen=True)
class ParsedIndexList:
    indices: Tuple[int, ...]
    raw: str


@dataclass(frozen=True)
class ParsedPairList:
    pairs: Tuple[Tuple[int, int], ...]
    raw: str


@dataclass(frozen=True)
class ParsedAssignment:
    clusters: Tuple[Tuple[str, Tuple[int, ...]], ...]
    raw: str


@dataclass(frozen=True)
class ParsedRanking:
    order: Tuple[int, ...]
    complete: bool
    raw: str


@dataclass(frozen=True)
class ParsedScore:
    score: float
    raw: str


@dataclass(frozen=True)
class ParsedCells:
    values: Tuple[str, ...]
    raw: str


@dataclass(frozen=True)
class Shape:
    """Expected payload shape for parse(): kind plus candidate counts for
    bounds checking (n = candidates / left side, m = right side)."""

    kind: str
    n: int = 0
    m: int = 0


_VERDICT_KEYS = ("keep", "match", "identical", "verdict", "answer")


def extract_last_json(text: str):
    """Return the last top-level JSON object/array embedded in text."""
    decoder = json.JSONDecoder()
    found = None
    have = False
    i = 0
    while i < len(text):
        if text[i] in "{[":
            try:
                value, end = decoder.raw_decode(text, i)
            except ValueError:
                i += 1
                continue
            found = value
            have = True
            i = end
        else:
            i += 1
    if not have:
        raise MalformedOutputError(f"no JSON value found in completion: {text[:120]!r}")
    return found


def parse(shape: Shape, completion: str):
    payload = extract_last_json(completion)
    if shape.kind == "verdict":
        return _parse_verdict(payload, completion)
    if shape.kind == "index_list":
        return _parse_index_list(payload, shape.n, completion)
    if shape.kind == "pair_list":
        return _parse_pair_list(payload, shape.n, shape.m, completion)
    if shape.kind == "assignment":
        return _parse_assignment(payload, shape.n, completion)
    if shape.kind == "label":
        return _parse_label(payload, completion)
    if shape.kind == "ranking":
        return _parse_ranking(payload, shape.n, completion)
    if shape.kind == "winner":
        return _parse_winner(payload, completion)
    if shape.kind == "score":
        return _parse_score(payload, completion)
    if shape.kind == "cells":
        return _parse_cells(payload, shape.n, completion)
    if shape.kind == "cell":
        return _parse_cells(payload, 1, completion)
    raise LroError(f"unknown parse shape {shape.kind!r}")


def _parse_verdict(payload, raw: str) -> ParsedVerdict:
    if isinstance(payload, dict):
        for key in _VERDICT_KEYS:
            if key in payload:
                value = payload[key]
                if isinstance(value, bool):
                    return ParsedVerdict(value, raw)
                if isinstance(value, str) and value.strip().lower() in ("yes", "no", "true", "false"):
                    return ParsedVerdict(value.strip().lower() in ("yes", "true"), raw)
    raise MalformedOutputError(f"expected a boolean verdict object, got {payload!r}")


def _require_index(value, n: int) -> int:
    if isinstance(value, bool) or not isinstance(value, int):
        raise MalformedOutputError(f"expected an integer index, got {value!r}")
    if not 0 <= value < n:
        raise MalformedOutputError(f"index {value} out of bounds for {n} candidates")
    return value


def _parse_index_list(payload, n: int, raw: str) -> ParsedIndexList:
    if isinstance(payload, dict) and len(payload) == 1:
        payload = next(iter(payload.values()))
    if not isinstance(payload, list):
        raise MalformedOutputError(f"expected a JSON array of indices, got {payload!r}")
    indices = tuple(_require_index(v, n) for v in payload)
    return ParsedIndexList(indices, raw)


def _parse_pair_list(payload, n: int, m: int, raw: str) -> ParsedPairList:
    if isinstance(payload, dict) and len(payload) == 1:
        payload = next(iter(payload.values()))
    if not isinstance(payload, list):
        raise MalformedOutputError(f"expected a JSON array of [left, right] pairs, got {payload!r}")
    pairs = []
    for item in payload:
        if not isinstance(item, list) or len(item) != 2:
            raise MalformedOutputError(f"expected [left, right], got {item!r}")
        pairs.append((_require_index(item[0], n), _require_index(item[1], m)))
    return ParsedPairList(tuple(pairs), raw)


def _parse_assignment(payload, n: int, raw: str) -> ParsedAssignment:
    if isinstance(payload, dict) and "clusters" in payload:
        payload = payload["clusters"]
    if not isinstance(payload, list):
        raise MalformedOutputError(f"expected a cluster list, got {payload!r}")
    clusters = []
    for i, item in enumerate(payload):
        if not isinstance(item, dict) or "members" not in item:
            raise MalformedOutputError(f"expected {{label, members}} objects, got {item!r}")
        label = str(item.get("label", f"cluster_{i}"))
        members = item["members"]
        if not isinstance(members, list):
            raise MalformedOutputError(f"cluster members must be an array, got {members!r}")
        clusters.append((label, tuple(_require_index(v, n) for v in members)))
    return ParsedAssignment(tuple(clusters), raw)


def _parse_label(payload, raw: str) -> ParsedAssignment:
    if isinstance(payload, dict) and "cluster" in payload and isinstance(payload["cluster"], str):
        return ParsedAssignment(((payload["cluster"], (0,)),), raw)
    raise MalformedOutputError(f"expected {{\"cluster\": label}}, got {payload!r}")


def _parse_winner(payload, raw: str) -> ParsedIndexList:
    if isinstance(payload, dict) and "winner" in payload:
        return ParsedIndexList((_require_index(payload["winner"], 2),), raw)
    raise MalformedOutputError(f"expected {{\"winner\": 0|1}}, got {payload!r}")


def _parse_ranking(payload, n: int, raw: str) -> ParsedRanking:
    if isinstance(payload, dict) and "order" in payload:
        payload = payload["order"]
    if not isinstance(payload, list):
        raise MalformedOutputError(f"expected a ranking array, got {payload!r}")
    seen = set()
    order = []
    for value in payload:
        index = _require_index(value, n)
        if index not in seen:
            seen.add(index)
            order.append(index)
    return ParsedRanking(tuple(order), complete=(len(order) == n), raw=raw)


def _parse_score(payload, raw: str) -> ParsedScore:
    if isinstance(payload, dict) and "score" in payload:
        value = payload["score"]
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise MalformedOutputError(f"score must be numeric, got {value!r}")
        if not 0 <= float(value) <= 100:
            raise MalformedOutputError(f"score {value} outside [0, 100]")
        return ParsedScore(float(value), raw)
    raise MalformedOutputError(f"expected {{\"score\": value}}, got {payload!r}")


def _parse_cells(payload, n: int, raw: str) -> ParsedCells:
    if isinstance(payload, dict):
        for key in ("value", "values", "row", "cells"):
            if key in payload:
                payload = payload[key]
                break
        else:
            raise MalformedOutputError(f"expected cell value payload, got {payload!r}")
    if not isinstance(payload, list):
        payload = [payload]
    values = []
    for value in payload:
        if value is None:
            raise MalformedOutputError("cell value must not be null")
        if isinstance(value, bool):
            value = "true" if value else "false"
        values.append(value if isinstance(value, str) else str(value))
    if n and len(values) != n:
        raise MalformedOutputError(f"expected {n} cell value(s), got {len(values)}")
    return ParsedCells(tuple(values), raw)
