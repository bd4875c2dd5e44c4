"""The five LLM-enhanced relational operators with all implementation
variants, plus the best-practice variant dispatcher.

Variants: ALL packs every candidate into one prompt; ONE prompts per
element (per pair for Match, i.e. a nested-loop join); SEMI prompts one
left element against all right candidates (semantic semi-join); BATCH(b)
chunks candidates, interpolating between ONE and ALL; Order adds PAIR
(exhaustive pairwise comparison), SORT (comparator-driven quicksort), and
SCORE (0-100 scoring).

Operators are sequential orchestrators: independent requests fan out
through the gateway's complete_many, which owns all parallelism.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from enum import Enum
from typing import Dict, List, Optional, Sequence, Tuple

from .errors import (
    ContextOverflowError,
    GranularityError,
    LroError,
    MalformedOutputError,
    VariantError,
)
from .gateway import ChatRequest, Gateway, estimate_tokens
from .prompts import (
    PromptBuilder,
    PromptOptions,
    RenderStyle,
    Shape,
    parse,
    render_element,
    with_repair_reminder,
)
from .relation import (
    CellRef,
    Database,
    Element,
    Granularity,
    Relation,
    apply_permutation,
    extract_elements,
    filter_by_mask,
    project,
)

log = logging.getLogger(__name__)


class LroKind(Enum):
    SELECT = "select"
    MATCH = "match"
    IMPUTE = "impute"
    CLUSTER = "cluster"
    ORDER = "order"

    @classmethod
    def parse(cls, text: str) -> "LroKind":
        try:
            return cls(text.strip().lower())
        except ValueError:
            raise LroError(f"unknown operator kind {text!r}") from None


@dataclass(frozen=True)
class Variant:
    name: str
    batch_size: Optional[int] = None

    def __str__(self) -> str:
        if self.name == "batch":
            return f"batch:{self.batch_size}"
        return self.name

    @staticmethod
    def batch(size: int) -> "Variant":
        if size < 1:
            raise VariantError(f"batch size must be >= 1, got {size}")
        return Variant("batch", size)

    @classmethod
    def parse(cls, text: str) -> "Variant":
        text = text.strip().lower()
        if text.startswith("batch:"):
            try:
                return cls.batch(int(text.split(":", 1)[1]))
            except ValueError:
                raise VariantError(f"bad batch size in {text!r}") from None
        if text in ("all", "one", "semi", "pair", "sort", "score"):
            return cls(text)
        raise VariantError(f"unknown variant {text!r}")


ALL = Variant("all")
ONE = Variant("one")
SEMI = Variant("semi")
PAIR = Variant("pair")
SORT = Variant("sort")
SCORE = Variant("score")

VALID_PAIRINGS: Dict[LroKind, frozenset] = {
    LroKind.SELECT: frozenset({Granularity.ROW, Granularity.COLUMN, Granularity.TABLE}),
    LroKind.MATCH: frozenset({Granularity.CELL, Granularity.ROW, Granularity.COLUMN}),
    LroKind.IMPUTE: frozenset({Granularity.CELL, Granularity.ROW, Granularity.COLUMN}),
    LroKind.CLUSTER: frozenset({Granularity.ROW, Granularity.COLUMN, Granularity.TABLE}),
    LroKind.ORDER: frozenset({Granularity.ROW}),
}

VALID_VARIANTS: Dict[LroKind, frozenset] = {
    LroKind.SELECT: frozenset({"all", "one", "batch"}),
    LroKind.MATCH: frozenset({"all", "one", "semi"}),
    LroKind.IMPUTE: frozenset({"all", "one", "batch"}),
    LroKind.CLUSTER: frozenset({"all", "one"}),
    LroKind.ORDER: frozenset({"all", "pair", "sort", "score"}),
}

_BEST_PRACTICE: Dict[Tuple[LroKind, Granularity], Variant] = {
    (LroKind.SELECT, Granularity.ROW): ONE,
    (LroKind.SELECT, Granularity.COLUMN): ALL,
    (LroKind.SELECT, Granularity.TABLE): ALL,
    (LroKind.MATCH, Granularity.CELL): ALL,
    (LroKind.MATCH, Granularity.ROW): SEMI,
    (LroKind.MATCH, Granularity.COLUMN): ALL,
    (LroKind.IMPUTE, Granularity.CELL): ALL,
    (LroKind.IMPUTE, Granularity.ROW): ONE,
    (LroKind.IMPUTE, Granularity.COLUMN): ONE,
    (LroKind.CLUSTER, Granularity.ROW): ALL,
    (LroKind.CLUSTER, Granularity.COLUMN): ALL,
    (LroKind.CLUSTER, Granularity.TABLE): ALL,
    (LroKind.ORDER, Granularity.ROW): ALL,
}


def best_practice_variant(kind: LroKind, g: Granularity) -> Variant:
    """The empirically preferred variant for a defined (kind, granularity)."""
    try:
        return _BEST_PRACTICE[(kind, g)]
    except KeyError:
        raise GranularityError(
            f"no best practice: {kind.value}/{g.value} is an undefined pairing"
        ) from None


def check_pairing(kind: LroKind, g: Granularity) -> None:
    if g not in VALID_PAIRINGS[kind]:
        raise GranularityError(
            f"{kind.value} is not defined at {g.value} granularity"
        )


def check_variant(kind: LroKind, variant: Variant) -> None:
    if variant.name not in VALID_VARIANTS[kind]:
        raise VariantError(
            f"variant {variant} is not valid for {kind.value}"
        )


@dataclass(frozen=True)
class Requirement:
    text: str

    def __post_init__(self):
        if not self.text.strip():
            raise LroError("requirement text must be non-empty")


@dataclass(frozen=True)
class MatchResult:
    """Deduplicated (left, right) element-index pairs plus the element lists
    they index into."""

    pairs: Tuple[Tuple[int, int], ...]
    left_elements: Tuple[Element, ...]
    right_elements: Tuple[Element, ...]

    def __init__(self, pairs, left_elements, right_elements):
        deduped = list(dict.fromkeys(tuple(p) for p in pairs))
        for li, ri in deduped:
            if not (0 <= li < len(left_elements) and 0 <= ri < len(right_elements)):
                raise LroError(f"match pair ({li}, {ri}) references missing elements")
        object.__setattr__(self, "pairs", tuple(deduped))
        object.__setattr__(self, "left_elements", tuple(left_elements))
        object.__setattr__(self, "right_elements", tuple(right_elements))


@dataclass(frozen=True)
class ClusterResult:
    """A partition of the extracted elements: disjoint clusters covering
    every element index, with one label per cluster."""

    clusters: Tuple[Tuple[int, ...], ...]
    labels: Tuple[str, ...]
    elements: Tuple[Element, ...]

    def validate(self) -> None:
        seen: set = set()
        for members in self.clusters:
            for index in members:
                if index in seen:
                    raise LroError(f"element {index} assigned to two clusters")
                seen.add(index)
        if seen != set(range(len(self.elements))):
            raise LroError("clusters do not cover the element set")
        if len(self.labels) != len(self.clusters):
            raise LroError("one label per cluster required")

    def label_per_element(self) -> List[str]:
        out = [""] * len(self.elements)
        for label, members in zip(self.labels, self.clusters):
            for index in members:
                out[index] = label
        return out


class LroEngine:
    """Binds a gateway and prompt builder; runs operators and collects
    warnings (repairs, degradations) for tracing."""

    def __init__(self, gateway: Gateway, builder: Optional[PromptBuilder] = None,
                 options: PromptOptions = PromptOptions()):
        self.gateway = gateway
        self.builder = builder if builder is not None else PromptBuilder()
        self.options = options
        self.warnings: List[str] = []

    def warn(self, message: str) -> None:
        self.warnings.append(message)
        log.warning(message)

    # parse-with-repair: one retry with a format reminder, then hard error.

    def ask(self, req: ChatRequest, shape: Shape):
        response = self.gateway.complete(req)
        try:
            return parse(shape, response.text)
        except MalformedOutputError:
            repaired = self.gateway.complete(with_repair_reminder(req))
            return parse(shape, repaired.text)

    def ask_many(self, reqs: Sequence[ChatRequest], shapes: Sequence[Shape]) -> list:
        responses = self.gateway.complete_many(list(reqs))
        parsed: list = [None] * len(reqs)
        failed: List[int] = []
        for i, response in enumerate(responses):
            try:
                parsed[i] = parse(shapes[i], response.text)
            except MalformedOutputError:
                failed.append(i)
        if failed:
            retries = self.gateway.complete_many(
                [with_repair_reminder(reqs[i]) for i in failed]
            )
            for j, i in enumerate(failed):
                parsed[i] = parse(shapes[i], retries[j].text)
        return parsed

    def fits_context(self, req: ChatRequest) -> bool:
        return estimate_tokens(req.system + req.user) <= self.gateway.cfg.max_context_tokens


def _style_for(source, g: Granularity) -> RenderStyle:
    if g is Granularity.TABLE:
        return RenderStyle(database=source)
    if g is Granularity.ROW:
        return RenderStyle(columns=source.columns)
    return RenderStyle()


def _chunks(items: Sequence, size: int) -> List[Sequence]:
    return [items[i:i + size] for i in range(0, len(items), size)]


# --- Select -----------------------------------------------------------------------

def lro_select(engine: LroEngine, source, g: Granularity, l: Requirement,
               variant: Optional[Variant] = None,
               opts: Optional[PromptOptions] = None):
    """Keep the elements of ``source`` at granularity ``g`` satisfying ``l``.

    Row -> filtered relation, column -> projected relation, table ->
    sub-database. Output element order follows input order.
    """
    check_pairing(LroKind.SELECT, g)
    variant = variant or best_practice_variant(LroKind.SELECT, g)
    check_variant(LroKind.SELECT, variant)
    opts = opts if opts is not None else engine.options

    elements = extract_elements(source, g)
    style = _style_for(source, g)
    keep = _select_mask(engine, elements, style, l, variant, opts, g)
    return _apply_keep_mask(source, g, keep)


def _select_mask(engine, elements, style, l, variant, opts, g) -> List[bool]:
    n = len(elements)
    if n == 0:
        return []
    tag_base = f"select/{g.value}/{variant}"
    if variant.name == "one":
        reqs = [
            engine.builder.select_one(e, style, l.text, opts, f"{tag_base}#{i}")
            for i, e in enumerate(elements)
        ]
        verdicts = engine.ask_many(reqs, [Shape("verdict")] * n)
        return [v.value for v in verdicts]

    if variant.name == "all":
        req = engine.builder.select_all(elements, style, l.text, opts, tag_base)
        if not engine.fits_context(req):
            fallback = _largest_fitting_batch(
                engine, elements,
                lambda chunk: engine.builder.select_all(chunk, style, l.text, opts, tag_base),
            )
            engine.warn(
                f"select/{g.value} ALL prompt exceeds the context budget; "
                f"degrading to BATCH({fallback})"
            )
            return _select_mask(engine, elements, style, l, Variant.batch(fallback), opts, g)
        parsed = engine.ask(req, Shape("index_list", n=n))
        kept = set(parsed.indices)
        return [i in kept for i in range(n)]

    # batch
    keep = [False] * n
    offset = 0
    for chunk_no, chunk in enumerate(_chunks(elements, variant.batch_size)):
        req = engine.builder.select_all(
            chunk, style, l.text, opts, f"{tag_base}#{chunk_no}"
        )
        parsed = engine.ask(req, Shape("index_list", n=len(chunk)))
        for index in parsed.indices:
            keep[offset + index] = True
        offset += len(chunk)
    return keep


def _largest_fitting_batch(engine, elements, build_chunk) -> int:
    size = len(elements)
    while size > 1:
        size = size // 2
        if all(engine.fits_context(build_chunk(chunk))
               for chunk in _chunks(elements, size)):
            return size
    if engine.fits_context(build_chunk(elements[:1])):
        return 1
    raise ContextOverflowError("a single element does not fit the context budget")


def _apply_keep_mask(source, g: Granularity, keep: List[bool]):
    if g is Granularity.ROW:
        return filter_by_mask(source, keep)
    if g is Granularity.COLUMN:
        kept = [name for name, k in zip(source.columns, keep) if k]
        return project(source, kept)
    return Database([rel for rel, k in zip(source.relations, keep) if k])


# --- Match ------------------------------------------------------------------------

def match_elements(rel: Relation, g: Granularity, key: Optional[str]) -> List[Element]:
    if g is Granularity.CELL:
        if key is None:
            raise LroError("cell-wise match needs a join-key column per side")
        col = rel.column_index(key)
        return [CellRef(i, col, row[col]) for i, row in enumerate(rel.rows)]
    return extract_elements(rel, g)


def lro_match(engine: LroEngine, r1: Relation, r2: Relation, g: Granularity,
              l: Requirement, variant: Optional[Variant] = None,
              opts: Optional[PromptOptions] = None,
              keys: Optional[Tuple[str, str]] = None) -> MatchResult:
    """Pair up elements of two relations that satisfy ``l``.

    Cell granularity matches the cells of the named key columns (one element
    per row, so join call counts stay literal).
    """
    check_pairing(LroKind.MATCH, g)
    variant = variant or best_practice_variant(LroKind.MATCH, g)
    check_variant(LroKind.MATCH, variant)
    opts = opts if opts is not None else engine.options
    if g is Granularity.CELL and keys is None:
        raise LroError("cell-wise match needs keys=(left column, right column)")

    lefts = match_elements(r1, g, keys[0] if keys else None)
    rights = match_elements(r2, g, keys[1] if keys else None)
    left_style = RenderStyle(columns=r1.columns)
    right_style = RenderStyle(columns=r2.columns)
    tag_base = f"match/{g.value}/{variant}"

    if not lefts or not rights:
        return MatchResult((), lefts, rights)

    pairs: List[Tuple[int, int]] = []
    if variant.name == "one":
        reqs = []
        index_pairs = []
        for i, left in enumerate(lefts):
            for j, right in enumerate(rights):
                reqs.append(engine.builder.match_one(
                    left, right, left_style, right_style, l.text, opts,
                    f"{tag_base}#{i},{j}",
                ))
                index_pairs.append((i, j))
        verdicts = engine.ask_many(reqs, [Shape("verdict")] * len(reqs))
        pairs = [ij for ij, v in zip(index_pairs, verdicts) if v.value]
    elif variant.name == "semi":
        reqs = [
            engine.builder.match_semi(
                left, rights, left_style, right_style, l.text, opts, f"{tag_base}#{i}"
            )
            for i, left in enumerate(lefts)
        ]
        results = engine.ask_many(
            reqs, [Shape("index_list", n=len(rights))] * len(reqs)
        )
        for i, parsed in enumerate(results):
            pairs.extend((i, j) for j in parsed.indices)
    else:  # all
        req = engine.builder.match_all(
            lefts, rights, left_style, right_style, l.text, opts, tag_base
        )
        parsed = engine.ask(req, Shape("pair_list", n=len(lefts), m=len(rights)))
        pairs = list(parsed.pairs)

    return MatchResult(pairs, lefts, rights)


def materialize_join(r1: Relation, r2: Relation, keys: Tuple[str, str],
                     m: MatchResult) -> Relation:
    """Join ``r1`` and ``r2`` on the matched key-cell pairs: matched cell
    pairs are lifted to their distinct value pairs, then nested-loop joined
    (cartesian within each value pair). Right columns are renamed with a
    ``_2`` suffix on collision."""
    left_key, right_key = keys
    lk = r1.column_index(left_key)
    rk = r2.column_index(right_key)

    value_pairs = []
    for li, ri in m.pairs:
        left, right = m.left_elements[li], m.right_elements[ri]
        if not isinstance(left, CellRef) or not isinstance(right, CellRef):
            raise LroError("materialize_join needs a cell-granularity MatchResult")
        if not (0 <= left.row < r1.row_count) or r1.rows[left.row][lk] != left.value:
            raise LroError(f"stale left element id {li}")
        if not (0 <= right.row < r2.row_count) or r2.rows[right.row][rk] != right.value:
            raise LroError(f"stale right element id {ri}")
        value_pairs.append((left.value, right.value))
    matched = set(value_pairs)

    taken = set(r1.columns)
    out_columns = list(r1.columns)
    for name in r2.columns:
        renamed = name
        while renamed in taken:
            renamed = renamed + "_2"
        taken.add(renamed)
        out_columns.append(renamed)

    out_rows = []
    for row1 in r1.rows:
        for row2 in r2.rows:
            if (row1[lk], row2[rk]) in matched:
                out_rows.append(row1 + row2)
    return Relation(f"{r1.name}_join_{r2.name}", out_columns, out_rows)


# --- Impute -----------------------------------------------------------------------

def lro_impute(engine: LroEngine, rel: Relation, g: Granularity, l: Requirement,
               variant: Optional[Variant] = None,
               opts: Optional[PromptOptions] = None,
               new_column: Optional[str] = None,
               row_count: Optional[int] = None) -> Relation:
    """Fill missing objects: cell -> replace nulls, column -> append one new
    column (named by ``new_column``), row -> append ``row_count`` generated
    rows. Pre-existing non-null cells are never touched."""
    check_pairing(LroKind.IMPUTE, g)
    variant = variant or best_practice_variant(LroKind.IMPUTE, g)
    check_variant(LroKind.IMPUTE, variant)
    opts = opts if opts is not None else engine.options

    if g is Granularity.CELL:
        return _impute_cells(engine, rel, l, variant, opts)
    if g is Granularity.COLUMN:
        if not new_column:
            raise LroError("column-wise impute needs the new column's name")
        if new_column in rel.columns:
            raise LroError(f"column {new_column!r} already exists")
        return _impute_column(engine, rel, new_column, l, variant, opts)
    # row
    if variant.name != "one":
        raise VariantError("row-wise impute supports the ONE variant only")
    if not row_count or row_count < 1:
        raise LroError("row-wise impute needs a positive row count")
    return _impute_rows(engine, rel, row_count, l, opts)


def _row_text(rel: Relation, row, opts: PromptOptions) -> str:
    return "; ".join(
        f"{name}: {opts.null_marker if cell is None else cell}"
        for name, cell in zip(rel.columns, row)
    )


def _impute_cells(engine, rel, l, variant, opts) -> Relation:
    blanks = [
        (i, j)
        for i, row in enumerate(rel.rows)
        for j, cell in enumerate(row)
        if cell is None
    ]
    if not blanks:
        raise LroError("cell-wise impute needs at least one null cell")
    tag_base = f"impute/cell/{variant}"

    if variant.name == "one":
        reqs = [
            engine.builder.impute_cell_one(
                rel.columns[j], _row_text(rel, rel.rows[i], opts), l.text, opts,
                f"{tag_base}#{i},{j}",
            )
            for i, j in blanks
        ]
        parsed = engine.ask_many(reqs, [Shape("cell")] * len(reqs))
        values = [p.values[0] for p in parsed]
    else:
        entry_texts = [
            f"column {rel.columns[j]} of record: {_row_text(rel, rel.rows[i], opts)}"
            for i, j in blanks
        ]
        if variant.name == "all":
            req = engine.builder.impute_cell_many(entry_texts, l.text, opts, tag_base)
            if not engine.fits_context(req):
                fallback = _largest_fitting_batch(
                    engine, entry_texts,
                    lambda chunk: engine.builder.impute_cell_many(chunk, l.text, opts, tag_base),
                )
                engine.warn(
                    f"impute/cell ALL prompt exceeds the context budget; "
                    f"degrading to BATCH({fallback})"
                )
                return _impute_cells(engine, rel, l, Variant.batch(fallback), opts)
            parsed = engine.ask(req, Shape("cells", n=len(entry_texts)))
            values = list(parsed.values)
        else:
            values = []
            for chunk_no, chunk in enumerate(_chunks(entry_texts, variant.batch_size)):
                req = engine.builder.impute_cell_many(
                    chunk, l.text, opts, f"{tag_base}#{chunk_no}"
                )
                parsed = engine.ask(req, Shape("cells", n=len(chunk)))
                values.extend(parsed.values)

    fills = dict(zip(blanks, values))
    new_rows = [
        tuple(
            fills.get((i, j), cell) if cell is None else cell
            for j, cell in enumerate(row)
        )
        for i, row in enumerate(rel.rows)
    ]
    return Relation(rel.name, rel.columns, new_rows)


def _impute_column(engine, rel, new_column, l, variant, opts) -> Relation:
    tag_base = f"impute/column/{variant}"
    row_texts = [_row_text(rel, row, opts) for row in rel.rows]

    if rel.row_count == 0:
        values: List[str] = []
    elif variant.name == "one":
        reqs = [
            engine.builder.impute_column_one(
                new_column, text, l.text, opts, f"{tag_base}#{i}"
            )
            for i, text in enumerate(row_texts)
        ]
        parsed = engine.ask_many(reqs, [Shape("cell")] * len(reqs))
        values = [p.values[0] for p in parsed]
    elif variant.name == "all":
        req = engine.builder.impute_column_many(new_column, row_texts, l.text, opts, tag_base)
        if not engine.fits_context(req):
            fallback = _largest_fitting_batch(
                engine, row_texts,
                lambda chunk: engine.builder.impute_column_many(
                    new_column, chunk, l.text, opts, tag_base
                ),
            )
            engine.warn(
                f"impute/column ALL prompt exceeds the context budget; "
                f"degrading to BATCH({fallback})"
            )
            return _impute_column(engine, rel, new_column, l, Variant.batch(fallback), opts)
        parsed = engine.ask(req, Shape("cells", n=len(row_texts)))
        values = list(parsed.values)
    else:
        values = []
        for chunk_no, chunk in enumerate(_chunks(row_texts, variant.batch_size)):
            req = engine.builder.impute_column_many(
                new_column, chunk, l.text, opts, f"{tag_base}#{chunk_no}"
            )
            parsed = engine.ask(req, Shape("cells", n=len(chunk)))
            values.extend(parsed.values)

    columns = list(rel.columns) + [new_column]
    rows = [row + (value,) for row, value in zip(rel.rows, values)]
    return Relation(rel.name, columns, rows)


def _impute_rows(engine, rel, row_count, l, opts) -> Relation:
    samples = (
        [_row_text(rel, row, opts) for row in rel.rows[: opts.example_count]]
        if opts.examples else []
    )
    reqs = [
        engine.builder.impute_row(
            rel.columns, samples, l.text, k + 1, row_count, opts, f"impute/row/one#{k}",
        )
        for k in range(row_count)
    ]
    parsed = engine.ask_many(reqs, [Shape("cells", n=len(rel.columns))] * row_count)
    new_rows = [tuple(p.values) for p in parsed]
    return Relation(rel.name, rel.columns, list(rel.rows) + new_rows)


# --- Cluster ----------------------------------------------------------------------

def lro_cluster(engine: LroEngine, source, g: Granularity, l: Requirement,
                variant: Optional[Variant] = None,
                opts: Optional[PromptOptions] = None) -> ClusterResult:
    """Partition the elements of ``source`` at granularity ``g`` guided by
    ``l``. Duplicate assignments keep their first cluster and omissions get
    a fresh singleton cluster, each with a recorded warning, so the result
    is always a valid partition."""
    check_pairing(LroKind.CLUSTER, g)
    variant = variant or best_practice_variant(LroKind.CLUSTER, g)
    check_variant(LroKind.CLUSTER, variant)
    opts = opts if opts is not None else engine.options

    elements = extract_elements(source, g)
    style = _style_for(source, g)
    n = len(elements)
    if n == 0:
        return ClusterResult((), (), ())
    tag_base = f"cluster/{g.value}/{variant}"

    if variant.name == "all":
        req = engine.builder.cluster_all(elements, style, l.text, opts, tag_base)
        parsed = engine.ask(req, Shape("assignment", n=n))
        raw_clusters = [(label, list(members)) for label, members in parsed.clusters]
    else:  # one: iterative assignment, prompts carry the clusters so far
        raw_clusters = []
        for i, element in enumerate(elements):
            summary = [
                (label, [render_element(elements[m], style, opts)
                         for m in members[: opts.example_count]])
                for label, members in raw_clusters
            ]
            req = engine.builder.cluster_one(
                element, style, summary, l.text, opts, f"{tag_base}#{i}"
            )
            parsed = engine.ask(req, Shape("label"))
            label = parsed.clusters[0][0]
            for existing_label, members in raw_clusters:
                if existing_label == label:
                    members.append(i)
                    break
            else:
                raw_clusters.append((label, [i]))

    return _repair_partition(engine, raw_clusters, elements)


def _repair_partition(engine, raw_clusters, elements) -> ClusterResult:
    seen: set = set()
    clusters: List[List[int]] = []
    labels: List[str] = []
    for label, members in raw_clusters:
        kept = []
        for index in members:
            if index in seen:
                engine.warn(f"cluster repair: element {index} assigned twice, keeping first")
                continue
            seen.add(index)
            kept.append(index)
        if kept:
            clusters.append(kept)
            labels.append(label)
    for index in range(len(elements)):
        if index not in seen:
            engine.warn(f"cluster repair: element {index} omitted, adding singleton")
            clusters.append([index])
            labels.append(f"singleton_{index}")
    result = ClusterResult(
        tuple(tuple(c) for c in clusters), tuple(labels), tuple(elements)
    )
    result.validate()
    return result


# --- Order ------------------------------------------------------------------------

def lro_order(engine: LroEngine, rel: Relation, l: Requirement,
              variant: Optional[Variant] = None,
              opts: Optional[PromptOptions] = None) -> Relation:
    """Sort rows by ``l``, best first. Output is always a permutation of the
    input rows. ALL ranks in one call; PAIR compares every pair and orders
    by wins; SORT runs a comparator-driven quicksort with memoized,
    deterministic comparisons; SCORE sorts by per-row 0-100 scores, ties
    broken by original row order."""
    variant = variant or best_practice_variant(LroKind.ORDER, Granularity.ROW)
    check_variant(LroKind.ORDER, variant)
    opts = opts if opts is not None else engine.options

    n = rel.row_count
    elements = extract_elements(rel, Granularity.ROW)
    style = RenderStyle(columns=rel.columns)
    tag_base = f"order/row/{variant}"
    if n == 0:
        return rel

    if variant.name == "all":
        req = engine.builder.order_all(elements, style, l.text, opts, tag_base)
        parsed = engine.ask(req, Shape("ranking", n=n))
        order = list(parsed.order)
        if not parsed.complete:
            missing = [i for i in range(n) if i not in set(order)]
            engine.warn(f"order ALL ranking missed rows {missing}; appended in input order")
            order.extend(missing)
        return apply_permutation(rel, order)

    if variant.name == "score":
        reqs = [
            engine.builder.order_score(e, style, l.text, opts, f"{tag_base}#{i}")
            for i, e in enumerate(elements)
        ]
        parsed = engine.ask_many(reqs, [Shape("score")] * n)
        order = sorted(range(n), key=lambda i: (-parsed[i].score, i))
        return apply_permutation(rel, order)

    if variant.name == "pair":
        reqs = []
        index_pairs = []
        for i in range(n):
            for j in range(i + 1, n):
                reqs.append(engine.builder.order_pair(
                    elements[i], elements[j], style, l.text, opts, f"{tag_base}#{i},{j}"
                ))
                index_pairs.append((i, j))
        results = engine.ask_many(reqs, [Shape("winner")] * len(reqs))
        wins = [0] * n
        for (i, j), parsed in zip(index_pairs, results):
            winner = i if parsed.indices[0] == 0 else j
            wins[winner] += 1
        order = sorted(range(n), key=lambda i: (-wins[i], i))
        return apply_permutation(rel, order)

    # sort: quicksort on a memoized LLM comparator. Each unordered pair is
    # asked at most once, in canonical (low index, high index) form, which
    # makes runs reproducible and bounds calls by C(n, 2).
    memo: Dict[Tuple[int, int], bool] = {}

    def before(i: int, j: int) -> bool:
        if i == j:
            return False
        a, b = (i, j) if i < j else (j, i)
        if (a, b) not in memo:
            req = engine.builder.order_pair(
                elements[a], elements[b], style, l.text, opts, f"{tag_base}#{a},{b}"
            )
            parsed = engine.ask(req, Shape("winner"))
            memo[(a, b)] = parsed.indices[0] == 0
        result = memo[(a, b)]
        return result if (i, j) == (a, b) else not result

    def quicksort(items: List[int]) -> List[int]:
        if len(items) <= 1:
            return items
        pivot = _median_of_three(items, before)
        rest = [x for x in items if x != pivot]
        left = [x for x in rest if before(x, pivot)]
        right = [x for x in rest if not before(x, pivot)]
        return quicksort(left) + [pivot] + quicksort(right)

    order = quicksort(list(range(n)))
    return apply_permutation(rel, order)


def _median_of_three(items: List[int], before) -> int:
    if len(items) < 3:
        return items[0]
    a, b, c = items[0], items[len(items) // 2], items[-1]
    if before(a, b):
        if before(b, c):
            return b
        return c if before(a, c) else a
    if before(a, c):
        return a
    return c if before(b, c) else b
