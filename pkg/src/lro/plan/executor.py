"""Bottom-up plan evaluation against a database, dispatching LRO nodes
through the operator layer and recording a per-node trace."""

from __future__ import annotations

from dataclasses import dataclass
from typing import List, Optional, Tuple

from ..errors import BackendError, LroError
from ..gateway import UsageLedger
from ..operators import (
    LroEngine,
    Requirement,
    lro_cluster,
    lro_impute,
    lro_match,
    lro_order,
    lro_select,
    materialize_join,
)
from ..relation import (
    Database,
    Granularity,
    Relation,
    filter_by_mask,
    group_rows,
    project,
    take,
)
from .nodes import (
    CLUSTER_LABEL_COLUMN,
    ClassicalFilter,
    ClassicalOrderBy,
    GroupBy,
    Limit,
    LroClusterNode,
    LroImputeColumnNode,
    LroMatchJoinNode,
    LroOrderNode,
    LroSelectNode,
    Plan,
    PlanNode,
    Project,
    Scan,
)

TABLE_LIST_COLUMN = "table"


class PlanExecutionError(LroError):
    def __init__(self, node: str, cause: Exception):
        super().__init__(f"at {node}: {cause}")
        self.node = node
        self.cause = cause


@dataclass(frozen=True)
class TraceEntry:
    node: str
    input_rows: int
    output_rows: int
    llm_calls: int


def execute(plan: Plan, db: Database, engine: LroEngine) -> Tuple[Relation, UsageLedger, List[TraceEntry]]:
    """Evaluate the plan bottom-up. Returns the result relation, the
    gateway's usage ledger, and one trace entry per node."""
    engine.gateway.start_query()
    trace: List[TraceEntry] = []
    result = _eval(plan.root, db, engine, trace)
    if isinstance(result, Database):
        result = _database_as_relation(result)
    return result, engine.gateway.ledger, trace


def _database_as_relation(sub: Database) -> Relation:
    return Relation("tables", [TABLE_LIST_COLUMN], [(name,) for name in sub.names()])


def _cardinality(value) -> int:
    if isinstance(value, Database):
        return len(value.relations)
    return value.row_count


def _eval(node: PlanNode, db: Database, engine: LroEngine, trace: List[TraceEntry]):
    child = getattr(node, "child", None)
    if child is not None:
        source = _eval(child, db, engine, trace)
    elif isinstance(node, Scan):
        source = None
    else:
        source = db  # database-wide table-granularity node

    before_calls = engine.gateway.ledger.call_count()
    input_cardinality = _cardinality(source) if source is not None else 0
    try:
        result = _apply(node, source, db, engine)
    except (BackendError, PlanExecutionError):
        raise
    except LroError as exc:
        raise PlanExecutionError(_describe(node), exc) from exc
    trace.append(TraceEntry(
        node=_describe(node),
        input_rows=input_cardinality,
        output_rows=_cardinality(result),
        llm_calls=engine.gateway.ledger.call_count() - before_calls,
    ))
    return result


def _describe(node: PlanNode) -> str:
    name = type(node).__name__
    if isinstance(node, Scan):
        return f"Scan({node.relation})"
    if isinstance(node, (LroSelectNode, LroClusterNode)):
        return f"{name}({node.granularity.value})"
    if isinstance(node, LroMatchJoinNode):
        return f"{name}({node.other})"
    if isinstance(node, LroImputeColumnNode):
        return f"{name}({node.new_column})"
    if isinstance(node, Project):
        return f"Project({', '.join(node.columns)})"
    if isinstance(node, Limit):
        return f"Limit({node.n})"
    return name


def _apply(node: PlanNode, source, db: Database, engine: LroEngine):
    if isinstance(node, Scan):
        return db.get(node.relation)

    if isinstance(node, Project):
        return project(source, list(node.columns))

    if isinstance(node, Limit):
        return take(source, node.n)

    if isinstance(node, ClassicalFilter):
        mask = [_matches(cell, node.op, node.literal)
                for cell in source.column_values(node.column)]
        return filter_by_mask(source, mask)

    if isinstance(node, ClassicalOrderBy):
        return _order_by_column(source, node.column, node.direction)

    if isinstance(node, GroupBy):
        groups = group_rows(source, list(node.keys))
        rows = [row for _key, block in groups for row in block.rows]
        return Relation(source.name, source.columns, rows)

    if isinstance(node, LroSelectNode):
        result = lro_select(
            engine, source, node.granularity, Requirement(node.requirement),
            node.variant,
        )
        return result

    if isinstance(node, LroMatchJoinNode):
        right = db.get(node.other)
        keys = (node.left_key, node.right_key)
        match = lro_match(
            engine, source, right, Granularity.CELL,
            Requirement(node.requirement), node.variant, keys=keys,
        )
        return materialize_join(source, right, keys, match)

    if isinstance(node, LroImputeColumnNode):
        return lro_impute(
            engine, source, Granularity.COLUMN, Requirement(node.requirement),
            node.variant, new_column=node.new_column,
        )

    if isinstance(node, LroClusterNode):
        result = lro_cluster(
            engine, source, node.granularity, Requirement(node.requirement),
            node.variant,
        )
        labels = result.label_per_element()
        if node.granularity is Granularity.ROW:
            if CLUSTER_LABEL_COLUMN in source.columns:
                raise LroError(
                    f"cannot attach label column: {CLUSTER_LABEL_COLUMN!r} already exists"
                )
            columns = list(source.columns) + [CLUSTER_LABEL_COLUMN]
            rows = [row + (label,) for row, label in zip(source.rows, labels)]
            return Relation(source.name, columns, rows)
        names = [
            element.name for element in result.elements
        ]
        return Relation(
            "clusters", ["element", CLUSTER_LABEL_COLUMN],
            list(zip(names, labels)),
        )

    if isinstance(node, LroOrderNode):
        return lro_order(engine, source, Requirement(node.requirement), node.variant)

    raise LroError(f"unknown plan node {type(node).__name__}")


def _matches(cell: Optional[str], op: str, literal: str) -> bool:
    if cell is None:
        return op == "!="
    try:
        a, b = float(cell), float(literal)
    except ValueError:
        a, b = cell, literal
    if op == "=":
        return a == b
    if op == "!=":
        return a != b
    if op == "<":
        return a < b
    if op == "<=":
        return a <= b
    if op == ">":
        return a > b
    if op == ">=":
        return a >= b
    raise LroError(f"unknown comparator {op!r}")


def _order_by_column(rel: Relation, column: str, direction: str) -> Relation:
    values = rel.column_values(column)
    numeric = True
    for value in values:
        if value is None:
            continue
        try:
            float(value)
        except ValueError:
            numeric = False
            break

    non_null = [i for i in range(rel.row_count) if values[i] is not None]
    nulls = [i for i in range(rel.row_count) if values[i] is None]
    non_null.sort(
        key=lambda i: float(values[i]) if numeric else values[i],
        reverse=(direction == "desc"),
    )
    order = non_null + nulls  # nulls last in either direction
    return Relation(rel.name, rel.columns, [rel.rows[i] for i in order])
