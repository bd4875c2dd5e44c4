"""Render a plan back to dialect text. parse_plan(render_plan(p)) is
structurally equal to p for every plan the parser can produce."""

from __future__ import annotations

from typing import List, Optional

from ..errors import LroError
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
from .parser import escape_literal


def _variant_suffix(variant) -> str:
    return f", {escape_literal(str(variant))}" if variant is not None else ""


def render_plan(plan: Plan) -> str:
    return _render(plan.root)


def _render(root: PlanNode) -> str:
    # Database-wide forms have no FROM and render as standalone calls.
    if isinstance(root, LroSelectNode) and root.child is None:
        return (
            f"LLM_SELECT('table', {escape_literal(root.requirement)}"
            f"{_variant_suffix(root.variant)});"
        )
    if isinstance(root, LroClusterNode) and root.child is None:
        return (
            f"LLM_CLUSTER('table', {escape_literal(root.requirement)}"
            f"{_variant_suffix(root.variant)});"
        )

    # Peel the chain into clause slots, top down.
    node = root
    limit: Optional[int] = None
    projection: Optional[tuple] = None
    order_text: Optional[str] = None
    group_text: Optional[str] = None
    imputes: List[LroImputeColumnNode] = []
    filters: List[str] = []
    join_text: Optional[str] = None

    if isinstance(node, Limit):
        limit = node.n
        node = node.child
    if isinstance(node, Project):
        projection = node.columns
        node = node.child
    if isinstance(node, ClassicalOrderBy):
        order_text = f"{node.column} {node.direction.upper()}"
        node = node.child
    elif isinstance(node, LroOrderNode):
        order_text = (
            f"LLM_ORDER('row', {escape_literal(node.requirement)}"
            f"{_variant_suffix(node.variant)})"
        )
        node = node.child
    while isinstance(node, LroImputeColumnNode):
        imputes.append(node)
        node = node.child
    if isinstance(node, GroupBy):
        if (node.keys == (CLUSTER_LABEL_COLUMN,)
                and isinstance(node.child, LroClusterNode)
                and node.child.child is not None):
            cluster = node.child
            group_text = (
                f"LLM_CLUSTER({escape_literal(cluster.granularity.value)}, "
                f"{escape_literal(cluster.requirement)}{_variant_suffix(cluster.variant)})"
            )
            node = cluster.child
        else:
            group_text = ", ".join(node.keys)
            node = node.child
    while isinstance(node, (ClassicalFilter, LroSelectNode)) and not (
            isinstance(node, LroSelectNode) and isinstance(node.child, Scan)
            and node is root):
        if isinstance(node, ClassicalFilter):
            literal = (node.literal if node.literal.isdigit()
                       else escape_literal(node.literal))
            filters.append(f"{node.column} {node.op} {literal}")
        else:
            filters.append(
                f"LLM_SELECT({escape_literal(node.granularity.value)}, "
                f"{escape_literal(node.requirement)}{_variant_suffix(node.variant)})"
            )
        node = node.child
    if isinstance(node, LroMatchJoinNode):
        join_text = (
            f"JOIN {node.other} ON LLM_MATCH('cell', {escape_literal(node.left_key)}, "
            f"{escape_literal(node.right_key)}, {escape_literal(node.requirement)}"
            f"{_variant_suffix(node.variant)})"
        )
        node = node.child

    # A bare single-LRO chain renders in standalone call form.
    if node is root and isinstance(root, (LroSelectNode, LroClusterNode,
                                          LroOrderNode, LroImputeColumnNode,
                                          LroMatchJoinNode)):
        return _render_call(root)
    if not isinstance(node, Scan):
        raise LroError(f"plan shape not renderable at {type(node).__name__}")

    impute_items = [
        (
            f"LLM_IMPUTE({escape_literal(n.new_column)}, "
            f"{escape_literal(n.requirement)}{_variant_suffix(n.variant)})"
        )
        for n in reversed(imputes)
    ]
    if projection is None:
        select_list = ", ".join(["*"] + impute_items)
    else:
        by_column = {n.new_column: item for n, item in
                     zip(reversed(imputes), impute_items)}
        select_list = ", ".join(by_column.get(c, c) for c in projection)

    parts = [f"SELECT {select_list}", f"FROM {node.relation}"]
    if join_text:
        parts.append(join_text)
    if filters:
        parts.append("WHERE " + " AND ".join(reversed(filters)))
    if group_text:
        parts.append("GROUP BY " + group_text)
    if order_text:
        parts.append("ORDER BY " + order_text)
    if limit is not None:
        parts.append(f"LIMIT {limit}")
    return "\n".join(parts) + ";"


def _render_call(node: PlanNode) -> str:
    scan = node.child
    if isinstance(node, LroSelectNode):
        return (
            f"LLM_SELECT({scan.relation}, {escape_literal(node.granularity.value)}, "
            f"{escape_literal(node.requirement)}{_variant_suffix(node.variant)});"
        )
    if isinstance(node, LroClusterNode):
        return (
            f"LLM_CLUSTER({scan.relation}, {escape_literal(node.granularity.value)}, "
            f"{escape_literal(node.requirement)}{_variant_suffix(node.variant)});"
        )
    if isinstance(node, LroOrderNode):
        return (
            f"LLM_ORDER({scan.relation}, 'row', "
            f"{escape_literal(node.requirement)}{_variant_suffix(node.variant)});"
        )
    if isinstance(node, LroImputeColumnNode):
        return (
            f"LLM_IMPUTE({scan.relation}, 'column', {escape_literal(node.new_column)}, "
            f"{escape_literal(node.requirement)}{_variant_suffix(node.variant)});"
        )
    if isinstance(node, LroMatchJoinNode):
        return (
            f"LLM_MATCH({scan.relation}, {node.other}, 'cell', "
            f"{escape_literal(node.left_key)}, {escape_literal(node.right_key)}, "
            f"{escape_literal(node.requirement)}{_variant_suffix(node.variant)});"
        )
    raise LroError(f"not a standalone-call node: {type(node).__name__}")
