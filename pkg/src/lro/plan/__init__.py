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
    lro_nodes,
)
from .parser import parse_plan, validate_plan
from .render import render_plan
from .executor import PlanExecutionError, TraceEntry, execute

__all__ = [
    "CLUSTER_LABEL_COLUMN", "ClassicalFilter", "ClassicalOrderBy", "GroupBy",
    "Limit", "LroClusterNode", "LroImputeColumnNode", "LroMatchJoinNode",
    "LroOrderNode", "LroSelectNode", "Plan", "PlanNode", "PlanExecutionError",
    "Project", "Scan", "TraceEntry", "execute", "lro_nodes", "parse_plan",
    "render_plan", "validate_plan",
]
