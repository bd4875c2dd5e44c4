"""Plan AST: a chain of nodes ending in a Scan leaf (or, for database-wide
table operations, a node with no child). All nodes are frozen dataclasses,
so structural equality is dataclass equality."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Tuple, Union

from ..operators import Variant
from ..relation import Granularity

CLUSTER_LABEL_COLUMN = "cluster"


@dataclass(frozen=True)
class Scan:
    relation: str


@dataclass(frozen=True)
class Project:
    child: "PlanNode"
    columns: Tuple[str, ...]


@dataclass(frozen=True)
class ClassicalFilter:
    child: "PlanNode"
    column: str
    op: str
    literal: str


@dataclass(frozen=True)
class LroSelectNode:
    child: Optional["PlanNode"]  # None: database-wide table selection
    granularity: Granularity
    requirement: str
    variant: Optional[Variant] = None


@dataclass(frozen=True)
class LroMatchJoinNode:
    child: "PlanNode"
    other: str
    left_key: str
    right_key: str
    requirement: str
    variant: Optional[Variant] = None


@dataclass(frozen=True)
class LroImputeColumnNode:
    child: "PlanNode"
    new_column: str
    requirement: str
    variant: Optional[Variant] = None


@dataclass(frozen=True)
class LroClusterNode:
    child: Optional["PlanNode"]  # None: database-wide table clustering
    granularity: Granularity
    requirement: str
    variant: Optional[Variant] = None


@dataclass(frozen=True)
class LroOrderNode:
    child: "PlanNode"
    requirement: str
    variant: Optional[Variant] = None


@dataclass(frozen=True)
class ClassicalOrderBy:
    child: "PlanNode"
    column: str
    direction: str = "asc"


@dataclass(frozen=True)
class GroupBy:
    child: "PlanNode"
    keys: Tuple[str, ...]


@dataclass(frozen=True)
class Limit:
    child: "PlanNode"
    n: int


PlanNode = Union[
    Scan, Project, ClassicalFilter, LroSelectNode, LroMatchJoinNode,
    LroImputeColumnNode, LroClusterNode, LroOrderNode, ClassicalOrderBy,
    GroupBy, Limit,
]


@dataclass(frozen=True)
class Plan:
    root: PlanNode
    database: Optional[object] = None  # the Database validated against, if any

    def __eq__(self, other):
        return isinstance(other, Plan) and self.root == other.root


def chain(node: PlanNode):
    """Yield nodes from the root down to the leaf."""
    while node is not None:
        yield node
        node = getattr(node, "child", None)


def lro_nodes(node: PlanNode):
    return [
        n for n in chain(node)
        if isinstance(n, (LroSelectNode, LroMatchJoinNode, LroImputeColumnNode,
                          LroClusterNode, LroOrderNode))
    ]
