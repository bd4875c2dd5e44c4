"""Parser for the plan dialect: a small SQL subset with embedded LRO calls.

Two accepted forms (the grammar reference lives in docs/plan-grammar.md):
the standalone call form, whose first argument names the source relation,
and the embedded-clause form, where LRO calls appear inside SELECT
statements and inherit the relation from the enclosing FROM. String
literals are single- or double-quoted with backslash escapes. All errors
carry 1-based line/column positions.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import List, Optional, Tuple

from ..errors import ParseError
from ..operators import LroKind, Variant, VALID_PAIRINGS
from ..relation import Database, Granularity
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

KEYWORDS = {
    "select", "from", "where", "and", "order", "group", "by",
    "limit", "join", "on", "asc", "desc",
}
LRO_FUNCTIONS = {
    "llm_select", "llm_match", "llm_impute", "llm_cluster", "llm_order",
}
COMPARATORS = ("<=", ">=", "!=", "=", "<", ">")

_TOKEN_RE = re.compile(
    r"""
    (?P<ws>\s+)
  | (?P<number>\d+)
  | (?P<ident>[A-Za-z_][A-Za-z0-9_]*)
  | (?P<string>'(?:\\.|[^'\\])*'|"(?:\\.|[^"\\])*")
  | (?P<op><=|>=|!=|[=<>(),;*])
    """,
    re.VERBOSE,
)


@dataclass(frozen=True)
class Token:
    kind: str  # ident | keyword | string | number | op | eof
    value: str
    line: int
    column: int


def tokenize(text: str) -> List[Token]:
    tokens: List[Token] = []
    line, col = 1, 1
    pos = 0
    while pos < len(text):
        match = _TOKEN_RE.match(text, pos)
        if match is None:
            raise ParseError(f"unexpected character {text[pos]!r}", line, col)
        lexeme = match.group(0)
        if match.lastgroup == "ident":
            lowered = lexeme.lower()
            kind = "keyword" if lowered in KEYWORDS else "ident"
            tokens.append(Token(kind, lexeme, line, col))
        elif match.lastgroup == "string":
            tokens.append(Token("string", _unescape(lexeme), line, col))
        elif match.lastgroup == "number":
            tokens.append(Token("number", lexeme, line, col))
        elif match.lastgroup == "op":
            tokens.append(Token("op", lexeme, line, col))
        newlines = lexeme.count("\n")
        if newlines:
            line += newlines
            col = len(lexeme) - lexeme.rfind("\n")
        else:
            col += len(lexeme)
        pos = match.end()
    tokens.append(Token("eof", "", line, col))
    return tokens


def _unescape(quoted: str) -> str:
    body = quoted[1:-1]
    out = []
    i = 0
    while i < len(body):
        if body[i] == "\\" and i + 1 < len(body):
            out.append(body[i + 1])
            i += 2
        else:
            out.append(body[i])
            i += 1
    return "".join(out)


def escape_literal(text: str) -> str:
    return "'" + text.replace("\\", "\\\\").replace("'", "\\'") + "'"


class _Parser:
    def __init__(self, tokens: List[Token]):
        self.tokens = tokens
        self.pos = 0

    # token plumbing ---------------------------------------------------------

    def peek(self, offset: int = 0) -> Token:
        return self.tokens[min(self.pos + offset, len(self.tokens) - 1)]

    def advance(self) -> Token:
        token = self.tokens[self.pos]
        if token.kind != "eof":
            self.pos += 1
        return token

    def error(self, message: str, token: Optional[Token] = None):
        token = token or self.peek()
        raise ParseError(message, token.line, token.column)

    def expect(self, kind: str, value: Optional[str] = None) -> Token:
        token = self.peek()
        if token.kind != kind or (value is not None and token.value.lower() != value):
            want = value or kind
            self.error(f"expected {want!r}, found {token.value or 'end of input'!r}")
        return self.advance()

    def accept(self, kind: str, value: Optional[str] = None) -> Optional[Token]:
        token = self.peek()
        if token.kind == kind and (value is None or token.value.lower() == value):
            return self.advance()
        return None

    def at_function(self, *names: str) -> bool:
        token = self.peek()
        return token.kind == "ident" and token.value.lower() in names

    # entry points -------------------------------------------------------------

    def parse_plan(self) -> PlanNode:
        token = self.peek()
        if token.kind == "keyword" and token.value.lower() == "select":
            root = self.select_statement()
        elif token.kind == "ident" and token.value.lower() in LRO_FUNCTIONS:
            root = self.call_statement()
        else:
            self.error(f"expected SELECT or an LLM_* call, found {token.value!r}")
        self.accept("op", ";")
        if self.peek().kind != "eof":
            self.error(f"unexpected trailing input {self.peek().value!r}")
        return root

    # standalone call form -------------------------------------------------------

    def call_statement(self) -> PlanNode:
        name = self.advance().value.lower()
        self.expect("op", "(")
        if name == "llm_select":
            node = self._call_select()
        elif name == "llm_order":
            node = self._call_order()
        elif name == "llm_cluster":
            node = self._call_cluster()
        elif name == "llm_impute":
            node = self._call_impute()
        elif name == "llm_match":
            node = self._call_match()
        else:  # unreachable: gated by LRO_FUNCTIONS
            self.error(f"unknown function {name!r}")
        self.expect("op", ")")
        return node

    def _call_select(self) -> PlanNode:
        if self.peek().kind == "ident":
            relation = self.advance().value
            self.expect("op", ",")
            token = self.peek()
            g = self.granularity(LroKind.SELECT)
            if g is Granularity.TABLE:
                self.error(
                    "table-granularity LLM_SELECT works on the whole database; "
                    "omit the relation argument", token,
                )
            self.expect("op", ",")
            requirement = self.string("requirement")
            variant = self.optional_variant()
            return LroSelectNode(Scan(relation), g, requirement, variant)
        g = self.granularity(LroKind.SELECT)
        if g is not Granularity.TABLE:
            self.error("only table-granularity LLM_SELECT may omit the relation")
        self.expect("op", ",")
        requirement = self.string("requirement")
        variant = self.optional_variant()
        return LroSelectNode(None, g, requirement, variant)

    def _call_order(self) -> PlanNode:
        relation = self.expect("ident").value
        self.expect("op", ",")
        g = self.granularity(LroKind.ORDER)
        self.expect("op", ",")
        requirement = self.string("requirement")
        variant = self.optional_variant()
        del g  # row is the only accepted literal
        return LroOrderNode(Scan(relation), requirement, variant)

    def _call_cluster(self) -> PlanNode:
        if self.peek().kind == "ident":
            relation = self.advance().value
            self.expect("op", ",")
            token = self.peek()
            g = self.granularity(LroKind.CLUSTER)
            if g is Granularity.TABLE:
                self.error(
                    "table-granularity LLM_CLUSTER works on the whole database; "
                    "omit the relation argument", token,
                )
            self.expect("op", ",")
            requirement = self.string("requirement")
            variant = self.optional_variant()
            return LroClusterNode(Scan(relation), g, requirement, variant)
        g = self.granularity(LroKind.CLUSTER)
        if g is not Granularity.TABLE:
            self.error("only table-granularity LLM_CLUSTER may omit the relation")
        self.expect("op", ",")
        requirement = self.string("requirement")
        variant = self.optional_variant()
        return LroClusterNode(None, g, requirement, variant)

    def _call_impute(self) -> PlanNode:
        relation = self.expect("ident").value
        self.expect("op", ",")
        token = self.peek()
        g = self.string("granularity")
        if g.lower() != "column":
            self.error("the plan dialect supports column-wise LLM_IMPUTE only", token)
        self.expect("op", ",")
        new_column = self.string("new column name")
        self.expect("op", ",")
        requirement = self.string("requirement")
        variant = self.optional_variant()
        return LroImputeColumnNode(Scan(relation), new_column, requirement, variant)

    def _call_match(self) -> PlanNode:
        left = self.expect("ident").value
        self.expect("op", ",")
        right = self.expect("ident").value
        self.expect("op", ",")
        token = self.peek()
        g = self.string("granularity")
        if g.lower() != "cell":
            self.error("plan-level LLM_MATCH joins on cell granularity only", token)
        self.expect("op", ",")
        left_key = self.string("left key column")
        self.expect("op", ",")
        right_key = self.string("right key column")
        self.expect("op", ",")
        requirement = self.string("requirement")
        variant = self.optional_variant()
        return LroMatchJoinNode(Scan(left), right, left_key, right_key, requirement, variant)

    # embedded form -----------------------------------------------------------------

    def select_statement(self) -> PlanNode:
        self.expect("keyword", "select")
        star, items = self.select_list()
        self.expect("keyword", "from")
        node: PlanNode = Scan(self.expect("ident").value)

        if self.accept("keyword", "join"):
            other = self.expect("ident").value
            self.expect("keyword", "on")
            node = self.join_match(node, other)

        if self.accept("keyword", "where"):
            node = self.where_clause(node)

        if self.accept("keyword", "group"):
            self.expect("keyword", "by")
            node = self.group_clause(node)

        order_pending = None
        if self.accept("keyword", "order"):
            self.expect("keyword", "by")
            order_pending = self.order_clause()

        limit_pending = None
        if self.accept("keyword", "limit"):
            token = self.expect("number")
            limit_pending = int(token.value)

        # select-list imputes run before ORDER BY so ordering can reference
        # the generated column; projection runs after ordering.
        for new_column, requirement, variant in items:
            if requirement is not None:
                node = LroImputeColumnNode(node, new_column, requirement, variant)
        if order_pending is not None:
            node = order_pending(node)
        if not star:
            node = Project(node, tuple(name for name, _req, _var in items))
        if limit_pending is not None:
            node = Limit(node, limit_pending)
        return node

    def select_list(self) -> Tuple[bool, List[Tuple]]:
        """Returns (star, items); items are (column_name, requirement, variant)
        with requirement None for plain columns."""
        if self.accept("op", "*"):
            items = []
            while self.accept("op", ","):
                items.append(self.impute_item())
            return True, items
        items = [self.select_item()]
        while self.accept("op", ","):
            items.append(self.select_item())
        return False, items

    def select_item(self) -> Tuple:
        if self.at_function("llm_impute"):
            return self.impute_item()
        token = self.expect("ident")
        return (token.value, None, None)

    def impute_item(self) -> Tuple:
        if not self.at_function("llm_impute"):
            self.error("expected LLM_IMPUTE(...) in the select list")
        self.advance()
        self.expect("op", "(")
        new_column = self.string("new column name")
        self.expect("op", ",")
        requirement = self.string("requirement")
        variant = self.optional_variant()
        self.expect("op", ")")
        return (new_column, requirement, variant)

    def join_match(self, node: PlanNode, other: str) -> PlanNode:
        if not self.at_function("llm_match"):
            self.error("expected LLM_MATCH(...) after ON")
        self.advance()
        self.expect("op", "(")
        token = self.peek()
        g = self.string("granularity")
        if g.lower() != "cell":
            self.error("JOIN ... ON LLM_MATCH uses cell granularity only", token)
        self.expect("op", ",")
        left_key = self.string("left key column")
        self.expect("op", ",")
        right_key = self.string("right key column")
        self.expect("op", ",")
        requirement = self.string("requirement")
        variant = self.optional_variant()
        self.expect("op", ")")
        return LroMatchJoinNode(node, other, left_key, right_key, requirement, variant)

    def where_clause(self, node: PlanNode) -> PlanNode:
        predicates = [self.predicate()]
        while self.accept("keyword", "and"):
            predicates.append(self.predicate())
        # classical predicates first (stable), to spend LLM calls on fewer rows
        predicates.sort(key=lambda p: p[0] == "lro")
        for predicate in predicates:
            if predicate[0] == "classical":
                _, column, op, literal = predicate
                node = ClassicalFilter(node, column, op, literal)
            else:
                _, g, requirement, variant = predicate
                node = LroSelectNode(node, g, requirement, variant)
        return node

    def predicate(self) -> Tuple:
        if self.at_function("llm_select"):
            self.advance()
            self.expect("op", "(")
            token = self.peek()
            g = self.granularity(LroKind.SELECT)
            if g is Granularity.TABLE:
                self.error(
                    "table granularity needs the database; use the standalone call form",
                    token,
                )
            self.expect("op", ",")
            requirement = self.string("requirement")
            variant = self.optional_variant()
            self.expect("op", ")")
            return ("lro", g, requirement, variant)
        column = self.expect("ident").value
        token = self.peek()
        if token.kind != "op" or token.value not in COMPARATORS:
            self.error(f"expected a comparator, found {token.value!r}")
        op = self.advance().value
        value = self.peek()
        if value.kind == "string":
            literal = self.advance().value
        elif value.kind == "number":
            literal = self.advance().value
        else:
            self.error(f"expected a literal, found {value.value!r}")
        return ("classical", column, op, literal)

    def group_clause(self, node: PlanNode) -> PlanNode:
        if self.at_function("llm_cluster"):
            self.advance()
            self.expect("op", "(")
            token = self.peek()
            g = self.granularity(LroKind.CLUSTER)
            if g is Granularity.TABLE:
                self.error(
                    "table granularity needs the database; use the standalone call form",
                    token,
                )
            self.expect("op", ",")
            requirement = self.string("requirement")
            variant = self.optional_variant()
            self.expect("op", ")")
            node = LroClusterNode(node, g, requirement, variant)
            return GroupBy(node, (CLUSTER_LABEL_COLUMN,))
        keys = [self.expect("ident").value]
        while self.accept("op", ","):
            keys.append(self.expect("ident").value)
        return GroupBy(node, tuple(keys))

    def order_clause(self):
        if self.at_function("llm_order"):
            self.advance()
            self.expect("op", "(")
            self.granularity(LroKind.ORDER)
            self.expect("op", ",")
            requirement = self.string("requirement")
            variant = self.optional_variant()
            self.expect("op", ")")
            return lambda child: LroOrderNode(child, requirement, variant)
        column = self.expect("ident").value
        direction = "asc"
        if self.accept("keyword", "desc"):
            direction = "desc"
        elif self.accept("keyword", "asc"):
            direction = "asc"
        return lambda child: ClassicalOrderBy(child, column, direction)

    # shared argument helpers ----------------------------------------------------

    def string(self, what: str) -> str:
        token = self.peek()
        if token.kind != "string":
            self.error(f"expected a quoted {what}, found {token.value!r}")
        return self.advance().value

    def granularity(self, kind: LroKind) -> Granularity:
        token = self.peek()
        text = self.string("granularity")
        try:
            g = Granularity.parse(text)
        except Exception:
            self.error(f"invalid granularity literal {text!r}", token)
        if g not in VALID_PAIRINGS[kind]:
            self.error(
                f"{kind.value} is not defined at {g.value} granularity", token
            )
        return g

    def optional_variant(self) -> Optional[Variant]:
        if self.peek().kind == "op" and self.peek().value == "," \
                and self.peek(1).kind == "string":
            token = self.peek(1)
            self.advance()
            text = self.advance().value
            try:
                return Variant.parse(text)
            except Exception:
                self.error(f"invalid variant literal {text!r}", token)
        return None


def parse_plan(text: str, db: Optional[Database] = None) -> Plan:
    """Parse plan text; with a database, validate every referenced relation
    and column against it."""
    parser = _Parser(tokenize(text))
    root = parser.parse_plan()
    plan = Plan(root, db)
    if db is not None:
        validate_plan(plan, db)
    return plan


def validate_plan(plan: Plan, db: Database) -> None:
    """Static checks: relations exist; columns referenced by classical
    nodes exist in the schema available at that point of the chain."""
    from ..errors import SchemaError

    try:
        _columns_at(plan.root, db)
    except SchemaError as exc:
        raise ParseError(str(exc), 1, 1) from exc


def _columns_at(node: PlanNode, db: Database) -> Optional[List[str]]:
    """Schema flowing out of ``node``; None for database-wide sub-selects."""
    if isinstance(node, Scan):
        return list(db.get(node.relation).columns)
    if isinstance(node, (LroSelectNode, LroClusterNode)) and node.child is None:
        if node.granularity is Granularity.TABLE:
            return None
        raise ParseError("a plan without FROM supports table granularity only", 1, 1)

    columns = _columns_at(node.child, db)

    if isinstance(node, LroMatchJoinNode):
        right = db.get(node.other)
        if node.left_key not in columns:
            raise ParseError(f"unknown join key column {node.left_key!r}", 1, 1)
        right.column_index(node.right_key)
        taken = set(columns)
        for name in right.columns:
            renamed = name
            while renamed in taken:
                renamed = renamed + "_2"
            taken.add(renamed)
            columns.append(renamed)
        return columns
    if isinstance(node, ClassicalFilter):
        if node.column not in columns:
            raise ParseError(f"unknown column {node.column!r} in WHERE", 1, 1)
        return columns
    if isinstance(node, ClassicalOrderBy):
        if node.column not in columns:
            raise ParseError(f"unknown column {node.column!r} in ORDER BY", 1, 1)
        return columns
    if isinstance(node, GroupBy):
        for key in node.keys:
            if key not in columns:
                raise ParseError(f"unknown column {key!r} in GROUP BY", 1, 1)
        return columns
    if isinstance(node, LroImputeColumnNode):
        if node.new_column in columns:
            raise ParseError(f"imputed column {node.new_column!r} already exists", 1, 1)
        return columns + [node.new_column]
    if isinstance(node, LroClusterNode):
        if node.granularity is Granularity.ROW:
            return columns + [CLUSTER_LABEL_COLUMN]
        return ["element", CLUSTER_LABEL_COLUMN]
    if isinstance(node, LroSelectNode):
        return columns  # row keeps schema; column selection narrows at run time
    if isinstance(node, Project):
        missing = [c for c in node.columns if c not in columns]
        if missing:
            raise ParseError(f"unknown column(s) {missing} in SELECT list", 1, 1)
        return list(node.columns)
    if isinstance(node, (Limit, LroOrderNode)):
        return columns
    raise ParseError(f"unknown plan node {type(node).__name__}", 1, 1)
