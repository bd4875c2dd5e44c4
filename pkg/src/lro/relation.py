"""In-memory relational model: relations, databases, element extraction,
and the classical operations the plan executor composes with LLM-enhanced ones.

Cells are text or None. Relations are immutable after construction; every
operation returns a new relation, so values are safe to share across threads.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass
from enum import Enum
from typing import Iterable, Optional, Sequence, Union

from .errors import SchemaError, GranularityError

Cell = Optional[str]


class Granularity(Enum):
    CELL = "cell"
    ROW = "row"
    COLUMN = "column"
    TABLE = "table"

    @classmethod
    def parse(cls, text: str) -> "Granularity":
        try:
            return cls(text.strip().lower())
        except ValueError:
            raise GranularityError(f"unknown granularity {text!r}") from None


@dataclass(frozen=True)
class Relation:
    name: str
    columns: tuple
    rows: tuple

    def __init__(self, name: str, columns: Sequence[str], rows: Iterable[Sequence[Cell]]):
        cols = tuple(columns)
        if len(set(cols)) != len(cols):
            raise SchemaError(f"duplicate column names in relation {name!r}: {cols}")
        materialized = []
        for i, row in enumerate(rows):
            row = tuple(row)
            if len(row) != len(cols):
                raise SchemaError(
                    f"row {i} of relation {name!r} has {len(row)} cells, expected {len(cols)}"
                )
            materialized.append(row)
        object.__setattr__(self, "name", name)
        object.__setattr__(self, "columns", cols)
        object.__setattr__(self, "rows", tuple(materialized))

    @property
    def row_count(self) -> int:
        return len(self.rows)

    def column_index(self, column: str) -> int:
        try:
            return self.columns.index(column)
        except ValueError:
            raise SchemaError(f"relation {self.name!r} has no column {column!r}") from None

    def column_values(self, column: str) -> list:
        idx = self.column_index(column)
        return [row[idx] for row in self.rows]

    def to_csv(self, *, null_as: str = "") -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(self.columns)
        for row in self.rows:
            writer.writerow([null_as if cell is None else cell for cell in row])
        return buf.getvalue()

    def to_json(self) -> str:
        records = [dict(zip(self.columns, row)) for row in self.rows]
        return json.dumps(records, ensure_ascii=False, indent=2) + "\n"


@dataclass(frozen=True)
class Database:
    relations: tuple

    def __init__(self, relations: Iterable[Relation]):
        rels = tuple(relations)
        names = [r.name for r in rels]
        if len(set(names)) != len(names):
            raise SchemaError(f"duplicate relation names in database: {names}")
        object.__setattr__(self, "relations", rels)

    def get(self, name: str) -> Relation:
        for rel in self.relations:
            if rel.name == name:
                return rel
        raise SchemaError(f"database has no relation {name!r}")

    def names(self) -> list:
        return [r.name for r in self.relations]


# --- elements ---------------------------------------------------------------

@dataclass(frozen=True)
class CellRef:
    row: int
    col: int
    value: Cell


@dataclass(frozen=True)
class RowRef:
    row: int
    cells: tuple


@dataclass(frozen=True)
class ColumnRef:
    name: str
    values: tuple


@dataclass(frozen=True)
class TableRef:
    name: str


Element = Union[CellRef, RowRef, ColumnRef, TableRef]


def extract_elements(source, g: Granularity) -> list:
    """Enumerate the relational elements of ``source`` at granularity ``g``.

    Row/column/cell granularities require a Relation; table granularity a
    Database. Order is always source order (rows, then schema order for
    cells within a row).
    """
    if g is Granularity.TABLE:
        if not isinstance(source, Database):
            raise GranularityError("table granularity requires a Database source")
        return [TableRef(rel.name) for rel in source.relations]
    if not isinstance(source, Relation):
        raise GranularityError(f"{g.value} granularity requires a Relation source")
    if g is Granularity.ROW:
        return [RowRef(i, row) for i, row in enumerate(source.rows)]
    if g is Granularity.COLUMN:
        return [
            ColumnRef(name, tuple(row[j] for row in source.rows))
            for j, name in enumerate(source.columns)
        ]
    if g is Granularity.CELL:
        return [
            CellRef(i, j, cell)
            for i, row in enumerate(source.rows)
            for j, cell in enumerate(row)
        ]
    raise GranularityError(f"unsupported granularity {g!r}")


# --- classical operations ----------------------------------------------------

def project(rel: Relation, cols: Sequence[str]) -> Relation:
    indices = [rel.column_index(c) for c in cols]
    return Relation(rel.name, list(cols), [tuple(row[i] for i in indices) for row in rel.rows])


def filter_by_mask(rel: Relation, mask: Sequence[bool]) -> Relation:
    if len(mask) != rel.row_count:
        raise SchemaError(
            f"mask length {len(mask)} does not match row count {rel.row_count}"
        )
    return Relation(rel.name, rel.columns, [row for row, keep in zip(rel.rows, mask) if keep])


def apply_permutation(rel: Relation, perm: Sequence[int]) -> Relation:
    if sorted(perm) != list(range(rel.row_count)):
        raise SchemaError(f"{list(perm)} is not a permutation of 0..{rel.row_count - 1}")
    return Relation(rel.name, rel.columns, [rel.rows[i] for i in perm])


def take(rel: Relation, n: int) -> Relation:
    if n < 0:
        raise SchemaError(f"take count must be >= 0, got {n}")
    return Relation(rel.name, rel.columns, rel.rows[:n])


def group_rows(rel: Relation, key) -> list:
    """Partition rows into (group key, Relation) pairs.

    ``key`` is either a list of column names or a per-row label list.
    Groups appear in first-appearance order; row order inside a group is
    preserved.
    """
    key = list(key)
    all_columns = bool(key) and all(isinstance(k, str) and k in rel.columns for k in key)
    if all_columns:
        # If every entry is also a column name the column reading wins.
        indices = [rel.column_index(c) for c in key]
        labels = [tuple(row[i] for i in indices) for row in rel.rows]
    elif len(key) == rel.row_count:
        labels = key
    else:
        unknown = [k for k in key if not (isinstance(k, str) and k in rel.columns)]
        if unknown:
            raise SchemaError(
                f"unknown key column(s) {unknown} and label list length "
                f"{len(key)} does not match row count {rel.row_count}"
            )
        raise SchemaError(
            f"label list length {len(key)} does not match row count {rel.row_count}"
        )

    order: list = []
    buckets: dict = {}
    for row, label in zip(rel.rows, labels):
        if label not in buckets:
            buckets[label] = []
            order.append(label)
        buckets[label].append(row)
    return [(label, Relation(rel.name, rel.columns, buckets[label])) for label in order]


# --- ingestion ---------------------------------------------------------------

def load_relation(path, format: str = None, *, name: str = None,
                  empty_as_null: bool = True) -> Relation:
    """Load a relation from a CSV (RFC-4180 quoting) or JSON file.

    CSV: first row is the header; empty fields map to null unless
    ``empty_as_null`` is off. JSON: an array of flat objects whose keys
    become columns (first object fixes the order).
    """
    path = str(path)
    if format is None:
        format = "json" if path.lower().endswith(".json") else "csv"
    rel_name = name or _stem(path)
    with open(path, "r", encoding="utf-8", newline="") as fh:
        text = fh.read()
    return parse_relation(text, format, name=rel_name, empty_as_null=empty_as_null)


def parse_relation(text: str, format: str, *, name: str,
                   empty_as_null: bool = True) -> Relation:
    if format == "csv":
        reader = csv.reader(io.StringIO(text))
        rows = list(reader)
        if not rows:
            raise SchemaError(f"relation {name!r}: empty CSV input")
        header = rows[0]
        data = []
        for i, raw in enumerate(rows[1:]):
            if len(raw) != len(header):
                raise SchemaError(
                    f"relation {name!r}: row {i + 1} has {len(raw)} fields, expected {len(header)}"
                )
            if empty_as_null:
                data.append(tuple(None if cell == "" else cell for cell in raw))
            else:
                data.append(tuple(raw))
        return Relation(name, header, data)
    if format == "json":
        try:
            records = json.loads(text)
        except json.JSONDecodeError as exc:
            raise SchemaError(f"relation {name!r}: invalid JSON: {exc}") from exc
        if not isinstance(records, list) or not all(isinstance(r, dict) for r in records):
            raise SchemaError(f"relation {name!r}: expected a JSON array of flat objects")
        if not records:
            raise SchemaError(f"relation {name!r}: empty JSON array carries no schema")
        columns = list(records[0].keys())
        data = []
        for i, record in enumerate(records):
            if set(record.keys()) != set(columns):
                raise SchemaError(f"relation {name!r}: object {i} keys differ from header")
            data.append(tuple(_coerce_cell(record[c]) for c in columns))
        return Relation(name, columns, data)
    raise SchemaError(f"unknown relation format {format!r}")


def save_relation(rel: Relation, path, format: str = None) -> None:
    path = str(path)
    if format is None:
        format = "json" if path.lower().endswith(".json") else "csv"
    if format == "csv":
        payload = rel.to_csv()
    elif format == "json":
        payload = rel.to_json()
    else:
        raise SchemaError(f"unknown relation format {format!r}")
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(payload)


def load_database(directory) -> Database:
    """Load every .csv/.json file in a directory as one relation each."""
    import os

    entries = sorted(os.listdir(str(directory)))
    relations = []
    for entry in entries:
        if entry.lower().endswith((".csv", ".json")):
            relations.append(load_relation(os.path.join(str(directory), entry)))
    return Database(relations)


def _coerce_cell(value) -> Cell:
    if value is None:
        return None
    if isinstance(value, str):
        return value
    if isinstance(value, bool):
        return "true" if value else "false"
    return str(value)


def _stem(path: str) -> str:
    base = path.replace("\\", "/").rsplit("/", 1)[-1]
    return base.rsplit(".", 1)[0]
