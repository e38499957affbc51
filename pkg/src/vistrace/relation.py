"""Relations: named, schema'd bundles of columns with stable ordinal row ids.

Base relations are frozen after CSV ingestion; every derived relation is
produced by an operator and is equally immutable. Row id i is simply the
ordinal position i, dense in [0, row_count).
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from typing import Any, Iterable, Sequence

import numpy as np

from .columns import Column, ColumnType, coerce_ingested, format_cell
from .errors import (
    DuplicateRelationError,
    RowIdOutOfRangeError,
    SchemaMismatchError,
    UnknownColumnError,
    UnknownRelationError,
)


@dataclass(frozen=True)
class Schema:
    """Ordered (name, type) pairs; names are unique."""

    fields: tuple[tuple[str, ColumnType], ...]

    def __post_init__(self):
        names = [n for n, _ in self.fields]
        if len(set(names)) != len(names):
            raise SchemaMismatchError(f"duplicate column names in schema: {names}")

    @classmethod
    def of(cls, *fields: tuple[str, ColumnType]) -> "Schema":
        return cls(tuple(fields))

    @property
    def names(self) -> list[str]:
        return [n for n, _ in self.fields]

    def type_of(self, name: str) -> ColumnType:
        for n, t in self.fields:
            if n == name:
                return t
        raise UnknownColumnError(f"no column {name!r} in schema {self.names}")

    def index(self, name: str) -> int:
        for i, (n, _) in enumerate(self.fields):
            if n == name:
                return i
        raise UnknownColumnError(f"no column {name!r} in schema {self.names}")

    def __contains__(self, name: str) -> bool:
        return any(n == name for n, _ in self.fields)

    def __len__(self) -> int:
        return len(self.fields)


class Relation:
    """A named columnar table, base or derived."""

    __slots__ = ("name", "schema", "columns", "kind")

    def __init__(self, name: str, schema: Schema, columns: list[Column], kind: str = "derived"):
        lengths = {len(c) for c in columns}
        if len(columns) != len(schema):
            raise SchemaMismatchError("column count does not match schema")
        if len(lengths) > 1:
            raise SchemaMismatchError(f"ragged column lengths {lengths}")
        self.name = name
        self.schema = schema
        self.columns = columns
        self.kind = kind

    @property
    def n_rows(self) -> int:
        return len(self.columns[0]) if self.columns else 0

    def col(self, name: str) -> Column:
        return self.columns[self.schema.index(name)]

    def take(self, rids: np.ndarray, name: str | None = None) -> "Relation":
        """Gather rows into a new relation (row ids relabel densely)."""
        cache: dict = {}  # columns sharing a pending index compose it once
        return Relation(name or self.name, self.schema, [c.take(rids, cache) for c in self.columns])

    def row(self, rid: int) -> tuple:
        return tuple(c.value_at(rid) for c in self.columns)

    def to_rows(self) -> list[tuple]:
        return [self.row(i) for i in range(self.n_rows)]

    @classmethod
    def from_rows(
        cls, name: str, schema: Schema, rows: Iterable[Sequence[Any]], kind: str = "derived"
    ) -> "Relation":
        rows = list(rows)
        cols = []
        for j, (_, ctype) in enumerate(schema.fields):
            cols.append(Column.from_values(ctype, [r[j] for r in rows]))
        if not schema.fields:
            raise SchemaMismatchError("relation needs at least one column")
        return cls(name, schema, cols, kind=kind)

    def to_csv_bytes(self) -> bytes:
        """Serialize with header, matching the ingestion format."""
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self.schema.names)
        types = [t for _, t in self.schema.fields]
        for i in range(self.n_rows):
            w.writerow([format_cell(c.value_at(i), t) for c, t in zip(self.columns, types)])
        return buf.getvalue().encode("utf-8")

    def __repr__(self) -> str:  # pragma: no cover - debugging aid
        return f"Relation({self.name!r}, rows={self.n_rows}, cols={self.schema.names})"


def ingest_csv(source: bytes | io.IOBase, schema: Schema, name: str) -> Relation:
    """Parse a headered CSV into a frozen base relation.

    Row id i corresponds to data line i (after the header). Empty cells
    become null. The header must match the schema's column names exactly.
    """
    if isinstance(source, bytes):
        text = io.StringIO(source.decode("utf-8"))
    elif isinstance(source, io.TextIOBase):
        text = source
    else:
        text = io.TextIOWrapper(source, encoding="utf-8")
    reader = csv.reader(text)
    try:
        header = next(reader)
    except StopIteration:
        raise SchemaMismatchError(f"{name}: empty file, expected a header row") from None
    if header != schema.names:
        raise SchemaMismatchError(f"{name}: header {header} does not match schema {schema.names}")
    raw_cols: list[list[Any]] = [[] for _ in schema.fields]
    types = [t for _, t in schema.fields]
    names = schema.names
    n_cols = len(names)
    for line_no, row in enumerate(reader, start=1):
        if len(row) != n_cols:
            raise SchemaMismatchError(
                f"{name}: line {line_no} has {len(row)} cells, expected {n_cols}"
            )
        for j in range(n_cols):
            raw_cols[j].append(coerce_ingested(types[j], row[j], line_no, names[j]))
    columns = [Column.from_values(t, vals) for t, vals in zip(types, raw_cols)]
    if not columns:
        raise SchemaMismatchError("schema declares no columns")
    return Relation(name, schema, columns, kind="base")


def as_rid_array(rids: Iterable[int] | np.ndarray, n_rows: int | None = None) -> np.ndarray:
    """Normalize a row-id collection to a sorted, unique int64 array."""
    if isinstance(rids, np.ndarray):
        arr = rids.astype(np.int64, copy=False)
        if arr.size and (np.any(np.diff(arr) <= 0)):
            arr = np.unique(arr)
    else:
        arr = np.array(sorted(set(int(r) for r in rids)), dtype=np.int64)
    if n_rows is not None and arr.size:
        if arr[0] < 0 or arr[-1] >= n_rows:
            raise RowIdOutOfRangeError(f"row id out of range for {n_rows}-row relation")
    return arr


def get_rows(rel: Relation, rids: Iterable[int] | np.ndarray) -> list[tuple]:
    """Materialize the given rows in ascending row-id order."""
    arr = as_rid_array(rids, rel.n_rows)
    return [rel.row(int(i)) for i in arr]


class Dataset:
    """A named, frozen collection of base relations."""

    def __init__(self, name: str = "dataset"):
        self.name = name
        self.relations: dict[str, Relation] = {}

    def ingest_csv(self, source: bytes | io.IOBase, schema: Schema, name: str) -> Relation:
        if name in self.relations:
            raise DuplicateRelationError(f"relation {name!r} already loaded")
        rel = ingest_csv(source, schema, name)
        self.relations[name] = rel
        return rel

    def add(self, rel: Relation) -> None:
        if rel.name in self.relations:
            raise DuplicateRelationError(f"relation {rel.name!r} already loaded")
        self.relations[rel.name] = rel

    def __getitem__(self, name: str) -> Relation:
        try:
            return self.relations[name]
        except KeyError:
            raise UnknownRelationError(f"no relation {name!r} in dataset") from None

    def __contains__(self, name: str) -> bool:
        return name in self.relations
