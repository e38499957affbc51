"""Typed column vectors: numpy storage, null masks, and lazy dictionary encoding.

A column stores nulls out-of-band in a boolean mask (True = null) so the
payload array keeps a primitive dtype. Row gathers are lazy: `take` returns a
view (source column + pending row indices) and the payload is materialized on
first access, so a chain of filter/join gathers touches each payload array at
most once. Group-by and predicate evaluation lean on a per-column dictionary
encoding (sorted categories + codes) that is computed once on the source
column and propagated through views, which is what keeps re-aggregation over
row subsets cheap.
"""

from __future__ import annotations

import enum
import json
import math
from typing import Any, Iterable

import numpy as np

from .errors import CsvParseError, TypeMismatchError


class ColumnType(enum.Enum):
    INT64 = "int64"
    FLOAT64 = "float64"
    TEXT = "text"
    BOOL = "bool"
    POLYGONS = "polygons"

    @property
    def is_numeric(self) -> bool:
        return self in (ColumnType.INT64, ColumnType.FLOAT64)


_DTYPES = {
    ColumnType.INT64: np.int64,
    ColumnType.FLOAT64: np.float64,
    ColumnType.BOOL: np.bool_,
    ColumnType.TEXT: object,
    ColumnType.POLYGONS: object,
}

# Fill value stored at null positions; the mask is authoritative.
_NULL_FILL = {
    ColumnType.INT64: 0,
    ColumnType.FLOAT64: float("nan"),
    ColumnType.BOOL: False,
    ColumnType.TEXT: None,
    ColumnType.POLYGONS: None,
}


class Column:
    """One typed value vector. Immutable apart from memoized encodings."""

    __slots__ = ("ctype", "_data", "_mask", "_codes", "_cats", "_source", "_pending")

    def __init__(self, ctype: ColumnType, data: np.ndarray, mask: np.ndarray | None = None):
        self.ctype = ctype
        self._data = data
        if mask is not None and not mask.any():
            mask = None
        self._mask = mask
        self._codes: np.ndarray | None = None
        self._cats: np.ndarray | None = None
        self._source: Column | None = None
        self._pending: np.ndarray | None = None

    @classmethod
    def _view(cls, source: "Column", pending: np.ndarray) -> "Column":
        col = object.__new__(cls)
        col.ctype = source.ctype
        col._data = None
        col._mask = None
        col._codes = None
        col._cats = None
        col._source = source  # always materialized
        col._pending = pending
        return col

    def _materialize(self) -> None:
        if self._source is None:
            return
        src, idx = self._source, self._pending
        self._data = src._data[idx]
        mask = src._mask[idx] if src._mask is not None else None
        if mask is not None and not mask.any():
            mask = None
        self._mask = mask
        if src._codes is not None:
            self._codes = src._codes[idx]
            self._cats = src._cats
        self._source = None
        self._pending = None

    @property
    def data(self) -> np.ndarray:
        self._materialize()
        return self._data

    @property
    def mask(self) -> np.ndarray | None:
        self._materialize()
        return self._mask

    def __len__(self) -> int:
        if self._source is not None:
            return len(self._pending)
        return len(self._data)

    @classmethod
    def from_values(cls, ctype: ColumnType, values: Iterable[Any]) -> "Column":
        """Build a column from python values, None meaning null."""
        values = list(values)
        n = len(values)
        mask = np.zeros(n, dtype=np.bool_)
        fill = _NULL_FILL[ctype]
        out = []
        for i, v in enumerate(values):
            if v is None or (ctype == ColumnType.FLOAT64 and isinstance(v, float) and math.isnan(v)):
                mask[i] = True
                out.append(fill)
            else:
                out.append(v)
        if ctype in (ColumnType.TEXT, ColumnType.POLYGONS):
            data = np.empty(n, dtype=object)
            data[:] = out
        else:
            data = np.asarray(out, dtype=_DTYPES[ctype])
        return cls(ctype, data, mask)

    def valid(self) -> np.ndarray:
        """Boolean mask of non-null positions (NaN in a float column counts as null)."""
        if self.ctype == ColumnType.FLOAT64:
            ok = ~np.isnan(self.data)
            if self.mask is not None:
                ok &= ~self.mask
            return ok
        if self.mask is None:
            return np.ones(len(self), dtype=np.bool_)
        return ~self.mask

    def take(self, idx: np.ndarray, comp_cache: dict | None = None) -> "Column":
        """Row gather as a lazy view; `comp_cache` dedupes index composition
        across columns of one relation that share a pending array."""
        if self._source is not None:
            key = id(self._pending)
            if comp_cache is not None and key in comp_cache:
                composed = comp_cache[key]
            else:
                composed = self._pending[idx]
                if comp_cache is not None:
                    comp_cache[key] = composed
            return Column._view(self._source, composed)
        return Column._view(self, idx)

    def value_at(self, i: int) -> Any:
        if self.mask is not None and self.mask[i]:
            return None
        v = self.data[i]
        if self.ctype == ColumnType.FLOAT64:
            f = float(v)
            return None if math.isnan(f) else f
        if self.ctype == ColumnType.INT64:
            return int(v)
        if self.ctype == ColumnType.BOOL:
            return bool(v)
        return v

    def to_list(self) -> list[Any]:
        return [self.value_at(i) for i in range(len(self))]

    # -- dictionary encoding ------------------------------------------------

    def encoding(self) -> tuple[np.ndarray, np.ndarray]:
        """Return (codes, categories): codes[i] in [0, len(cats)], null rows = len(cats).

        Categories are the sorted distinct non-null values of the *source*
        column; the null bucket sorts last. The source memoizes its encoding,
        so every view over it (any row subset, any depth of gathers) answers
        with one integer gather and no value comparisons.
        """
        if self._source is not None:
            src_codes, cats = self._source.encoding()
            return src_codes[self._pending], cats
        if self._codes is None:
            self._codes, self._cats = _factorize(self)
        return self._codes, self._cats

    def encoding_available(self) -> bool:
        if self._source is not None:
            return self._source._codes is not None
        return self._codes is not None

    def __repr__(self) -> str:  # pragma: no cover - debugging aid
        state = "view" if self._source is not None else "owned"
        return f"Column({self.ctype.value}, n={len(self)}, {state})"


def _factorize(col: Column) -> tuple[np.ndarray, np.ndarray]:
    if col.ctype == ColumnType.POLYGONS:
        raise TypeMismatchError("polygon columns cannot be used as group keys")
    n = len(col)
    ok = col.valid()
    codes = np.empty(n, dtype=np.int64)
    if not ok.all():
        present = col.data[ok]
    else:
        present = col.data
    if len(present) == 0:
        cats = np.empty(0, dtype=object if col.ctype == ColumnType.TEXT else col.data.dtype)
        codes[:] = 0
        return codes, cats
    if col.ctype == ColumnType.INT64:
        lo = int(present.min())
        hi = int(present.max())
        span = hi - lo + 1
        if span <= max(1024, 4 * len(present)):
            # dense integer fast path: bucket lookup instead of a sort
            seen = np.zeros(span, dtype=np.bool_)
            seen[present - lo] = True
            cats = np.nonzero(seen)[0] + lo
            lut = np.zeros(span, dtype=np.int64)
            lut[cats - lo] = np.arange(len(cats))
            if ok.all():
                codes = lut[col.data - lo]
            else:
                codes[ok] = lut[present - lo]
                codes[~ok] = len(cats)
            return codes, cats
    cats, inverse = np.unique(present, return_inverse=True)
    if ok.all():
        codes = inverse.astype(np.int64, copy=False)
    else:
        codes[ok] = inverse
        codes[~ok] = len(cats)
    return codes, cats


# -- cell parsing / formatting (CSV surface) ---------------------------------


def parse_cell(text: str, ctype: ColumnType) -> Any:
    """Parse one CSV cell; empty string means null. Raises ValueError on bad input."""
    if text == "":
        return None
    if ctype == ColumnType.INT64:
        return int(text)
    if ctype == ColumnType.FLOAT64:
        v = float(text)
        if math.isnan(v):
            raise ValueError("NaN literal not allowed; use an empty cell for null")
        return v
    if ctype == ColumnType.BOOL:
        low = text.lower()
        if low == "true":
            return True
        if low == "false":
            return False
        raise ValueError(f"expected true/false, got {text!r}")
    if ctype == ColumnType.TEXT:
        return text
    if ctype == ColumnType.POLYGONS:
        return parse_polygons(text)
    raise ValueError(f"unhandled column type {ctype}")


def parse_polygons(text: str) -> list[list[tuple[float, float]]]:
    """Parse a nested-array polygon cell: [[[lat,lon], ...], ...]."""
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as e:
        raise ValueError(f"bad polygon JSON: {e}") from e
    if not isinstance(raw, list) or not raw:
        raise ValueError("polygon cell must be a non-empty list of rings")
    rings: list[list[tuple[float, float]]] = []
    for ring in raw:
        if not isinstance(ring, list) or len(ring) < 3:
            raise ValueError("each polygon ring needs at least 3 vertices")
        pts = []
        for pt in ring:
            if not isinstance(pt, list) or len(pt) != 2:
                raise ValueError("polygon vertex must be [lat, lon]")
            lat, lon = float(pt[0]), float(pt[1])
            if not (-90.0 <= lat <= 90.0) or not (-180.0 <= lon <= 180.0):
                raise ValueError(f"vertex ({lat}, {lon}) outside lat/lon bounds")
            pts.append((lat, lon))
        rings.append(pts)
    return rings


def format_cell(value: Any, ctype: ColumnType) -> str:
    """Inverse of parse_cell: render a value back to its CSV text."""
    if value is None:
        return ""
    if ctype == ColumnType.BOOL:
        return "true" if value else "false"
    if ctype == ColumnType.FLOAT64:
        return repr(float(value))
    if ctype == ColumnType.INT64:
        return str(int(value))
    if ctype == ColumnType.POLYGONS:
        return json.dumps([[list(pt) for pt in ring] for ring in value], separators=(",", ":"))
    return str(value)


def coerce_ingested(ctype: ColumnType, cell: str, line: int, column: str) -> Any:
    try:
        return parse_cell(cell, ctype)
    except ValueError as e:
        raise CsvParseError(
            f"line {line}, column {column!r}: {e}", line=line, column=column
        ) from e
