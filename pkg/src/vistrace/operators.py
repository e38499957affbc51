"""Lineage-capturing relational operators.

Every operator returns its output relation together with a LineageIndex that
maps output rows to the contributing input rows (backward) and vice versa
(forward). Each input side of an operator is a total single-valued mapping in
one direction — filter/join/project map each output to exactly one input row,
group-by maps each input to exactly one output group — so one side stores a
flat map array and derives the CSR adjacency for the other direction lazily
by a counting pass plus a stable scatter.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Union

import numpy as np

from .columns import Column, ColumnType
from .errors import EmptyExtentError, TypeMismatchError
from .expressions import (
    Expr,
    Predicate,
    check_predicate,
    eval_expr,
    eval_predicate,
    expr_from_json,
    expr_to_json,
    pred_from_json,
    pred_to_json,
)
from .relation import Relation, Schema

# -- index plumbing -----------------------------------------------------------


def invert_mapping(m: np.ndarray, n_targets: int) -> tuple[np.ndarray, np.ndarray]:
    """CSR adjacency of the inverse of a total map: counting pass, then stable scatter."""
    counts = np.bincount(m, minlength=n_targets)
    offsets = np.empty(n_targets + 1, dtype=np.int64)
    offsets[0] = 0
    np.cumsum(counts, out=offsets[1:])
    order = np.argsort(m, kind="stable").astype(np.int64, copy=False)
    return offsets, order


def csr_gather(offsets: np.ndarray, values: np.ndarray, q: np.ndarray) -> np.ndarray:
    """Concatenate CSR slices values[offsets[i]:offsets[i+1]] for i in q."""
    if q.size == 0:
        return np.empty(0, dtype=np.int64)
    starts = offsets[q]
    lens = offsets[q + 1] - starts
    total = int(lens.sum())
    if total == 0:
        return np.empty(0, dtype=np.int64)
    cum = np.cumsum(lens)
    shift = np.repeat(starts - np.concatenate(([0], cum[:-1])), lens)
    return values[np.arange(total, dtype=np.int64) + shift]


def fast_unique(arr: np.ndarray, domain: int) -> np.ndarray:
    """Sorted unique over int row ids in [0, domain) via a boolean scatter."""
    if arr.size == 0:
        return np.empty(0, dtype=np.int64)
    seen = np.zeros(domain, dtype=np.bool_)
    seen[arr] = True
    return np.nonzero(seen)[0].astype(np.int64, copy=False)


class SideIndex:
    """Backward/forward row mappings for one input side of one operator."""

    __slots__ = ("n_in", "n_out", "kind", "_map", "_inv")

    def __init__(self, kind: str, m: np.ndarray | None, n_in: int, n_out: int):
        self.kind = kind  # 'out2in' | 'in2out' | 'identity'
        self._map = m
        self.n_in = n_in
        self.n_out = n_out
        self._inv: tuple[np.ndarray, np.ndarray] | None = None

    @classmethod
    def from_output_map(cls, m: np.ndarray, n_in: int) -> "SideIndex":
        """Each output row has exactly one contributing input row (filter, join side)."""
        return cls("out2in", m, n_in, len(m))

    @classmethod
    def from_input_map(cls, m: np.ndarray, n_out: int) -> "SideIndex":
        """Each input row contributes to exactly one output row (group-by)."""
        return cls("in2out", m, len(m), n_out)

    @classmethod
    def identity(cls, n: int) -> "SideIndex":
        return cls("identity", None, n, n)

    def _inverse(self) -> tuple[np.ndarray, np.ndarray]:
        if self._inv is None:
            n = self.n_in if self.kind == "out2in" else self.n_out
            self._inv = invert_mapping(self._map, n)
        return self._inv

    def backward_gather(self, out_rids: np.ndarray) -> np.ndarray:
        """Input rids contributing to the given outputs (may contain duplicates)."""
        if self.kind == "identity":
            return out_rids
        if self.kind == "out2in":
            return self._map[out_rids]
        offsets, order = self._inverse()
        return csr_gather(offsets, order, out_rids)

    def forward_gather(self, in_rids: np.ndarray) -> np.ndarray:
        """Output rids the given inputs contribute to (may contain duplicates)."""
        if self.kind == "identity":
            return in_rids
        if self.kind == "in2out":
            return self._map[in_rids]
        offsets, order = self._inverse()
        return csr_gather(offsets, order, in_rids)

    # row-at-a-time accessors, used by invariant checks
    def backward(self, o: int) -> list[int]:
        return sorted(int(x) for x in self.backward_gather(np.array([o], dtype=np.int64)))

    def forward(self, i: int) -> list[int]:
        return sorted(int(x) for x in self.forward_gather(np.array([i], dtype=np.int64)))


@dataclass(frozen=True)
class AggSpec:
    fn: str  # COUNT | SUM | AVG | MIN | MAX
    col: str | None
    name: str


class LineageIndex:
    """Per-operator lineage: one SideIndex per input relation, in child order."""

    __slots__ = ("op_id", "sides")

    def __init__(self, op_id: str, sides: tuple[SideIndex, ...]):
        self.op_id = op_id
        self.sides = sides


# -- operator nodes -------------------------------------------------------------


@dataclass(frozen=True)
class BaseRef:
    name: str


@dataclass(frozen=True)
class Filter:
    child: "Node"
    pred: Predicate


@dataclass(frozen=True)
class Join:
    left: "Node"
    right: "Node"
    left_key: str
    right_key: str


@dataclass(frozen=True)
class GroupAgg:
    child: "Node"
    keys: tuple[str, ...]
    aggs: tuple[AggSpec, ...]


@dataclass(frozen=True)
class Project:
    child: "Node"
    exprs: tuple[tuple[Expr, str], ...]


Node = Union[BaseRef, Filter, Join, GroupAgg, Project]


def node_children(node: Node) -> tuple[Node, ...]:
    if isinstance(node, BaseRef):
        return ()
    if isinstance(node, Join):
        return (node.left, node.right)
    return (node.child,)


def node_bases(node: Node) -> set[str]:
    """Names of all base relations reachable from this node."""
    if isinstance(node, BaseRef):
        return {node.name}
    out: set[str] = set()
    for c in node_children(node):
        out |= node_bases(c)
    return out


# -- operator evaluation ----------------------------------------------------------


def filter_op(rel: Relation, pred: Predicate) -> tuple[Relation, LineageIndex]:
    """Keep rows satisfying the predicate, preserving input order."""
    check_predicate(pred, rel.schema)
    mask = eval_predicate(pred, rel)
    sel = np.nonzero(mask)[0].astype(np.int64)
    out = rel.take(sel)
    return out, LineageIndex("filter", (SideIndex.from_output_map(sel, rel.n_rows),))


def project_op(rel: Relation, exprs: tuple[tuple[Expr, str], ...]) -> tuple[Relation, LineageIndex]:
    """Row-preserving scalar projection; lineage is one-to-one."""
    cols = []
    fields = []
    for expr, name in exprs:
        c = eval_expr(expr, rel)
        cols.append(c)
        fields.append((name, c.ctype))
    out = Relation(rel.name, Schema(tuple(fields)), cols)
    return out, LineageIndex("project", (SideIndex.identity(rel.n_rows),))


def hash_join(
    left: Relation, right: Relation, left_key: str, right_key: str
) -> tuple[Relation, LineageIndex]:
    """Inner equijoin; null keys never match; output is in left-major probe order.

    The right side is always the build side so that output order matches a
    left-major nested loop, which downstream value comparisons rely on.
    """
    if left_key not in left.schema:
        raise TypeMismatchError(f"join key {left_key!r} missing from left input")
    if right_key not in right.schema:
        raise TypeMismatchError(f"join key {right_key!r} missing from right input")
    lk, rk = left.col(left_key), right.col(right_key)
    if lk.ctype != rk.ctype:
        raise TypeMismatchError(f"join keys have different types {lk.ctype}/{rk.ctype}")
    if lk.ctype == ColumnType.POLYGONS:
        raise TypeMismatchError("polygon columns cannot be join keys")

    l_idx, r_idx = _match_keys(lk, rk)

    fields = list(left.schema.fields)
    taken_names = set(left.schema.names)
    right_cols: list[tuple[int, str, ColumnType]] = []
    for j, (n, t) in enumerate(right.schema.fields):
        if n == right_key and n in taken_names:
            continue  # right key dropped on name collision
        name = n if n not in taken_names else f"{right.name}.{n}"
        if name in taken_names:
            raise TypeMismatchError(f"join output column {name!r} is ambiguous")
        taken_names.add(name)
        right_cols.append((j, name, t))
        fields.append((name, t))

    lcache: dict = {}
    rcache: dict = {}
    cols = [c.take(l_idx, lcache) for c in left.columns]
    cols += [right.columns[j].take(r_idx, rcache) for j, _, _ in right_cols]
    out = Relation("join", Schema(tuple(fields)), cols)
    lineage = LineageIndex(
        "join",
        (
            SideIndex.from_output_map(l_idx, left.n_rows),
            SideIndex.from_output_map(r_idx, right.n_rows),
        ),
    )
    return out, lineage


def _match_keys(lk: Column, rk: Column) -> tuple[np.ndarray, np.ndarray]:
    """Equijoin matching: (left rid, right rid) pairs in left-major order."""
    lmask = lk.mask  # None when the side has no nulls
    rmask = rk.mask
    if rk.ctype == ColumnType.INT64 and len(rk):
        if rmask is None:
            rvals = rk.data
            rrids = None
        else:
            rrids = np.nonzero(~rmask)[0].astype(np.int64)
            rvals = rk.data[rrids]
        if len(rvals):
            lo = int(rvals.min())
            hi = int(rvals.max())
            span = hi - lo + 1
            if span <= max(1024, 4 * len(rvals)):
                counts = np.bincount(rvals - lo, minlength=span)
                if counts.max() <= 1:
                    # dense unique build keys: direct lookup table
                    lut = np.full(span, -1, dtype=np.int64)
                    positions = np.arange(len(rvals), dtype=np.int64) if rrids is None else rrids
                    lut[rvals - lo] = positions
                    lv = lk.data
                    inrange = (lv >= lo) & (lv <= hi)
                    if lmask is not None:
                        inrange &= ~lmask
                    pos = np.where(inrange, lv - lo, 0)
                    r = lut[pos]
                    matched = inrange & (r >= 0)
                    l_idx = np.nonzero(matched)[0].astype(np.int64)
                    return l_idx, r[matched]
            order = np.argsort(rvals, kind="stable")
            skeys = rvals[order]
            if bool((np.diff(skeys) > 0).all()):
                rid_of = order if rrids is None else rrids[order]
                lv = lk.data
                pos = np.searchsorted(skeys, lv)
                pos_c = np.minimum(pos, len(skeys) - 1)
                matched = skeys[pos_c] == lv
                if lmask is not None:
                    matched &= ~lmask
                l_idx = np.nonzero(matched)[0].astype(np.int64)
                return l_idx, rid_of[pos_c[matched]]
    # general fallback: build a rid-list table on the right, probe left in order
    table: dict = {}
    rdata = rk.data
    for i in (range(len(rk)) if rmask is None else np.nonzero(~rmask)[0]):
        table.setdefault(rdata[i], []).append(int(i))
    l_out: list[int] = []
    r_out: list[int] = []
    ldata = lk.data
    for i in (range(len(lk)) if lmask is None else np.nonzero(~lmask)[0]):
        hits = table.get(ldata[i])
        if hits:
            l_out.extend([int(i)] * len(hits))
            r_out.extend(hits)
    return np.array(l_out, dtype=np.int64), np.array(r_out, dtype=np.int64)


def group_aggregate(
    rel: Relation, keys: tuple[str, ...], aggs: tuple[AggSpec, ...]
) -> tuple[Relation, LineageIndex]:
    """One output row per distinct key combination; null keys form their own group.

    Output rows are ordered by key value (nulls last). Backward images of the
    outputs partition the input rows.
    """
    if not keys:
        raise TypeMismatchError("group-by needs at least one key column")
    for k in keys:
        if k not in rel.schema:
            raise TypeMismatchError(f"group key {k!r} missing from input")
    for a in aggs:
        if a.fn == "COUNT":
            if a.col is not None:
                raise TypeMismatchError("COUNT takes no input column")
            continue
        if a.fn not in ("SUM", "AVG", "MIN", "MAX"):
            raise TypeMismatchError(f"unknown aggregate {a.fn!r}")
        if a.col is None or a.col not in rel.schema:
            raise TypeMismatchError(f"aggregate {a.fn} needs an input column")
        if not rel.schema.type_of(a.col).is_numeric:
            raise TypeMismatchError(f"aggregate {a.fn} needs a numeric column, got {a.col!r}")

    n = rel.n_rows
    encodings = [rel.col(k).encoding() for k in keys]
    sizes = [len(cats) + 1 for _, cats in encodings]  # +1 = null bucket

    combined = encodings[0][0]
    if len(keys) > 1:
        combined = combined.copy()
        for (codes, _), size in zip(encodings[1:], sizes[1:]):
            combined *= size
            combined += codes

    total = 1
    for s in sizes:
        total *= s
    if n == 0:
        uniq = np.empty(0, dtype=np.int64)
        inv = np.empty(0, dtype=np.int64)
    elif total <= max(1 << 22, 4 * n):
        counts = np.bincount(combined, minlength=total)
        uniq = np.nonzero(counts)[0].astype(np.int64)
        lut = np.zeros(total, dtype=np.int64)
        lut[uniq] = np.arange(len(uniq), dtype=np.int64)
        inv = lut[combined]
    else:
        uniq, inv = np.unique(combined, return_inverse=True)
        inv = inv.astype(np.int64, copy=False)
    n_groups = len(uniq)

    # decode combined codes back to per-key output columns
    fields: list[tuple[str, ColumnType]] = []
    cols: list[Column] = []
    rest = uniq
    per_key_codes = []
    for size in reversed(sizes):
        per_key_codes.append(rest % size)
        rest = rest // size
    per_key_codes.reverse()
    for k, (enc, kcodes) in zip(keys, zip(encodings, per_key_codes)):
        _, cats = enc
        ctype = rel.schema.type_of(k)
        null_mask = kcodes == len(cats)
        if ctype in (ColumnType.TEXT, ColumnType.POLYGONS):
            data = np.empty(n_groups, dtype=object)
        else:
            data = np.zeros(n_groups, dtype=rel.col(k).data.dtype)
        if n_groups:
            safe = np.where(null_mask, 0, kcodes)
            if len(cats):
                data[~null_mask] = cats[safe[~null_mask]]
        out_col = Column(ctype, data, null_mask if null_mask.any() else None)
        cols.append(out_col)
        fields.append((k, ctype))
        # the output key column is trivially dictionary-encoded already
        out_col._codes = np.where(null_mask, len(cats), kcodes) if null_mask.any() else kcodes
        out_col._cats = cats

    counts_all = np.bincount(inv, minlength=n_groups).astype(np.int64)
    for a in aggs:
        cols.append(_aggregate(a, rel, inv, n_groups, counts_all))
        fields.append((a.name, cols[-1].ctype))

    out = Relation("group", Schema(tuple(fields)), cols)
    return out, LineageIndex("group", (SideIndex.from_input_map(inv, n_groups),))


def _aggregate(a: AggSpec, rel: Relation, inv: np.ndarray, g: int, counts_all: np.ndarray) -> Column:
    if a.fn == "COUNT":
        return Column(ColumnType.INT64, counts_all.copy())
    col = rel.col(a.col)
    ok = col.valid()
    codes_ok = inv[ok]
    vals = col.data[ok]
    cnt = np.bincount(codes_ok, minlength=g).astype(np.int64)
    empty = cnt == 0
    if a.fn in ("SUM", "AVG"):
        s = np.bincount(codes_ok, weights=vals.astype(np.float64, copy=False), minlength=g)
        if a.fn == "AVG":
            with np.errstate(invalid="ignore", divide="ignore"):
                out = s / np.where(empty, 1, cnt)
            return Column(ColumnType.FLOAT64, out, empty if empty.any() else None)
        if col.ctype == ColumnType.INT64:
            return Column(ColumnType.INT64, s.astype(np.int64), empty if empty.any() else None)
        return Column(ColumnType.FLOAT64, s, empty if empty.any() else None)
    # MIN / MAX via stable sort + segmented reduce
    out = np.zeros(g, dtype=col.data.dtype)
    if codes_ok.size:
        order = np.argsort(codes_ok, kind="stable")
        sv = vals[order]
        nz = np.nonzero(cnt)[0]
        offsets = np.concatenate(([0], np.cumsum(cnt)))
        starts = offsets[nz]
        red = np.minimum.reduceat(sv, starts) if a.fn == "MIN" else np.maximum.reduceat(sv, starts)
        out[nz] = red
    return Column(col.ctype, out, empty if empty.any() else None)


def extent(rel: Relation, col: str) -> tuple[float, float]:
    """(min, max) of a numeric column, ignoring nulls."""
    if col not in rel.schema:
        raise TypeMismatchError(f"extent over unknown column {col!r}")
    if not rel.schema.type_of(col).is_numeric:
        raise TypeMismatchError(f"extent needs a numeric column, got {col!r}")
    c = rel.col(col)
    ok = c.valid()
    if not ok.any():
        raise EmptyExtentError(f"no non-null values in {col!r}")
    vals = c.data[ok]
    return vals.min().item(), vals.max().item()


def apply_operator(node: Node, inputs: tuple[Relation, ...]) -> tuple[Relation, LineageIndex]:
    if isinstance(node, Filter):
        return filter_op(inputs[0], node.pred)
    if isinstance(node, Project):
        return project_op(inputs[0], node.exprs)
    if isinstance(node, Join):
        return hash_join(inputs[0], inputs[1], node.left_key, node.right_key)
    if isinstance(node, GroupAgg):
        return group_aggregate(inputs[0], node.keys, node.aggs)
    raise TypeMismatchError(f"cannot evaluate node {node!r}")


# -- node JSON codec ---------------------------------------------------------------


def node_to_json(node: Node) -> dict:
    if isinstance(node, BaseRef):
        return {"base": node.name}
    if isinstance(node, Filter):
        return {"filter": {"in": node_to_json(node.child), "pred": pred_to_json(node.pred)}}
    if isinstance(node, Join):
        return {
            "join": {
                "left": node_to_json(node.left),
                "right": node_to_json(node.right),
                "left_key": node.left_key,
                "right_key": node.right_key,
            }
        }
    if isinstance(node, GroupAgg):
        return {
            "group": {
                "in": node_to_json(node.child),
                "keys": list(node.keys),
                "aggs": [{"fn": a.fn, "col": a.col, "as": a.name} for a in node.aggs],
            }
        }
    if isinstance(node, Project):
        return {
            "project": {
                "in": node_to_json(node.child),
                "exprs": [{"expr": expr_to_json(e), "as": n} for e, n in node.exprs],
            }
        }
    raise TypeMismatchError(f"cannot serialize node {node!r}")


def node_from_json(doc: dict) -> Node:
    if not isinstance(doc, dict):
        raise TypeMismatchError(f"bad operator document {doc!r}")
    if "base" in doc:
        return BaseRef(doc["base"])
    if "filter" in doc:
        f = doc["filter"]
        return Filter(node_from_json(f["in"]), pred_from_json(f["pred"]))
    if "join" in doc:
        j = doc["join"]
        return Join(
            node_from_json(j["left"]), node_from_json(j["right"]), j["left_key"], j["right_key"]
        )
    if "group" in doc:
        gdoc = doc["group"]
        aggs = tuple(AggSpec(a["fn"], a.get("col"), a["as"]) for a in gdoc["aggs"])
        return GroupAgg(node_from_json(gdoc["in"]), tuple(gdoc["keys"]), aggs)
    if "project" in doc:
        p = doc["project"]
        exprs = tuple((expr_from_json(e["expr"]), e["as"]) for e in p["exprs"])
        return Project(node_from_json(p["in"]), exprs)
    raise TypeMismatchError(f"bad operator document {doc!r}")
