"""Row-at-a-time reference interpreter with provenance markers.

This is the slow, obviously-correct twin of the columnar engine: plain python
rows, nested-loop joins, per-group folds, and an explicit marker set carried
through every operator recording which base rows each output depends on. The
engine's vectorized results and index-composed traces are cross-checked
against it in the test suite and by the benchmark's pre-flight guard. It
shares only the operator/expression dataclasses (as structure), none of the
evaluation code.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Any

from .expressions import And, Between, BinOp, Cmp, ColRef, Const, LinearMap, Lit, Not, Or
from .operators import BaseRef, Filter, GroupAgg, Join, Node, Project
from .relation import Relation


@dataclass
class RefResult:
    columns: list[str]
    rows: list[dict]
    prov: list[dict[str, frozenset]]  # per output row: base name -> contributing rids


def relation_rows(rel: Relation) -> list[dict]:
    names = rel.schema.names
    return [dict(zip(names, rel.row(i))) for i in range(rel.n_rows)]


def run_reference(node: Node, bases: dict[str, list[dict]]) -> RefResult:
    """Evaluate the plan row-at-a-time, tagging rows with base-row markers."""
    return _eval(node, bases)[0]


def backward_reference(res: RefResult, out_rids, target: str) -> set[int]:
    out: set[int] = set()
    for o in out_rids:
        out |= res.prov[o].get(target, frozenset())
    return out


def forward_reference(res: RefResult, base: str, in_rids) -> set[int]:
    wanted = set(in_rids)
    return {
        o for o, p in enumerate(res.prov) if p.get(base) and not wanted.isdisjoint(p[base])
    }


def _eval(node: Node, bases: dict[str, list[dict]]) -> tuple[RefResult, str]:
    if isinstance(node, BaseRef):
        rows = bases[node.name]
        cols = list(rows[0].keys()) if rows else []
        prov = [{node.name: frozenset([i])} for i in range(len(rows))]
        return RefResult(cols, [dict(r) for r in rows], prov), node.name

    if isinstance(node, Filter):
        child, name = _eval(node.child, bases)
        keep = [i for i, r in enumerate(child.rows) if ref_pred(node.pred, r)]
        return (
            RefResult(child.columns, [child.rows[i] for i in keep], [child.prov[i] for i in keep]),
            name,
        )

    if isinstance(node, Project):
        child, name = _eval(node.child, bases)
        rows = [{n: ref_expr(e, r) for e, n in node.exprs} for r in child.rows]
        return RefResult([n for _, n in node.exprs], rows, list(child.prov)), name

    if isinstance(node, Join):
        left, _ = _eval(node.left, bases)
        right, right_name = _eval(node.right, bases)
        out_cols = list(left.columns)
        col_map: list[tuple[str, str]] = []  # (source col on right, output name)
        for c in right.columns:
            if c == node.right_key and c in left.columns:
                continue
            out_name = c if c not in out_cols else f"{right_name}.{c}"
            out_cols.append(out_name)
            col_map.append((c, out_name))
        rows: list[dict] = []
        prov: list[dict[str, frozenset]] = []
        for li, lrow in enumerate(left.rows):
            lk = lrow[node.left_key]
            if lk is None:
                continue
            for ri, rrow in enumerate(right.rows):
                rk = rrow[node.right_key]
                if rk is None or rk != lk:
                    continue
                merged = dict(lrow)
                for src, dst in col_map:
                    merged[dst] = rrow[src]
                rows.append(merged)
                prov.append(_union_prov(left.prov[li], right.prov[ri]))
        return RefResult(out_cols, rows, prov), "join"

    if isinstance(node, GroupAgg):
        child, _ = _eval(node.child, bases)
        groups: dict[tuple, list[int]] = {}
        for i, r in enumerate(child.rows):
            key = tuple(r[k] for k in node.keys)
            groups.setdefault(key, []).append(i)
        # engine ordering: by key value per position, nulls last
        ordered = sorted(groups, key=lambda key: tuple((v is None, v) for v in key))
        rows = []
        prov = []
        for key in ordered:
            members = groups[key]
            out = dict(zip(node.keys, key))
            for a in node.aggs:
                if a.fn == "COUNT":
                    out[a.name] = len(members)
                    continue
                vals = [child.rows[i][a.col] for i in members]
                vals = [v for v in vals if v is not None]
                if not vals:
                    out[a.name] = None
                elif a.fn == "SUM":
                    acc = vals[0]
                    for v in vals[1:]:
                        acc = acc + v
                    out[a.name] = acc
                elif a.fn == "AVG":
                    acc = 0.0
                    for v in vals:
                        acc = acc + v
                    out[a.name] = acc / len(vals)
                elif a.fn == "MIN":
                    out[a.name] = min(vals)
                elif a.fn == "MAX":
                    out[a.name] = max(vals)
            rows.append(out)
            merged: dict[str, frozenset] = {}
            for i in members:
                merged = _union_prov(merged, child.prov[i])
            prov.append(merged)
        cols = list(node.keys) + [a.name for a in node.aggs]
        return RefResult(cols, rows, prov), "group"

    raise ValueError(f"unknown node {node!r}")


def _union_prov(a: dict[str, frozenset], b: dict[str, frozenset]) -> dict[str, frozenset]:
    out = dict(a)
    for k, v in b.items():
        out[k] = out.get(k, frozenset()) | v
    return out


def rewrite_with_predicate(node: Node, base: str, pred) -> Node:
    """Conjoin a predicate onto one base relation: the direct-query rewrite that
    cross-filter results are checked against."""
    if isinstance(node, BaseRef):
        return Filter(node, pred) if node.name == base else node
    if isinstance(node, Filter):
        return Filter(rewrite_with_predicate(node.child, base, pred), node.pred)
    if isinstance(node, Project):
        return Project(rewrite_with_predicate(node.child, base, pred), node.exprs)
    if isinstance(node, Join):
        return Join(
            rewrite_with_predicate(node.left, base, pred),
            rewrite_with_predicate(node.right, base, pred),
            node.left_key,
            node.right_key,
        )
    if isinstance(node, GroupAgg):
        return GroupAgg(rewrite_with_predicate(node.child, base, pred), node.keys, node.aggs)
    raise ValueError(f"unknown node {node!r}")


# -- row-wise expression / predicate evaluation ------------------------------------


def ref_expr(expr, row: dict) -> Any:
    if isinstance(expr, ColRef):
        return row[expr.name]
    if isinstance(expr, Lit):
        return expr.value
    if isinstance(expr, BinOp):
        l = ref_expr(expr.lhs, row)
        r = ref_expr(expr.rhs, row)
        if l is None or r is None:
            return None
        if expr.op == "+":
            return l + r
        if expr.op == "-":
            return l - r
        if expr.op == "*":
            return l * r
        if expr.op == "/":
            return None if r == 0 else l / r
        if expr.op == "//":
            return None if r == 0 else l // r
        raise ValueError(f"unknown operator {expr.op!r}")
    if isinstance(expr, LinearMap):
        v = ref_expr(expr.arg, row)
        if v is None:
            return None
        mi, mx = expr.domain
        lo, hi = expr.out_range
        if mx == mi:
            return (lo + hi) / 2.0
        t = (v - mi) / (mx - mi)
        t = 0.0 if t < 0.0 else (1.0 if t > 1.0 else t)
        return lo + t * (hi - lo)
    raise ValueError(f"unknown expression {expr!r}")


def ref_pred(pred, row: dict) -> bool:
    if isinstance(pred, Const):
        return pred.value
    if isinstance(pred, And):
        return all(ref_pred(p, row) for p in pred.parts)
    if isinstance(pred, Or):
        return any(ref_pred(p, row) for p in pred.parts)
    if isinstance(pred, Not):
        return not ref_pred(pred.arg, row)
    if isinstance(pred, Between):
        v = ref_expr(pred.arg, row)
        return v is not None and pred.lo <= v <= pred.hi
    if isinstance(pred, Cmp):
        l = ref_expr(pred.lhs, row)
        r = ref_expr(pred.rhs, row)
        if l is None or r is None:
            return False
        if pred.op == "=":
            return l == r
        if pred.op == "!=":
            return l != r
        if pred.op == "<":
            return l < r
        if pred.op == "<=":
            return l <= r
        if pred.op == ">":
            return l > r
        if pred.op == ">=":
            return l >= r
        raise ValueError(f"unknown comparison {pred.op!r}")
    raise ValueError(f"unknown predicate {pred!r}")
