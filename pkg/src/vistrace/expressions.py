"""Scalar expressions and predicates over relations, evaluated column-at-a-time.

Null semantics are deliberately two-valued: any comparison touching a null
evaluates to false, and the boolean connectives operate on the resulting
true/false values. Arithmetic propagates nulls; division by zero yields null.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Any, Union

import numpy as np

from .columns import Column, ColumnType
from .errors import TypeMismatchError
from .relation import Relation, Schema

Expr = Union["ColRef", "Lit", "BinOp", "LinearMap"]
Predicate = Union["Cmp", "And", "Or", "Not", "Between", "Const"]


@dataclass(frozen=True)
class ColRef:
    name: str


@dataclass(frozen=True)
class Lit:
    value: Any

    def ctype(self) -> ColumnType:
        if isinstance(self.value, bool):
            return ColumnType.BOOL
        if isinstance(self.value, int):
            return ColumnType.INT64
        if isinstance(self.value, float):
            return ColumnType.FLOAT64
        if isinstance(self.value, str):
            return ColumnType.TEXT
        raise TypeMismatchError(f"unsupported literal {self.value!r}")


@dataclass(frozen=True)
class BinOp:
    op: str  # + - * / //
    lhs: Expr
    rhs: Expr


@dataclass(frozen=True)
class LinearMap:
    """Clamped linear rescale of a numeric operand (scale application)."""

    domain: tuple[float, float]
    out_range: tuple[float, float]
    arg: Expr


@dataclass(frozen=True)
class Cmp:
    op: str  # = != < <= > >=
    lhs: Expr
    rhs: Expr


@dataclass(frozen=True)
class And:
    parts: tuple[Predicate, ...]


@dataclass(frozen=True)
class Or:
    parts: tuple[Predicate, ...]


@dataclass(frozen=True)
class Not:
    arg: Predicate


@dataclass(frozen=True)
class Between:
    """Inclusive interval containment on a numeric expression."""

    arg: Expr
    lo: float
    hi: float


@dataclass(frozen=True)
class Const:
    value: bool


def col_in(name: str, values) -> Predicate:
    """Membership as a disjunction of equalities (what a range inversion relaxes to)."""
    parts = tuple(Cmp("=", ColRef(name), Lit(v)) for v in values)
    if not parts:
        return Const(False)
    return parts[0] if len(parts) == 1 else Or(parts)


# -- typing -------------------------------------------------------------------


def infer_type(expr: Expr, schema: Schema) -> ColumnType:
    if isinstance(expr, ColRef):
        if expr.name not in schema:
            raise TypeMismatchError(f"expression references unknown column {expr.name!r}")
        return schema.type_of(expr.name)
    if isinstance(expr, Lit):
        return expr.ctype()
    if isinstance(expr, BinOp):
        lt = infer_type(expr.lhs, schema)
        rt = infer_type(expr.rhs, schema)
        if not (lt.is_numeric and rt.is_numeric):
            raise TypeMismatchError(f"arithmetic {expr.op!r} needs numeric operands, got {lt}/{rt}")
        if expr.op == "/":
            return ColumnType.FLOAT64
        if expr.op in ("+", "-", "*", "//"):
            if lt == ColumnType.INT64 and rt == ColumnType.INT64:
                return ColumnType.INT64
            return ColumnType.FLOAT64
        raise TypeMismatchError(f"unknown arithmetic operator {expr.op!r}")
    if isinstance(expr, LinearMap):
        at = infer_type(expr.arg, schema)
        if not at.is_numeric:
            raise TypeMismatchError("scale application needs a numeric operand")
        return ColumnType.FLOAT64
    raise TypeMismatchError(f"unknown expression {expr!r}")


def check_predicate(pred: Predicate, schema: Schema) -> None:
    if isinstance(pred, Cmp):
        lt = infer_type(pred.lhs, schema)
        rt = infer_type(pred.rhs, schema)
        if lt.is_numeric and rt.is_numeric:
            return
        if lt != rt:
            raise TypeMismatchError(f"cannot compare {lt} with {rt}")
        if lt == ColumnType.POLYGONS:
            raise TypeMismatchError("polygon columns are not comparable")
        if pred.op not in ("=", "!=") and lt == ColumnType.BOOL:
            raise TypeMismatchError("bool supports only =/!=")
        return
    if isinstance(pred, (And, Or)):
        for p in pred.parts:
            check_predicate(p, schema)
        return
    if isinstance(pred, Not):
        check_predicate(pred.arg, schema)
        return
    if isinstance(pred, Between):
        at = infer_type(pred.arg, schema)
        if not at.is_numeric:
            raise TypeMismatchError("between needs a numeric operand")
        return
    if isinstance(pred, Const):
        return
    raise TypeMismatchError(f"unknown predicate {pred!r}")


# -- vectorized evaluation ------------------------------------------------------


def eval_expr(expr: Expr, rel: Relation) -> Column:
    n = rel.n_rows
    if isinstance(expr, ColRef):
        if expr.name not in rel.schema:
            raise TypeMismatchError(f"expression references unknown column {expr.name!r}")
        return rel.col(expr.name)
    if isinstance(expr, Lit):
        ctype = expr.ctype()
        if ctype == ColumnType.TEXT:
            data = np.empty(n, dtype=object)
            data[:] = expr.value
        else:
            data = np.full(n, expr.value, dtype=np.dtype(ctype.value) if ctype != ColumnType.BOOL else np.bool_)
        return Column(ctype, data)
    if isinstance(expr, BinOp):
        lt = infer_type(expr, rel.schema)  # validates operand types
        lc = eval_expr(expr.lhs, rel)
        rc = eval_expr(expr.rhs, rel)
        mask = _union_mask(lc.mask, rc.mask)
        ldata, rdata = lc.data, rc.data
        if lt == ColumnType.FLOAT64:
            ldata = ldata.astype(np.float64, copy=False)
            rdata = rdata.astype(np.float64, copy=False)
        with np.errstate(divide="ignore", invalid="ignore"):
            if expr.op == "+":
                out = ldata + rdata
            elif expr.op == "-":
                out = ldata - rdata
            elif expr.op == "*":
                out = ldata * rdata
            elif expr.op in ("/", "//"):
                zero = rdata == 0
                if zero.any():
                    mask = zero if mask is None else (mask | zero)
                safe = np.where(zero, 1, rdata)
                out = ldata / safe if expr.op == "/" else ldata // safe
            else:
                raise TypeMismatchError(f"unknown arithmetic operator {expr.op!r}")
        if expr.op == "/":
            out = out.astype(np.float64, copy=False)
        return Column(lt, out, mask.copy() if mask is not None else None)
    if isinstance(expr, LinearMap):
        arg = eval_expr(expr.arg, rel)
        mi, mx = expr.domain
        lo, hi = expr.out_range
        vals = arg.data.astype(np.float64, copy=False)
        if mx == mi:
            out = np.full(n, (lo + hi) / 2.0)
        else:
            t = np.clip((vals - mi) / (mx - mi), 0.0, 1.0)
            out = lo + t * (hi - lo)
        return Column(ColumnType.FLOAT64, out, arg.mask.copy() if arg.mask is not None else None)
    raise TypeMismatchError(f"unknown expression {expr!r}")


def _union_mask(a: np.ndarray | None, b: np.ndarray | None) -> np.ndarray | None:
    if a is None:
        return b
    if b is None:
        return a
    return a | b


def eval_predicate(pred: Predicate, rel: Relation) -> np.ndarray:
    """Evaluate to a boolean row mask. Null comparisons come out false."""
    n = rel.n_rows
    if isinstance(pred, Const):
        return np.full(n, pred.value, dtype=np.bool_)
    if isinstance(pred, And):
        out = np.ones(n, dtype=np.bool_)
        for p in pred.parts:
            out &= eval_predicate(p, rel)
        return out
    if isinstance(pred, Or):
        out = np.zeros(n, dtype=np.bool_)
        for p in pred.parts:
            out |= eval_predicate(p, rel)
        return out
    if isinstance(pred, Not):
        return ~eval_predicate(pred.arg, rel)
    if isinstance(pred, Between):
        check_predicate(pred, rel.schema)
        arg = eval_expr(pred.arg, rel)
        vals = arg.data.astype(np.float64, copy=False)
        out = (vals >= pred.lo) & (vals <= pred.hi)
        return _mask_false(out, arg)
    if isinstance(pred, Cmp):
        check_predicate(pred, rel.schema)
        fast = _dict_equality_fast_path(pred, rel)
        if fast is not None:
            return fast
        lc = eval_expr(pred.lhs, rel)
        rc = eval_expr(pred.rhs, rel)
        ldata, rdata = lc.data, rc.data
        if lc.ctype.is_numeric and rc.ctype.is_numeric and lc.ctype != rc.ctype:
            ldata = ldata.astype(np.float64, copy=False)
            rdata = rdata.astype(np.float64, copy=False)
        if pred.op == "=":
            out = ldata == rdata
        elif pred.op == "!=":
            out = ldata != rdata
        elif pred.op == "<":
            out = ldata < rdata
        elif pred.op == "<=":
            out = ldata <= rdata
        elif pred.op == ">":
            out = ldata > rdata
        elif pred.op == ">=":
            out = ldata >= rdata
        else:
            raise TypeMismatchError(f"unknown comparison {pred.op!r}")
        out = np.asarray(out, dtype=np.bool_)
        out = _mask_false(out, lc)
        out = _mask_false(out, rc)
        return out
    raise TypeMismatchError(f"unknown predicate {pred!r}")


def _mask_false(out: np.ndarray, col: Column) -> np.ndarray:
    if col.mask is not None:
        out = out & ~col.mask
    return out


def _dict_equality_fast_path(pred: Cmp, rel: Relation) -> np.ndarray | None:
    """col = literal over a dictionary-encoded text column compares codes, not strings."""
    if pred.op not in ("=", "!="):
        return None
    if isinstance(pred.lhs, ColRef) and isinstance(pred.rhs, Lit):
        name, lit = pred.lhs.name, pred.rhs
    elif isinstance(pred.rhs, ColRef) and isinstance(pred.lhs, Lit):
        name, lit = pred.rhs.name, pred.lhs
    else:
        return None
    col = rel.col(name)
    if col.ctype != ColumnType.TEXT or not col.encoding_available():
        return None
    codes, cats = col.encoding()
    where = np.searchsorted(cats, lit.value) if len(cats) else 0
    if where >= len(cats) or cats[where] != lit.value:
        out = np.zeros(rel.n_rows, dtype=np.bool_)
    else:
        out = codes == where
    if pred.op == "!=":
        out = ~out & (codes < len(cats))  # null rows stay false
        return out
    return out


# -- JSON codec ----------------------------------------------------------------


def expr_to_json(expr: Expr) -> Any:
    if isinstance(expr, ColRef):
        return {"col": expr.name}
    if isinstance(expr, Lit):
        return {"lit": expr.value}
    if isinstance(expr, BinOp):
        return {"op": expr.op, "lhs": expr_to_json(expr.lhs), "rhs": expr_to_json(expr.rhs)}
    if isinstance(expr, LinearMap):
        return {
            "linmap": {"domain": list(expr.domain), "range": list(expr.out_range)},
            "arg": expr_to_json(expr.arg),
        }
    raise TypeMismatchError(f"cannot serialize expression {expr!r}")


def expr_from_json(doc: Any) -> Expr:
    if not isinstance(doc, dict):
        raise TypeMismatchError(f"bad expression document {doc!r}")
    if "col" in doc:
        return ColRef(doc["col"])
    if "lit" in doc:
        return Lit(doc["lit"])
    if "op" in doc:
        return BinOp(doc["op"], expr_from_json(doc["lhs"]), expr_from_json(doc["rhs"]))
    if "linmap" in doc:
        lm = doc["linmap"]
        return LinearMap(tuple(lm["domain"]), tuple(lm["range"]), expr_from_json(doc["arg"]))
    raise TypeMismatchError(f"bad expression document {doc!r}")


def pred_to_json(pred: Predicate) -> Any:
    if isinstance(pred, Cmp):
        return {"cmp": pred.op, "lhs": expr_to_json(pred.lhs), "rhs": expr_to_json(pred.rhs)}
    if isinstance(pred, And):
        return {"and": [pred_to_json(p) for p in pred.parts]}
    if isinstance(pred, Or):
        return {"or": [pred_to_json(p) for p in pred.parts]}
    if isinstance(pred, Not):
        return {"not": pred_to_json(pred.arg)}
    if isinstance(pred, Between):
        return {"between": {"arg": expr_to_json(pred.arg), "lo": pred.lo, "hi": pred.hi}}
    if isinstance(pred, Const):
        return {"const": pred.value}
    raise TypeMismatchError(f"cannot serialize predicate {pred!r}")


def pred_from_json(doc: Any) -> Predicate:
    if not isinstance(doc, dict):
        raise TypeMismatchError(f"bad predicate document {doc!r}")
    if "cmp" in doc:
        return Cmp(doc["cmp"], expr_from_json(doc["lhs"]), expr_from_json(doc["rhs"]))
    if "and" in doc:
        return And(tuple(pred_from_json(p) for p in doc["and"]))
    if "or" in doc:
        return Or(tuple(pred_from_json(p) for p in doc["or"]))
    if "not" in doc:
        return Not(pred_from_json(doc["not"]))
    if "between" in doc:
        b = doc["between"]
        return Between(expr_from_json(b["arg"]), b["lo"], b["hi"])
    if "const" in doc:
        return Const(bool(doc["const"]))
    raise TypeMismatchError(f"bad predicate document {doc!r}")
