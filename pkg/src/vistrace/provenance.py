"""Workflow evaluation and whole-workflow provenance tracing.

A workflow is a DAG of operator nodes over named base relations. Nodes are
immutable value objects, so structurally identical subplans from different
views collapse into one evaluation via the memo, and the per-operator lineage
indexes compose into whole-workflow traces.

Traces walk the DAG once per relation: the rid set for a relation is fully
accumulated (union over all arriving paths) before its operator's index is
consulted, so trace cost is bounded by index size.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Mapping

import numpy as np

from .errors import (
    EngineError,
    RowIdOutOfRangeError,
    UnknownRelationError,
    UnreachableTargetError,
)
from .operators import (
    BaseRef,
    LineageIndex,
    Node,
    apply_operator,
    fast_unique,
    node_children,
)
from .relation import Relation, as_rid_array


@dataclass(frozen=True)
class TraceResult:
    """Row ids of one relation reached by a trace."""

    relation: str
    rids: np.ndarray  # sorted; unique under which-semantics
    semantics: str  # 'which' | 'bag'

    def rid_set(self) -> set[int]:
        return {int(r) for r in self.rids}

    def __len__(self) -> int:
        return len(self.rids)


class Workflow:
    """An evaluated operator DAG: relations, lineage, and named endpoints."""

    def __init__(
        self,
        bases: dict[str, Relation],
        sinks: dict[str, Node],
        results: dict[Node, Relation],
        lineage: dict[Node, LineageIndex],
        consumers: dict[Node, list[Node]],
        captured: bool,
    ):
        self.bases = bases
        self.sinks = sinks
        self.results = results
        self.lineage = lineage
        self.consumers = consumers
        self.captured = captured

    def resolve(self, name: str) -> Node:
        if name in self.sinks:
            return self.sinks[name]
        if name in self.bases:
            return BaseRef(name)
        raise UnknownRelationError(f"no relation {name!r} in workflow")

    def relation(self, name: str) -> Relation:
        return self.results[self.resolve(name)]

    def sink_names(self) -> list[str]:
        return sorted(self.sinks)


def evaluate(
    sinks: Mapping[str, Node], bases: Mapping[str, Relation], capture: bool = True
) -> Workflow:
    """Evaluate every sink bottom-up with node-level sharing.

    With capture=True each operator's lineage index is retained; the output
    values are identical either way.
    """
    results: dict[Node, Relation] = {}
    lineage: dict[Node, LineageIndex] = {}
    consumers: dict[Node, list[Node]] = {}

    def rec(node: Node) -> Relation:
        hit = results.get(node)
        if hit is not None:
            return hit
        if isinstance(node, BaseRef):
            if node.name not in bases:
                raise UnknownRelationError(f"no base relation {node.name!r}")
            rel = bases[node.name]
        else:
            children = node_children(node)
            inputs = tuple(rec(c) for c in children)
            rel, idx = apply_operator(node, inputs)
            if capture:
                lineage[node] = idx
            for c in children:
                lst = consumers.setdefault(c, [])
                if node not in lst:
                    lst.append(node)
        results[node] = rel
        return rel

    for node in sinks.values():
        rec(node)
    return Workflow(dict(bases), dict(sinks), results, lineage, consumers, capture)


def _check_rids(rids, rel: Relation) -> np.ndarray:
    arr = as_rid_array(rids)
    if arr.size and (arr[0] < 0 or arr[-1] >= rel.n_rows):
        raise RowIdOutOfRangeError(f"row id out of range for {rel.n_rows}-row relation")
    return arr


def _relation_of(wf: Workflow, node: Node) -> Relation:
    rel = wf.results.get(node)
    if rel is None and isinstance(node, BaseRef):
        rel = wf.bases[node.name]
    return rel


def _backward_reachable(node: Node) -> set[Node]:
    seen: set[Node] = set()
    stack = [node]
    while stack:
        n = stack.pop()
        if n in seen:
            continue
        seen.add(n)
        stack.extend(node_children(n))
    return seen


def backward_trace(
    wf: Workflow, sink: str, out_rids, target: str, semantics: str = "which"
) -> TraceResult:
    """Input rows of `target` that contribute to `out_rids` of `sink`.

    Which-semantics (the default) deduplicates; bag semantics keeps one entry
    per derivation path.
    """
    return backward_trace_multi(wf, sink, out_rids, [target], semantics)[target]


def backward_trace_multi(
    wf: Workflow, sink: str, out_rids, targets: Iterable[str], semantics: str = "which"
) -> dict[str, TraceResult]:
    """Backward trace to several targets in one walk over the lineage DAG."""
    if not wf.captured:
        raise EngineError("workflow was evaluated without lineage capture")
    sink_node = wf.resolve(sink)
    rids = _check_rids(out_rids, _relation_of(wf, sink_node))
    region = _backward_reachable(sink_node)
    collect: dict[Node, list[str]] = {}
    for name in targets:
        node = wf.resolve(name)
        if node not in region:
            raise UnreachableTargetError(f"{name!r} is not reachable backward from {sink!r}")
        collect.setdefault(node, []).append(name)

    pending: dict[Node, int] = {}
    for p in region:
        for c in node_children(p):
            pending[c] = pending.get(c, 0) + 1

    acc: dict[Node, list[np.ndarray]] = {sink_node: [rids]}
    queue: list[Node] = [sink_node]
    found: dict[str, np.ndarray] = {}
    while queue:
        n = queue.pop()
        merged = _merge(acc.pop(n, []), _relation_of(wf, n).n_rows, semantics)
        for name in collect.get(n, ()):
            found[name] = merged
        idx = wf.lineage.get(n)
        if idx is None:
            continue  # base relations have no inputs
        for child, side in zip(node_children(n), idx.sides):
            acc.setdefault(child, []).append(side.backward_gather(merged))
            pending[child] -= 1
            if pending[child] == 0:
                queue.append(child)
    empty = np.empty(0, np.int64)
    return {name: TraceResult(name, found.get(name, empty), semantics) for name in targets}


def forward_trace(
    wf: Workflow, source: str, in_rids, sink: str, semantics: str = "which"
) -> TraceResult:
    """Rows of `sink` to which any of `in_rids` of `source` contribute."""
    if not wf.captured:
        raise EngineError("workflow was evaluated without lineage capture")
    source_node = wf.resolve(source)
    sink_node = wf.resolve(sink)
    region = _backward_reachable(sink_node)
    if source_node not in region:
        raise UnreachableTargetError(f"{sink!r} is not reachable forward from {source!r}")
    rids = _check_rids(in_rids, _relation_of(wf, source_node))
    if sink_node == source_node:
        return TraceResult(sink, rids, semantics)

    # keep only nodes lying on some source -> sink path
    on_path: dict[Node, bool] = {}

    def reaches_source(n: Node) -> bool:
        if n == source_node:
            return True
        hit = on_path.get(n)
        if hit is not None:
            return hit
        ok = any(reaches_source(c) for c in node_children(n))
        on_path[n] = ok
        return ok

    relevant = {n for n in region if reaches_source(n)}

    pending: dict[Node, int] = {}
    for p in relevant:
        for c in node_children(p):
            if c in relevant:
                pending[p] = pending.get(p, 0) + 1

    acc: dict[Node, list[np.ndarray]] = {source_node: [rids]}
    queue: list[Node] = [source_node]
    result: np.ndarray | None = None
    while queue:
        n = queue.pop()
        merged = _merge(acc.pop(n, []), wf.results[n].n_rows, semantics)
        if n == sink_node:
            result = merged
            continue
        for p in wf.consumers.get(n, []):
            if p not in relevant:
                continue
            idx = wf.lineage[p]
            for child, side in zip(node_children(p), idx.sides):
                if child == n:
                    acc.setdefault(p, []).append(side.forward_gather(merged))
                    pending[p] -= 1
                    if pending[p] == 0:
                        queue.append(p)
    return TraceResult(sink, result if result is not None else np.empty(0, np.int64), semantics)


def _merge(parts: list[np.ndarray], domain: int, semantics: str) -> np.ndarray:
    if not parts:
        return np.empty(0, dtype=np.int64)
    merged = parts[0] if len(parts) == 1 else np.concatenate(parts)
    if semantics == "which":
        return fast_unique(merged, domain)
    return np.sort(merged, kind="stable")


def restrict_bases(wf: Workflow, subsets: Mapping[str, Iterable[int] | np.ndarray]) -> dict[str, Relation]:
    bases = dict(wf.bases)
    for name, rids in subsets.items():
        if name not in wf.bases:
            raise UnknownRelationError(f"no base relation {name!r} in workflow")
        base = wf.bases[name]
        bases[name] = base.take(as_rid_array(rids, base.n_rows), name=base.name)
    return bases


def refresh(wf: Workflow, subsets: Mapping[str, Iterable[int] | np.ndarray], sink: str) -> Relation:
    """Recompute `sink` with the listed base relations restricted to rid subsets.

    Full recomputation over the restricted inputs, not incremental patching;
    unlisted bases participate in full. The original workflow is untouched.
    """
    return refresh_many(wf, subsets, [sink])[sink]


def refresh_many(
    wf: Workflow, subsets: Mapping[str, Iterable[int] | np.ndarray], sinks: Iterable[str]
) -> dict[str, Relation]:
    """Refresh several sinks in one memoized pass (shared subplans evaluate once)."""
    wanted = {}
    for name in sinks:
        if name not in wf.sinks:
            raise UnknownRelationError(f"no sink {name!r} in workflow")
        wanted[name] = wf.sinks[name]
    bases = restrict_bases(wf, subsets)
    sub = evaluate(wanted, bases, capture=False)
    return {name: sub.results[node] for name, node in wanted.items()}
