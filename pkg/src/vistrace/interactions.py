"""Interactive operations assembled from trace + refresh primitives.

A session holds frozen base relations, the views evaluated over one shared
lineage-capturing workflow, and an append-only relation of interaction
events. Every interaction resolves the user's selection to mark ids, traces
backward to the shared base relations, and then either traces forward into
another view (highlighting) or re-executes the other views' plans over the
restricted inputs (cross-filtering). Events are data: replaying one re-runs
the recorded interaction against the same immutable inputs.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field
from typing import Iterable, Mapping

import numpy as np

from .errors import (
    EmptyExtentError,
    NoSharedBaseError,
    UnknownColumnError,
    UnknownEventError,
    UnknownViewError,
)
from .columns import ColumnType
from .operators import extent, node_bases
from .provenance import (
    Workflow,
    backward_trace,
    backward_trace_multi,
    evaluate,
    forward_trace,
    refresh_many,
)
from .relation import Dataset, Relation, Schema
from .viz import (
    EvaluatedView,
    Selection,
    ViewDef,
    encode_marks,
    finish_view,
    resolve_scale,
    resolve_selection,
    selection_from_json,
    selection_to_json,
)

EVENT_SCHEMA = Schema.of(
    ("eid", ColumnType.INT64),
    ("timestamp", ColumnType.INT64),
    ("source", ColumnType.TEXT),
    ("kind", ColumnType.TEXT),
    ("selection", ColumnType.TEXT),
)


@dataclass(frozen=True)
class InteractionEvent:
    eid: int
    timestamp: int  # UTC milliseconds
    source: str  # view id
    kind: str  # 'hover' | 'brush' | 'click'
    selection: Selection


def now_ms() -> int:
    return int(time.time() * 1000)


class EventLog:
    """Append-only event storage exposed as a relation of events."""

    def __init__(self):
        self._events: list[InteractionEvent] = []
        self._relation: Relation | None = None

    def append(self, timestamp: int, source: str, kind: str, selection: Selection) -> InteractionEvent:
        eid = len(self._events)
        if self._events:
            timestamp = max(timestamp, self._events[-1].timestamp)  # keep log monotonic
        ev = InteractionEvent(eid, timestamp, source, kind, selection)
        self._events.append(ev)
        self._relation = None
        return ev

    def get(self, eid: int) -> InteractionEvent:
        if not isinstance(eid, int) or eid < 0 or eid >= len(self._events):
            raise UnknownEventError(f"no event {eid!r}")
        return self._events[eid]

    def all(self, source: str | None = None) -> list[InteractionEvent]:
        if source is None:
            return list(self._events)
        return [e for e in self._events if e.source == source]

    def __len__(self) -> int:
        return len(self._events)

    def relation(self) -> Relation:
        if self._relation is None:
            rows = [
                (e.eid, e.timestamp, e.source, e.kind, json.dumps(selection_to_json(e.selection), sort_keys=True))
                for e in self._events
            ]
            self._relation = Relation.from_rows("events", EVENT_SCHEMA, rows, kind="events")
        return self._relation


@dataclass
class Session:
    id: str
    dataset: Dataset
    graph: Workflow
    views: dict[str, EvaluatedView]
    shared_bases: set[str]
    events: EventLog = field(default_factory=EventLog)

    def view(self, view_id: str) -> EvaluatedView:
        try:
            return self.views[view_id]
        except KeyError:
            raise UnknownViewError(f"no view {view_id!r} in session") from None


def create_session(dataset: Dataset, view_defs: Iterable[ViewDef], session_id: str = "s0") -> Session:
    """Evaluate all views over one shared workflow and freeze the session."""
    view_defs = list(view_defs)
    sinks = {}
    for vdef in view_defs:
        if vdef.data_sink in sinks:
            raise UnknownViewError(f"duplicate view id {vdef.id!r}")
        sinks[vdef.data_sink] = vdef.data
        sinks[vdef.mark_sink] = vdef.mark_data
    wf = evaluate(sinks, dataset.relations, capture=True)
    views = {vdef.id: finish_view(vdef, wf) for vdef in view_defs}

    usage: dict[str, int] = {}
    for vdef in view_defs:
        for b in _view_bases(vdef):
            usage[b] = usage.get(b, 0) + 1
    shared = {b for b, n in usage.items() if n >= 2}
    return Session(session_id, dataset, wf, views, shared)


def _view_bases(vdef: ViewDef) -> set[str]:
    bases = node_bases(vdef.data)
    if vdef.mark_data is not None:
        bases |= node_bases(vdef.mark_data)
    return bases


def _traced_subsets(sess: Session, view: EvaluatedView, mark_ids: np.ndarray) -> dict[str, np.ndarray]:
    """Backward-trace the selected marks to every shared base the mark plan reaches."""
    reachable = sorted(node_bases(view.vdef.mark_data) & sess.shared_bases)
    traced = backward_trace_multi(sess.graph, view.vdef.mark_sink, mark_ids, reachable)
    return {b: traced[b].rids for b in reachable}


# -- interaction vocabulary ------------------------------------------------------


def tooltip(sess: Session, view_id: str, sel: Selection, attrs: list[str]) -> list[tuple]:
    """Attribute rows of the selected groups, one per selected mark's group."""
    view = sess.view(view_id)
    for a in attrs:
        if a not in view.data.schema:
            raise UnknownColumnError(f"no column {a!r} on the view's data relation")
    ids, _ = resolve_selection(view, sel)
    traced = backward_trace(sess.graph, view.vdef.mark_sink, ids, view.vdef.data_sink)
    cols = [view.data.col(a) for a in attrs]
    return [tuple(c.value_at(int(r)) for c in cols) for r in traced.rids]


def details_on_demand(sess: Session, view_id: str, sel: Selection, detail: ViewDef) -> Relation:
    """Run a secondary plan over the provenance of the selection.

    The detail's `selection_bound` bases are restricted to the backward trace
    of the selection; its other inputs participate in full.
    """
    view = sess.view(view_id)
    ids, _ = resolve_selection(view, sel)
    subsets = {
        b: backward_trace(sess.graph, view.vdef.mark_sink, ids, b).rids
        for b in detail.selection_bound
    }
    bases = dict(sess.dataset.relations)
    for name, rids in subsets.items():
        bases[name] = bases[name].take(rids, name=name)
    out = evaluate({detail.data_sink: detail.data}, bases, capture=False)
    return out.results[detail.data]


def linked_brush(sess: Session, source_id: str, sel: Selection, target_id: str) -> np.ndarray:
    """Highlight-only linking: backward to the shared bases, forward into the target."""
    source = sess.view(source_id)
    target = sess.view(target_id)
    shared = node_bases(source.vdef.mark_data) & node_bases(target.vdef.mark_data)
    if not shared:
        raise NoSharedBaseError(f"views {source_id!r} and {target_id!r} share no base relation")
    ids, _ = resolve_selection(source, sel)
    out: list[np.ndarray] = []
    for b in sorted(shared):
        traced = backward_trace(sess.graph, source.vdef.mark_sink, ids, b)
        fwd = forward_trace(sess.graph, b, traced.rids, target.vdef.mark_sink)
        out.append(fwd.rids)
    if not out:
        return np.empty(0, dtype=np.int64)
    return np.unique(np.concatenate(out))


@dataclass
class InteractionOutcome:
    """What one interaction produced: refreshed views and/or highlight sets."""

    update_relations: dict[str, Relation]
    update_marks: dict[str, list[dict]]
    highlights: dict[str, list[int]]


def crossfilter(sess: Session, source_id: str, sel: Selection) -> dict[str, Relation]:
    """Re-aggregate every other view over the provenance of the selection."""
    return crossfilter_full(sess, source_id, sel).update_relations


def crossfilter_full(sess: Session, source_id: str, sel: Selection) -> InteractionOutcome:
    source = sess.view(source_id)
    ids, _ = resolve_selection(source, sel)
    subsets = _traced_subsets(sess, source, ids)
    others = [v for vid, v in sess.views.items() if vid != source_id]
    sink_names: list[str] = []
    for v in others:
        sink_names.append(v.vdef.data_sink)
        sink_names.append(v.vdef.mark_sink)
    refreshed = refresh_many(sess.graph, subsets, sink_names)
    relations: dict[str, Relation] = {}
    marks: dict[str, list[dict]] = {}
    for v in others:
        data_rel = refreshed[v.vdef.data_sink]
        mark_rel = refreshed[v.vdef.mark_sink]
        relations[v.id] = data_rel
        marks[v.id] = _reencode_marks(v, data_rel, mark_rel)
    return InteractionOutcome(relations, marks, {})


def _reencode_marks(view: EvaluatedView, data_rel: Relation, mark_rel: Relation) -> list[dict]:
    """Marks for refreshed data: extents recompute, the geo transform stays fixed."""
    extents = {}
    for e in view.vdef.extents:
        try:
            extents[e.name] = extent(data_rel, e.column)
        except EmptyExtentError:
            extents[e.name] = (0.0, 0.0)  # no rows left to encode with it
    scales = {name: resolve_scale(spec, extents) for name, spec in view.vdef.scales}
    shadow = EvaluatedView(
        view.vdef, view.workflow, data_rel, mark_rel, extents, scales, view.geo
    )
    return encode_marks(shadow, mark_rel, scales)


def hover_highlights(sess: Session, source_id: str, sel: Selection) -> InteractionOutcome:
    """Linked-brush highlights in every other view that shares a base."""
    highlights: dict[str, list[int]] = {}
    for vid in sess.views:
        if vid == source_id:
            continue
        try:
            ids = linked_brush(sess, source_id, sel, vid)
        except NoSharedBaseError:
            continue
        highlights[vid] = [int(i) for i in ids]
    return InteractionOutcome({}, {}, highlights)


# -- events: record / replay / history ----------------------------------------------


def record_event(sess: Session, ev: InteractionEvent) -> int:
    """Append an interaction to the events relation; returns the assigned eid."""
    view = sess.view(ev.source)  # UnknownViewError for bad sources
    resolve_selection(view, ev.selection)  # selection must be valid at append time
    stored = sess.events.append(ev.timestamp, ev.source, ev.kind, ev.selection)
    return stored.eid


def execute_interaction(sess: Session, source_id: str, kind: str, sel: Selection) -> InteractionOutcome:
    """Run the effect of one interaction: brush/click cross-filter, hover highlights."""
    if kind == "hover":
        return hover_highlights(sess, source_id, sel)
    return crossfilter_full(sess, source_id, sel)


def replay_event(sess: Session, eid: int) -> dict[str, Relation]:
    """Re-execute a recorded interaction; deterministic over the frozen inputs."""
    ev = sess.events.get(eid)
    return execute_interaction(sess, ev.source, ev.kind, ev.selection).update_relations


def replay_event_full(sess: Session, eid: int) -> tuple[InteractionEvent, InteractionOutcome]:
    ev = sess.events.get(eid)
    return ev, execute_interaction(sess, ev.source, ev.kind, ev.selection)


def history(
    sess: Session, source_filter: str | None = None
) -> list[tuple[InteractionEvent, dict[str, Relation]]]:
    """Events in eid order, each paired with its replayed relations."""
    return [(ev, replay_event(sess, ev.eid)) for ev in sess.events.all(source_filter)]


def event_from_row(row: Mapping) -> InteractionEvent:
    """Rebuild an event from its relation row (selection stored as JSON text)."""
    return InteractionEvent(
        eid=int(row["eid"]),
        timestamp=int(row["timestamp"]),
        source=row["source"],
        kind=row["kind"],
        selection=selection_from_json(json.loads(row["selection"])),
    )
