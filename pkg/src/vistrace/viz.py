"""Declarative views: data pipeline + value ranges + mark encoding.

A view definition names a data-processing plan, the extents feeding its
scales, and a mark encoder whose rows become drawable marks (mark id = row
id of the mark relation). Scales are invertible for positions, which is what
turns a pixel-space range selection back into a data-space predicate.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Mapping, Union

import numpy as np

from .errors import (
    NotInvertibleError,
    RowIdOutOfRangeError,
    SelectionOutOfViewportError,
    TypeMismatchError,
)
from .expressions import (
    And,
    Between,
    ColRef,
    Predicate,
    check_predicate,
    eval_predicate,
    pred_from_json,
    pred_to_json,
)
from .operators import ColumnType, Node, extent, node_from_json, node_to_json
from .provenance import Workflow, evaluate
from .relation import Relation

# default ramp: white to dark green
DEFAULT_RAMP = ((255.0, 255.0, 255.0), (0.0, 100.0, 0.0))

RGB = tuple[float, float, float]


@dataclass(frozen=True)
class ScaleSpec:
    """Scale declaration; domain is a literal (mi, mx) or the name of an extent."""

    kind: str  # 'linear_position' | 'linear_color_ramp'
    domain: Union[tuple[float, float], str]
    out_range: Union[tuple[float, float], tuple[RGB, RGB]]


@dataclass(frozen=True)
class Scale:
    """A scale with a concrete numeric domain."""

    kind: str
    domain: tuple[float, float]
    out_range: tuple

    @property
    def degenerate(self) -> bool:
        return self.domain[0] == self.domain[1]

    def fraction(self, v: float) -> float:
        mi, mx = self.domain
        if mi == mx:
            return 0.5
        t = (v - mi) / (mx - mi)
        return 0.0 if t < 0.0 else (1.0 if t > 1.0 else t)


def apply_scale(s: Scale, v: float):
    """Map a domain value into the range, clamping out-of-domain inputs."""
    t = s.fraction(v)
    if s.kind == "linear_position":
        lo, hi = s.out_range
        return lo + t * (hi - lo)
    if s.kind == "linear_color_ramp":
        (r0, g0, b0), (r1, g1, b1) = s.out_range
        return (r0 + t * (r1 - r0), g0 + t * (g1 - g0), b0 + t * (b1 - b0))
    raise TypeMismatchError(f"unknown scale kind {s.kind!r}")


def invert_scale(s: Scale, pixel: float) -> float:
    """Exact linear inverse of apply_scale on the range (positions only)."""
    if s.kind != "linear_position":
        raise NotInvertibleError("only position scales are invertible")
    if s.degenerate:
        raise NotInvertibleError("degenerate domain has no inverse")
    lo, hi = s.out_range
    mi, mx = s.domain
    if lo == hi:
        raise NotInvertibleError("degenerate range has no inverse")
    p = min(max(pixel, min(lo, hi)), max(lo, hi))
    return mi + (p - lo) * (mx - mi) / (hi - lo)


# -- channels and marks --------------------------------------------------------------


@dataclass(frozen=True)
class ColumnChannel:
    col: str


@dataclass(frozen=True)
class ScaledChannel:
    scale: str
    col: str


@dataclass(frozen=True)
class ConstChannel:
    value: Any


@dataclass(frozen=True)
class GeoChannel:
    """Polygon geometry, mapped to pixels by the view's fixed affine transform."""

    col: str


Channel = Union[ColumnChannel, ScaledChannel, ConstChannel, GeoChannel]

REQUIRED_CHANNELS = {
    "polygon": ("geometry", "fill"),
    "rect": ("x", "width", "height"),
    "circle": ("x", "y"),
}


@dataclass(frozen=True)
class MarkSpec:
    kind: str  # 'polygon' | 'rect' | 'circle'
    channels: tuple[tuple[str, Channel], ...]

    def channel_map(self) -> dict[str, Channel]:
        return dict(self.channels)


@dataclass(frozen=True)
class ExtentSpec:
    """Named (min, max) over a column of the view's data relation."""

    name: str
    column: str


@dataclass(frozen=True)
class ViewDef:
    id: str
    data: Node
    mark_data: Node | None
    extents: tuple[ExtentSpec, ...]
    scales: tuple[tuple[str, ScaleSpec], ...]
    mark: MarkSpec | None
    viewport: tuple[float, float]
    selection_bound: tuple[str, ...] = ()  # bases a detail workflow restricts

    @property
    def data_sink(self) -> str:
        return f"{self.id}/data"

    @property
    def mark_sink(self) -> str:
        return f"{self.id}/marks"


# -- selections ------------------------------------------------------------------------


@dataclass(frozen=True)
class Items:
    ids: tuple[int, ...]


@dataclass(frozen=True)
class Range:
    x0: float
    y0: float
    x1: float
    y1: float


@dataclass(frozen=True)
class DataPredicate:
    pred: Predicate


Selection = Union[Items, Range, DataPredicate]


@dataclass(frozen=True)
class GeoTransform:
    """Planar lat/lon -> pixel affine fit once per view at build time."""

    lat_min: float
    lat_max: float
    lon_min: float
    lon_max: float
    width: float
    height: float

    def to_pixel(self, lat: float, lon: float) -> tuple[float, float]:
        dlon = self.lon_max - self.lon_min or 1.0
        dlat = self.lat_max - self.lat_min or 1.0
        x = (lon - self.lon_min) / dlon * self.width
        y = (self.lat_max - lat) / dlat * self.height  # north up
        return x, y

    def rings_to_pixels(self, rings) -> list[list[list[float]]]:
        out = []
        for ring in rings:
            out.append([list(self.to_pixel(lat, lon)) for lat, lon in ring])
        return out


@dataclass
class EvaluatedView:
    """A built view: frozen workflow, data + mark relations, resolved marks."""

    vdef: ViewDef
    workflow: Workflow
    data: Relation
    mark_rel: Relation
    extents: dict[str, tuple[float, float]]
    scales: dict[str, Scale]
    geo: GeoTransform | None
    marks: list[dict] = field(default_factory=list)

    @property
    def id(self) -> str:
        return self.vdef.id


def build_view(vdef: ViewDef, bases: Mapping[str, Relation]) -> EvaluatedView:
    """Evaluate the view's plan with lineage capture and encode its marks."""
    if vdef.mark_data is None or vdef.mark is None:
        raise TypeMismatchError(f"view {vdef.id!r} has no mark encoder")
    sinks = {vdef.data_sink: vdef.data, vdef.mark_sink: vdef.mark_data}
    wf = evaluate(sinks, dict(bases), capture=True)
    return finish_view(vdef, wf)


def finish_view(vdef: ViewDef, wf: Workflow) -> EvaluatedView:
    """Complete a view over an already-evaluated workflow (shared across views)."""
    data = wf.results[wf.sinks[vdef.data_sink]]
    mark_rel = wf.results[wf.sinks[vdef.mark_sink]]
    extents = {e.name: extent(data, e.column) for e in vdef.extents}
    scales = {name: resolve_scale(spec, extents) for name, spec in vdef.scales}
    _validate_mark(vdef, mark_rel, scales)
    geo = _fit_geo(vdef, mark_rel)
    view = EvaluatedView(vdef, wf, data, mark_rel, extents, scales, geo)
    view.marks = encode_marks(view, mark_rel, scales)
    return view


def resolve_scale(spec: ScaleSpec, extents: Mapping[str, tuple[float, float]]) -> Scale:
    if isinstance(spec.domain, str):
        if spec.domain not in extents:
            raise TypeMismatchError(f"scale references unknown extent {spec.domain!r}")
        domain = extents[spec.domain]
    else:
        domain = spec.domain
    mi, mx = float(domain[0]), float(domain[1])
    if mi > mx:
        raise TypeMismatchError(f"scale domain ({mi}, {mx}) has min > max")
    return Scale(spec.kind, (mi, mx), spec.out_range)


def _validate_mark(vdef: ViewDef, mark_rel: Relation, scales: Mapping[str, Scale]) -> None:
    chans = vdef.mark.channel_map()
    for required in REQUIRED_CHANNELS[vdef.mark.kind]:
        if required not in chans:
            raise TypeMismatchError(f"{vdef.mark.kind} mark needs channel {required!r}")
    for name, ch in chans.items():
        if isinstance(ch, (ColumnChannel, ScaledChannel, GeoChannel)):
            if ch.col not in mark_rel.schema:
                raise TypeMismatchError(f"channel {name!r} references unknown column {ch.col!r}")
        if isinstance(ch, GeoChannel):
            if mark_rel.schema.type_of(ch.col) != ColumnType.POLYGONS:
                raise TypeMismatchError(f"geometry channel needs a polygon column, got {ch.col!r}")
        if isinstance(ch, ScaledChannel) and ch.scale not in scales:
            raise TypeMismatchError(f"channel {name!r} references unknown scale {ch.scale!r}")


def _fit_geo(vdef: ViewDef, mark_rel: Relation) -> GeoTransform | None:
    geo_cols = [ch.col for _, ch in vdef.mark.channels if isinstance(ch, GeoChannel)]
    if not geo_cols:
        return None
    lat_min = lon_min = float("inf")
    lat_max = lon_max = float("-inf")
    col = mark_rel.col(geo_cols[0])
    for i in range(mark_rel.n_rows):
        rings = col.value_at(i)
        if rings is None:
            continue
        for ring in rings:
            for lat, lon in ring:
                lat_min = min(lat_min, lat)
                lat_max = max(lat_max, lat)
                lon_min = min(lon_min, lon)
                lon_max = max(lon_max, lon)
    if lat_min > lat_max:  # no polygons at all
        lat_min = lat_max = lon_min = lon_max = 0.0
    w, h = vdef.viewport
    return GeoTransform(lat_min, lat_max, lon_min, lon_max, w, h)


def encode_marks(
    view: EvaluatedView, mark_rel: Relation, scales: Mapping[str, Scale]
) -> list[dict]:
    """One self-contained mark per mark-relation row; mark id = row id."""
    vdef = view.vdef
    chans = vdef.mark.channels
    w, h = vdef.viewport
    marks = []
    for i in range(mark_rel.n_rows):
        resolved: dict[str, Any] = {}
        for name, ch in chans:
            if isinstance(ch, ConstChannel):
                resolved[name] = ch.value
            elif isinstance(ch, ColumnChannel):
                resolved[name] = mark_rel.col(ch.col).value_at(i)
            elif isinstance(ch, GeoChannel):
                rings = mark_rel.col(ch.col).value_at(i)
                resolved[name] = view.geo.rings_to_pixels(rings) if rings is not None else None
            elif isinstance(ch, ScaledChannel):
                v = mark_rel.col(ch.col).value_at(i)
                if v is None:
                    resolved[name] = None
                else:
                    out = apply_scale(scales[ch.scale], float(v))
                    resolved[name] = _rgb_hex(out) if scales[ch.scale].kind == "linear_color_ramp" else out
        if vdef.mark.kind == "rect" and "y" not in resolved:
            height = resolved.get("height")
            resolved["y"] = (h - height) if height is not None else None  # bars grow up
        if vdef.mark.kind == "circle" and "radius" not in resolved:
            resolved["radius"] = 4.0
        marks.append({"id": i, "kind": vdef.mark.kind, "channels": resolved})
    return marks


def _rgb_hex(rgb: tuple[float, float, float]) -> str:
    r, g, b = (int(round(max(0.0, min(255.0, c)))) for c in rgb)
    return f"#{r:02x}{g:02x}{b:02x}"


def mark_boxes(marks: list[dict], kind: str) -> np.ndarray:
    """Pixel hit boxes, one row [x0, y0, x1, y1] per mark; NaN where undefined."""
    boxes = np.full((len(marks), 4), np.nan)
    for i, m in enumerate(marks):
        ch = m["channels"]
        if kind == "rect":
            x, y, width, height = (ch.get(k) for k in ("x", "y", "width", "height"))
            if None in (x, y, width, height):
                continue
            boxes[i] = (x, y, x + width, y + height)
        elif kind == "circle":
            x, y = ch.get("x"), ch.get("y")
            r = ch.get("radius", 4.0)
            if None in (x, y):
                continue
            boxes[i] = (x - r, y - r, x + r, y + r)
        elif kind == "polygon":
            rings = ch.get("geometry")
            if not rings:
                continue
            xs = [p[0] for ring in rings for p in ring]
            ys = [p[1] for ring in rings for p in ring]
            boxes[i] = (min(xs), min(ys), max(xs), max(ys))
    return boxes


def resolve_selection(
    view: EvaluatedView, sel: Selection
) -> tuple[np.ndarray, Predicate | None]:
    """Resolve a selection to mark ids, plus the inverted data predicate for ranges.

    Range boxes over position-scaled x/y channels invert through the scales
    into interval-containment predicates the caller may relax further; range
    boxes over polygon geometry resolve by bounding-box intersection only.
    """
    n = len(view.marks)
    if isinstance(sel, Items):
        ids = np.array(sorted(set(int(i) for i in sel.ids)), dtype=np.int64)
        if ids.size and (ids[0] < 0 or ids[-1] >= n):
            raise RowIdOutOfRangeError("mark id out of range")
        return ids, None

    if isinstance(sel, DataPredicate):
        check_predicate(sel.pred, view.mark_rel.schema)
        mask = eval_predicate(sel.pred, view.mark_rel)
        return np.nonzero(mask)[0].astype(np.int64), None

    if isinstance(sel, Range):
        w, h = view.vdef.viewport
        if sel.x0 > sel.x1 or sel.y0 > sel.y1:
            raise SelectionOutOfViewportError("range box has inverted corners")
        if sel.x1 < 0 or sel.y1 < 0 or sel.x0 > w or sel.y0 > h:
            raise SelectionOutOfViewportError("range box lies outside the viewport")
        boxes = mark_boxes(view.marks, view.vdef.mark.kind)
        with np.errstate(invalid="ignore"):
            hit = (
                (boxes[:, 0] <= sel.x1)
                & (boxes[:, 2] >= sel.x0)
                & (boxes[:, 1] <= sel.y1)
                & (boxes[:, 3] >= sel.y0)
            )
        ids = np.nonzero(hit)[0].astype(np.int64)
        pred = _invert_range(view, sel)
        return ids, pred

    raise TypeMismatchError(f"unknown selection {sel!r}")


def _invert_range(view: EvaluatedView, sel: Range) -> Predicate | None:
    """Interval-containment predicate from inverting position scales on x/y."""
    chans = view.vdef.mark.channel_map()
    if any(isinstance(ch, GeoChannel) for ch in chans.values()):
        return None  # group selection over polygons: ids only
    parts = []
    for axis, plo, phi in (("x", sel.x0, sel.x1), ("y", sel.y0, sel.y1)):
        ch = chans.get(axis)
        if not isinstance(ch, ScaledChannel):
            continue
        scale = view.scales[ch.scale]
        if scale.kind != "linear_position" or scale.degenerate:
            continue
        a = invert_scale(scale, plo)
        b = invert_scale(scale, phi)
        lo, hi = (a, b) if a <= b else (b, a)
        parts.append(Between(ColRef(ch.col), lo, hi))
    if not parts:
        return None
    return parts[0] if len(parts) == 1 else And(tuple(parts))


# -- JSON codecs -------------------------------------------------------------------


def selection_to_json(sel: Selection) -> dict:
    if isinstance(sel, Items):
        return {"type": "items", "ids": list(sel.ids)}
    if isinstance(sel, Range):
        return {"type": "range", "box": [sel.x0, sel.y0, sel.x1, sel.y1]}
    if isinstance(sel, DataPredicate):
        return {"type": "predicate", "pred": pred_to_json(sel.pred)}
    raise TypeMismatchError(f"cannot serialize selection {sel!r}")


def selection_from_json(doc: dict) -> Selection:
    if not isinstance(doc, dict) or "type" not in doc:
        raise SelectionOutOfViewportError(f"bad selection document {doc!r}")
    kind = doc["type"]
    if kind == "items":
        return Items(tuple(int(i) for i in doc["ids"]))
    if kind == "range":
        x0, y0, x1, y1 = doc["box"]
        return Range(float(x0), float(y0), float(x1), float(y1))
    if kind == "predicate":
        return DataPredicate(pred_from_json(doc["pred"]))
    raise SelectionOutOfViewportError(f"unknown selection type {kind!r}")


def _channel_to_json(ch: Channel) -> dict:
    if isinstance(ch, ColumnChannel):
        return {"col": ch.col}
    if isinstance(ch, ScaledChannel):
        return {"scale": ch.scale, "col": ch.col}
    if isinstance(ch, ConstChannel):
        return {"const": ch.value}
    if isinstance(ch, GeoChannel):
        return {"geo": ch.col}
    raise TypeMismatchError(f"cannot serialize channel {ch!r}")


def _channel_from_json(doc: dict) -> Channel:
    if "geo" in doc:
        return GeoChannel(doc["geo"])
    if "scale" in doc:
        return ScaledChannel(doc["scale"], doc["col"])
    if "const" in doc:
        return ConstChannel(doc["const"])
    if "col" in doc:
        return ColumnChannel(doc["col"])
    raise TypeMismatchError(f"bad channel document {doc!r}")


def _scale_spec_to_json(spec: ScaleSpec) -> dict:
    domain = spec.domain if isinstance(spec.domain, str) else list(spec.domain)
    if spec.kind == "linear_color_ramp":
        rng = [list(spec.out_range[0]), list(spec.out_range[1])]
    else:
        rng = list(spec.out_range)
    return {"kind": spec.kind, "domain": domain, "range": rng}


def _scale_spec_from_json(doc: dict) -> ScaleSpec:
    domain = doc["domain"] if isinstance(doc["domain"], str) else tuple(doc["domain"])
    if doc["kind"] == "linear_color_ramp":
        rng = (tuple(doc["range"][0]), tuple(doc["range"][1]))
    else:
        rng = tuple(doc["range"])
    return ScaleSpec(doc["kind"], domain, rng)


def viewdef_to_json(vdef: ViewDef) -> dict:
    doc: dict[str, Any] = {
        "id": vdef.id,
        "viewport": list(vdef.viewport),
        "data": node_to_json(vdef.data),
        "extents": [{"name": e.name, "col": e.column} for e in vdef.extents],
        "scales": [{"name": n, **_scale_spec_to_json(s)} for n, s in vdef.scales],
    }
    if vdef.mark_data is not None:
        doc["mark_data"] = node_to_json(vdef.mark_data)
    if vdef.mark is not None:
        doc["mark"] = {
            "kind": vdef.mark.kind,
            "channels": {n: _channel_to_json(c) for n, c in vdef.mark.channels},
        }
    if vdef.selection_bound:
        doc["selection_bound"] = list(vdef.selection_bound)
    return doc


def viewdef_from_json(doc: dict) -> ViewDef:
    mark = None
    if "mark" in doc:
        channels = tuple(
            (n, _channel_from_json(c)) for n, c in sorted(doc["mark"]["channels"].items())
        )
        mark = MarkSpec(doc["mark"]["kind"], channels)
    return ViewDef(
        id=doc["id"],
        data=node_from_json(doc["data"]),
        mark_data=node_from_json(doc["mark_data"]) if "mark_data" in doc else None,
        extents=tuple(ExtentSpec(e["name"], e["col"]) for e in doc.get("extents", ())),
        scales=tuple((s["name"], _scale_spec_from_json(s)) for s in doc.get("scales", ())),
        mark=mark,
        viewport=tuple(doc.get("viewport", (800, 500))),
        selection_bound=tuple(doc.get("selection_bound", ())),
    )
