"""Benchmark harness: synthetic flight data, a six-view crossfilter session,
and latency / capture-overhead measurements.

CLI:
    bench generate --rows N --seed S --out DIR [--airlines A --airports P]
    bench script   --data DIR --steps N --seed S --out FILE
    bench run      --data DIR --script FILE --reps K [--json] [--no-http]

`run` first asserts, on a 1k-row sample, that crossfilter output matches the
predicate-rewrite oracle, then times backward/forward traces and end-to-end
crossfilter both in-process and over HTTP. The first repetition is warm-up
and excluded from the percentiles.
"""

from __future__ import annotations

import argparse
import contextlib
import json
import platform
import random
import socket
import sys
import threading
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .columns import ColumnType
from .errors import EngineError
from .expressions import Cmp, ColRef, Lit, col_in
from .interactions import Session, create_session, crossfilter_full
from .operators import AggSpec, BaseRef, Filter, GroupAgg, Join, Project
from .provenance import backward_trace, forward_trace, evaluate
from .reference import relation_rows, rewrite_with_predicate, run_reference
from .relation import Dataset, Schema
from .viz import (
    ColumnChannel,
    ConstChannel,
    ExtentSpec,
    GeoChannel,
    Items,
    MarkSpec,
    Range,
    ScaleSpec,
    ScaledChannel,
    Selection,
    ViewDef,
    resolve_selection,
    selection_from_json,
    selection_to_json,
    viewdef_to_json,
)

T = ColumnType

FLIGHT_SCHEMAS: dict[str, Schema] = {
    "ontime": Schema.of(
        ("fid", T.INT64), ("y", T.INT64), ("m", T.INT64), ("d", T.INT64), ("h", T.INT64),
        ("adelay", T.FLOAT64), ("ddelay", T.FLOAT64),
        ("src_apid", T.INT64), ("dst_apid", T.INT64), ("alid", T.INT64),
    ),
    "airlines": Schema.of(("alid", T.INT64), ("name", T.TEXT), ("active", T.TEXT)),
    "airports": Schema.of(
        ("apid", T.INT64), ("name", T.TEXT), ("lat", T.FLOAT64), ("lon", T.FLOAT64),
        ("elevation", T.FLOAT64), ("city", T.TEXT), ("state", T.TEXT), ("country", T.TEXT),
    ),
    "shapes": Schema.of(("state", T.TEXT), ("polygons", T.POLYGONS)),
}

STATES = [
    "AL", "AK", "AZ", "AR", "CA", "CO", "CT", "DE", "FL", "GA",
    "HI", "ID", "IL", "IN", "IA", "KS", "KY", "LA", "ME", "MD",
    "MA", "MI", "MN", "MS", "MO", "MT", "NE", "NV", "NH", "NJ",
    "NM", "NY", "NC", "ND", "OH", "OK", "OR", "PA", "RI", "SC",
    "SD", "TN", "TX", "UT", "VT", "VA", "WA", "WV", "WI", "WY",
]


# -- synthetic data -----------------------------------------------------------------


def generate(rows: int, seed: int, out_dir: str | Path, n_airlines: int = 20, n_airports: int = 400) -> None:
    """Write deterministic ontime/airlines/airports/shapes CSVs; all FKs resolve."""
    if rows <= 0:
        raise ValueError("rows must be positive")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rng = random.Random(seed)

    lines = ["alid,name,active"]
    for alid in range(1, n_airlines + 1):
        active = "Y" if rng.random() < 0.7 else "N"
        lines.append(f"{alid},Airline {alid},{active}")
    (out / "airlines.csv").write_text("\n".join(lines) + "\n", encoding="utf-8")

    # states tile a 10x5 grid over the continental bounding box
    cells = {}
    for i, st in enumerate(STATES):
        col, row_ = i % 10, i // 10
        lon0 = -124.0 + col * 5.7
        lat0 = 25.0 + row_ * 4.8
        cells[st] = (lat0, lat0 + 4.6, lon0, lon0 + 5.5)

    lines = ["state,polygons"]
    for st in STATES:
        la0, la1, lo0, lo1 = cells[st]
        poly = [[[la1, lo0], [la1, lo1], [la0, lo1], [la0, lo0]]]
        cell = json.dumps(poly, separators=(",", ":"))
        lines.append(f'{st},"{cell}"')
    (out / "shapes.csv").write_text("\n".join(lines) + "\n", encoding="utf-8")

    lines = ["apid,name,lat,lon,elevation,city,state,country"]
    for apid in range(1, n_airports + 1):
        st = STATES[(apid - 1) % len(STATES)]
        la0, la1, lo0, lo1 = cells[st]
        lat = round(rng.uniform(la0 + 0.1, la1 - 0.1), 4)
        lon = round(rng.uniform(lo0 + 0.1, lo1 - 0.1), 4)
        elev = round(rng.uniform(0, 2000), 1)
        city = f"{st} city {1 + (apid - 1) // len(STATES) % 4}"
        lines.append(f"{apid},AP{apid},{lat},{lon},{elev},{city},{st},US")
    (out / "airports.csv").write_text("\n".join(lines) + "\n", encoding="utf-8")

    with (out / "ontime.csv").open("w", encoding="utf-8") as f:
        f.write("fid,y,m,d,h,adelay,ddelay,src_apid,dst_apid,alid\n")
        chunk: list[str] = []
        for fid in range(1, rows + 1):
            y = rng.choice((2006, 2007, 2008))
            m = rng.randint(1, 12)
            d = rng.randint(1, 28)
            h = rng.randint(0, 23)
            dd = round(max(-10.0, rng.gauss(12.0, 15.0)), 1)
            ad = round(max(-10.0, dd + rng.gauss(0.0, 8.0)), 1)
            src = rng.randint(1, n_airports)
            dst = rng.randint(1, n_airports)
            alid = rng.randint(1, n_airlines)
            chunk.append(f"{fid},{y},{m},{d},{h},{ad},{dd},{src},{dst},{alid}")
            if len(chunk) == 65536:
                f.write("\n".join(chunk) + "\n")
                chunk.clear()
        if chunk:
            f.write("\n".join(chunk) + "\n")


def load_flight_dataset(data_dir: str | Path) -> Dataset:
    ds = Dataset(str(data_dir))
    for name in ("ontime", "airlines", "airports", "shapes"):
        path = Path(data_dir) / f"{name}.csv"
        ds.ingest_csv(path.read_bytes(), FLIGHT_SCHEMAS[name], name)
    return ds


# -- the six-view session ------------------------------------------------------------

BAR_VIEWS = [("by_airline", "alid"), ("by_hour", "h"), ("by_day", "d"), ("by_month", "m"), ("by_year", "y")]
# items-selection predicate rewrites: view key column -> base relation owning it
VIEW_KEY_BASE = {"by_state": ("state", "airports"), **{vid: (key, "ontime") for vid, key in BAR_VIEWS}}

BAR_W, BAR_H = 600.0, 280.0
MAP_W, MAP_H = 780.0, 460.0


def flight_views() -> list[ViewDef]:
    """Fig-1-style session: choropleth by state plus five aggregate bar views."""
    slim = Project(
        BaseRef("ontime"),
        tuple((ColRef(c), c) for c in ("alid", "src_apid", "h", "d", "m", "y", "ddelay", "adelay")),
    )
    active = Filter(BaseRef("airlines"), Cmp("=", ColRef("active"), Lit("Y")))
    j1 = Join(slim, active, "alid", "alid")
    j2 = Join(j1, Project(BaseRef("airports"), ((ColRef("apid"), "apid"), (ColRef("state"), "state"))),
              "src_apid", "apid")

    views = []
    q1 = GroupAgg(j2, ("state",), (
        AggSpec("COUNT", None, "cnt"),
        AggSpec("AVG", "ddelay", "avg_ddelay"),
        AggSpec("AVG", "adelay", "avg_adelay"),
    ))
    marks = Join(q1, BaseRef("shapes"), "state", "state")
    views.append(ViewDef(
        id="by_state",
        data=q1,
        mark_data=marks,
        extents=(ExtentSpec("cnt_ext", "cnt"),),
        scales=(("fill", ScaleSpec("linear_color_ramp", "cnt_ext", ((255.0, 255.0, 255.0), (0.0, 100.0, 0.0)))),),
        mark=MarkSpec("polygon", (("geometry", GeoChannel("polygons")), ("fill", ScaledChannel("fill", "cnt")))),
        viewport=(MAP_W, MAP_H),
    ))
    for vid, key in BAR_VIEWS:
        data = GroupAgg(j2, (key,), (AggSpec("COUNT", None, "cnt"),))
        views.append(ViewDef(
            id=vid,
            data=data,
            mark_data=data,
            extents=(ExtentSpec("cnt_ext", "cnt"), ExtentSpec("key_ext", key)),
            scales=(
                ("x", ScaleSpec("linear_position", "key_ext", (10.0, BAR_W - 20.0))),
                ("height", ScaleSpec("linear_position", "cnt_ext", (0.0, BAR_H - 20.0))),
            ),
            mark=MarkSpec("rect", (
                ("x", ScaledChannel("x", key)),
                ("width", ConstChannel(10.0)),
                ("height", ScaledChannel("height", "cnt")),
                ("fill", ConstChannel("#4682b4")),
                ("key", ColumnChannel(key)),
            )),
            viewport=(BAR_W, BAR_H),
        ))
    return views


# -- interaction scripts --------------------------------------------------------------


def make_script(sess: Session, n_steps: int, seed: int) -> dict:
    """Random but deterministic brush steps against the session's live marks."""
    rng = random.Random(seed)
    view_ids = sorted(sess.views)
    steps = []
    for _ in range(n_steps):
        vid = rng.choice(view_ids)
        view = sess.views[vid]
        n = len(view.marks)
        if n == 0:
            continue
        w, h = view.vdef.viewport
        if rng.random() < 0.5:
            frac = rng.choice((0.05, 0.1, 0.25, 0.5))
            k = max(1, int(n * frac))
            ids = tuple(sorted(rng.sample(range(n), min(k, n))))
            sel: Selection = Items(ids)
        else:
            x0 = rng.uniform(0, w * 0.7)
            x1 = rng.uniform(x0, w)
            y0 = rng.uniform(0, h * 0.5)
            y1 = rng.uniform(y0, h)
            sel = Range(x0, y0, x1, y1)
        steps.append({"view": vid, "kind": "brush", "selection": selection_to_json(sel)})
    return {"steps": steps}


# -- predicate-rewrite equivalence guard ------------------------------------------------


def _items_predicate(sess: Session, vid: str, ids: np.ndarray):
    key, base = VIEW_KEY_BASE[vid]
    view = sess.views[vid]
    col = view.mark_rel.col(key) if key in view.mark_rel.schema else view.data.col(key)
    values = [col.value_at(int(i)) for i in ids]
    return base, col_in(key, values)


def check_crossfilter_equivalence(sess: Session, views: list[ViewDef], steps: list[dict],
                                  tol: float = 1e-9) -> int:
    """Assert crossfilter == reference re-execution with the selection predicate conjoined."""
    ref_bases = {n: relation_rows(r) for n, r in sess.dataset.relations.items()}
    checked = 0
    for step in steps:
        vid = step["view"]
        sel = selection_from_json(step["selection"])
        # the selected groups, named by their key values, are the selection predicate
        ids, _ = resolve_selection(sess.views[vid], sel)
        base, pred = _items_predicate(sess, vid, ids)
        outcome = crossfilter_full(sess, vid, sel)
        for other in views:
            if other.id == vid:
                continue
            got = outcome.update_relations[other.id]
            plan = rewrite_with_predicate(other.data, base, pred)
            want = run_reference(plan, ref_bases)
            _compare_grouped(got, want, tol)
        checked += 1
    return checked


def _compare_grouped(got, want, tol: float) -> None:
    got_rows = {r[: 1]: r[1:] for r in got.to_rows()}
    want_rows = {}
    for row in want.rows:
        vals = tuple(row[c] for c in want.columns)
        want_rows[vals[:1]] = vals[1:]
    assert set(got_rows) == set(want_rows), (
        f"group keys differ: {sorted(got_rows)} vs {sorted(want_rows)}"
    )
    for key, g in got_rows.items():
        w = want_rows[key]
        for a, b in zip(g, w):
            if a is None or b is None:
                assert a is b, f"null mismatch in group {key}: {a} vs {b}"
            elif isinstance(a, float):
                scale = max(1.0, abs(a), abs(b))
                assert abs(a - b) <= tol * scale, f"group {key}: {a} != {b}"
            else:
                assert a == b, f"group {key}: {a} != {b}"


# -- measurement ------------------------------------------------------------------------


def _pct(samples: list[float]) -> dict | None:
    if not samples:
        return None
    arr = np.array(samples)
    return {"p50": float(np.percentile(arr, 50)), "p95": float(np.percentile(arr, 95))}


@dataclass
class BenchReport:
    rows: dict[str, int]
    ingest_ms: float
    build_ms: float
    build_nocapture_ms: float
    capture_overhead_ratio: float
    backward_trace_ms: dict | None
    forward_trace_ms: dict | None
    crossfilter_ms: dict | None
    http_crossfilter_ms: dict | None
    per_step: list[dict]
    environment: str

    def to_json(self) -> dict:
        return {
            "rows": self.rows,
            "ingest_ms": self.ingest_ms,
            "build_ms": self.build_ms,
            "build_nocapture_ms": self.build_nocapture_ms,
            "capture_overhead_ratio": self.capture_overhead_ratio,
            "backward_trace_ms": self.backward_trace_ms,
            "forward_trace_ms": self.forward_trace_ms,
            "crossfilter_ms": self.crossfilter_ms,
            "http_crossfilter_ms": self.http_crossfilter_ms,
            "per_step": self.per_step,
            "environment": self.environment,
        }

    def summary(self) -> str:
        lines = [
            f"rows: {self.rows}",
            f"ingest: {self.ingest_ms:.1f} ms",
            f"build (lineage capture): {self.build_ms:.1f} ms",
            f"build (reference, no capture): {self.build_nocapture_ms:.1f} ms",
            f"capture overhead ratio: {self.capture_overhead_ratio:.3f}x",
        ]
        for label, pct in (
            ("backward trace", self.backward_trace_ms),
            ("forward trace", self.forward_trace_ms),
            ("crossfilter (in-process)", self.crossfilter_ms),
            ("crossfilter (HTTP)", self.http_crossfilter_ms),
        ):
            if pct:
                lines.append(f"{label}: p50 {pct['p50']:.2f} ms, p95 {pct['p95']:.2f} ms")
        lines.append(f"environment: {self.environment}")
        return "\n".join(lines)


def _environment_note() -> str:
    import os

    return (
        f"{platform.platform()}; python {platform.python_version()}; "
        f"numpy {np.__version__}; cpus {os.cpu_count()}"
    )


def run_benchmark(
    data_dir: str | Path,
    script: dict,
    reps: int = 3,
    http: bool = True,
    guard: bool = True,
    guard_seed: int = 1234,
) -> BenchReport:
    steps = script.get("steps", [])
    t0 = time.perf_counter()
    ds = load_flight_dataset(data_dir)
    ingest_ms = (time.perf_counter() - t0) * 1e3
    views = flight_views()

    if guard:
        n_sample = min(1000, ds["ontime"].n_rows)
        sample = Dataset("sample")
        sample.add(ds["ontime"].take(np.arange(n_sample), name="ontime"))
        for name in ("airlines", "airports", "shapes"):
            sample.add(ds[name])
        sample_sess = create_session(sample, views, "guard")
        guard_steps = make_script(sample_sess, 5, guard_seed)["steps"]
        checked = check_crossfilter_equivalence(sample_sess, views, guard_steps)
        if checked == 0:
            raise EngineError("equivalence guard executed no selections")

    t0 = time.perf_counter()
    sess = create_session(ds, views, "bench")
    build_ms = (time.perf_counter() - t0) * 1e3

    sinks = {}
    for v in views:
        sinks[v.data_sink] = v.data
        sinks[v.mark_sink] = v.mark_data
    t0 = time.perf_counter()
    evaluate(sinks, ds.relations, capture=False)
    build_nocapture_ms = (time.perf_counter() - t0) * 1e3
    ratio = build_ms / build_nocapture_ms if build_nocapture_ms > 0 else float("inf")

    bw_ms: list[float] = []
    fw_ms: list[float] = []
    cf_ms: list[float] = []
    per_step: list[dict] = []
    for rep in range(max(1, reps)):
        warm = rep == 0
        for step in steps:
            vid = step["view"]
            view = sess.views[vid]
            sel = selection_from_json(step["selection"])
            ids, _ = resolve_selection(view, sel)

            t0 = time.perf_counter()
            traced = backward_trace(sess.graph, view.vdef.mark_sink, ids, "ontime")
            dt = (time.perf_counter() - t0) * 1e3
            if not warm:
                bw_ms.append(dt)

            other = next(v for v in sess.views.values() if v.id != vid)
            t0 = time.perf_counter()
            forward_trace(sess.graph, "ontime", traced.rids, other.vdef.mark_sink)
            dt = (time.perf_counter() - t0) * 1e3
            if not warm:
                fw_ms.append(dt)

            t0 = time.perf_counter()
            outcome = crossfilter_full(sess, vid, sel)
            dt = (time.perf_counter() - t0) * 1e3
            if not warm:
                cf_ms.append(dt)
            if rep == 0:
                per_step.append({
                    "view": vid,
                    "selected_marks": int(ids.size),
                    "traced_ontime": int(traced.rids.size),
                    "update_rows": {k: r.n_rows for k, r in outcome.update_relations.items()},
                })

    http_ms: list[float] = []
    if http and steps:
        http_ms = _run_http(data_dir, views, steps, reps)

    return BenchReport(
        rows={name: ds[name].n_rows for name in ds.relations},
        ingest_ms=ingest_ms,
        build_ms=build_ms,
        build_nocapture_ms=build_nocapture_ms,
        capture_overhead_ratio=ratio,
        backward_trace_ms=_pct(bw_ms),
        forward_trace_ms=_pct(fw_ms),
        crossfilter_ms=_pct(cf_ms),
        http_crossfilter_ms=_pct(http_ms),
        per_step=per_step,
        environment=_environment_note(),
    )


@contextlib.contextmanager
def serve_in_thread(app):
    """Run the ASGI app on a real localhost socket for the duration of the block."""
    import uvicorn

    with socket.socket() as s:
        s.bind(("127.0.0.1", 0))
        port = s.getsockname()[1]
    config = uvicorn.Config(app, host="127.0.0.1", port=port, log_level="error")
    server = uvicorn.Server(config)
    thread = threading.Thread(target=server.run, daemon=True)
    thread.start()
    try:
        for _ in range(200):
            if server.started:
                break
            time.sleep(0.025)
        else:
            raise RuntimeError("http server failed to start")
        yield f"http://127.0.0.1:{port}"
    finally:
        server.should_exit = True
        thread.join(timeout=10)


def _run_http(data_dir: str | Path, views: list[ViewDef], steps: list[dict], reps: int) -> list[float]:
    import httpx

    from .server import create_app

    samples: list[float] = []
    with serve_in_thread(create_app()) as base:
        with httpx.Client(base_url=base, timeout=120.0) as client:
            schema_doc = {
                "tables": [
                    {
                        "name": name,
                        "file": f"{name}.csv",
                        "columns": [[n, t.value] for n, t in FLIGHT_SCHEMAS[name].fields],
                    }
                    for name in ("ontime", "airlines", "airports", "shapes")
                ]
            }
            files = [
                ("files", (f"{name}.csv", (Path(data_dir) / f"{name}.csv").read_bytes(), "text/csv"))
                for name in ("ontime", "airlines", "airports", "shapes")
            ]
            r = client.post(
                "/datasets",
                data={"name": "bench", "schema": json.dumps(schema_doc)},
                files=files,
            )
            r.raise_for_status()
            dataset_id = r.json()["dataset_id"]
            r = client.post(
                "/sessions",
                json={"dataset_id": dataset_id, "views": [viewdef_to_json(v) for v in views]},
            )
            r.raise_for_status()
            session_id = r.json()["session_id"]
            for rep in range(max(1, reps)):
                for step in steps:
                    body = {"source": step["view"], "kind": "brush", "selection": step["selection"]}
                    t0 = time.perf_counter()
                    resp = client.post(f"/sessions/{session_id}/interactions", json=body)
                    dt = (time.perf_counter() - t0) * 1e3
                    resp.raise_for_status()
                    if rep > 0:
                        samples.append(dt)
    return samples


# -- CLI ---------------------------------------------------------------------------------


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(prog="bench", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="write synthetic flight CSVs")
    g.add_argument("--rows", type=int, required=True)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", required=True)
    g.add_argument("--airlines", type=int, default=20)
    g.add_argument("--airports", type=int, default=400)

    s = sub.add_parser("script", help="write a deterministic interaction script")
    s.add_argument("--data", required=True)
    s.add_argument("--steps", type=int, default=20)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)

    r = sub.add_parser("run", help="run the crossfilter benchmark")
    r.add_argument("--data", required=True)
    r.add_argument("--script", required=True)
    r.add_argument("--reps", type=int, default=3)
    r.add_argument("--json", action="store_true", help="emit the report as JSON")
    r.add_argument("--no-http", action="store_true", help="skip the HTTP phase")
    r.add_argument("--no-guard", action="store_true", help="skip the equivalence guard")

    args = parser.parse_args(argv)
    try:
        if args.command == "generate":
            generate(args.rows, args.seed, args.out, args.airlines, args.airports)
            return 0
        if args.command == "script":
            ds = load_flight_dataset(args.data)
            sess = create_session(ds, flight_views(), "script")
            doc = make_script(sess, args.steps, args.seed)
            Path(args.out).write_text(json.dumps(doc, indent=2), encoding="utf-8")
            return 0
        if args.command == "run":
            script = json.loads(Path(args.script).read_text(encoding="utf-8"))
            report = run_benchmark(
                args.data,
                script,
                reps=args.reps,
                http=not args.no_http,
                guard=not args.no_guard,
            )
            print(json.dumps(report.to_json()) if args.json else report.summary())
            return 0
    except (EngineError, AssertionError, OSError, ValueError) as e:
        print(f"bench: error: {e}", file=sys.stderr)
        return 1
    return 2


if __name__ == "__main__":
    raise SystemExit(main())
