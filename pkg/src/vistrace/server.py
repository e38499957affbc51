"""HTTP facade: datasets, sessions, interactions, and history over JSON.

The server is the boundary where a browser (or any client) drives the
engine. Selections arrive in pixel coordinates relative to the view's
declared viewport and are inverted server-side where the scales live; mark
payloads carry fully resolved channel values so a client can render a
response with no further calls.
"""

from __future__ import annotations

import itertools
import json
import os
import threading
from dataclasses import dataclass, field

from fastapi import FastAPI, Request, UploadFile
from fastapi.responses import JSONResponse

from .columns import ColumnType
from .errors import (
    CsvParseError,
    DuplicateRelationError,
    EmptyExtentError,
    EngineError,
    NoSharedBaseError,
    NotInvertibleError,
    RowIdOutOfRangeError,
    SchemaMismatchError,
    SelectionOutOfViewportError,
    TypeMismatchError,
    UnknownColumnError,
    UnknownEventError,
    UnknownRelationError,
    UnknownViewError,
    UnreachableTargetError,
)
from .interactions import (
    InteractionEvent,
    Session,
    create_session,
    execute_interaction,
    now_ms,
    record_event,
    replay_event_full,
)
from .relation import Dataset, Schema
from .viz import selection_from_json, selection_to_json, viewdef_from_json

ERROR_CODES: list[tuple[type, str, int]] = [
    (SchemaMismatchError, "schema_mismatch", 400),
    (DuplicateRelationError, "schema_mismatch", 400),
    (CsvParseError, "parse_error", 400),
    (UnknownRelationError, "unknown_relation", 404),
    (UnreachableTargetError, "unknown_relation", 404),
    (UnknownViewError, "unknown_view", 404),
    (UnknownEventError, "unknown_event", 404),
    (SelectionOutOfViewportError, "bad_selection", 400),
    (RowIdOutOfRangeError, "bad_selection", 400),
    (NoSharedBaseError, "bad_selection", 400),
    (EmptyExtentError, "empty_extent", 400),
    (TypeMismatchError, "type_error", 400),
    (UnknownColumnError, "type_error", 400),
    (NotInvertibleError, "type_error", 400),
]


def classify_error(exc: EngineError) -> tuple[str, int]:
    for klass, code, status in ERROR_CODES:
        if isinstance(exc, klass):
            return code, status
    return "type_error", 400


@dataclass
class ServerConfig:
    host: str = "127.0.0.1"
    port: int = 8008
    max_upload_bytes: int = 256 * 1024 * 1024
    request_timeout_s: float = 30.0

    @classmethod
    def from_env(cls) -> "ServerConfig":
        return cls(
            host=os.environ.get("VISTRACE_HOST", "127.0.0.1"),
            port=int(os.environ.get("VISTRACE_PORT", "8008")),
            max_upload_bytes=int(os.environ.get("VISTRACE_MAX_UPLOAD_BYTES", str(256 * 1024 * 1024))),
            request_timeout_s=float(os.environ.get("VISTRACE_REQUEST_TIMEOUT_S", "30")),
        )


@dataclass
class EngineState:
    datasets: dict[str, Dataset] = field(default_factory=dict)
    sessions: dict[str, Session] = field(default_factory=dict)
    locks: dict[str, threading.Lock] = field(default_factory=dict)
    counter: "itertools.count[int]" = field(default_factory=itertools.count)

    def next_id(self, prefix: str) -> str:
        return f"{prefix}{next(self.counter)}"


def _parse_schema_doc(doc: dict) -> list[tuple[str, str, Schema]]:
    """Schema document -> [(relation name, file name, Schema)]."""
    tables = doc.get("tables")
    if not isinstance(tables, list) or not tables:
        raise SchemaMismatchError("schema document declares no tables")
    out = []
    for t in tables:
        try:
            cols = tuple((c[0], ColumnType(c[1])) for c in t["columns"])
            out.append((t["name"], t["file"], Schema(cols)))
        except (KeyError, ValueError, IndexError, TypeError) as e:
            raise SchemaMismatchError(f"bad schema document entry: {e}") from e
    return out


def _event_json(ev: InteractionEvent) -> dict:
    return {
        "eid": ev.eid,
        "timestamp": ev.timestamp,
        "source": ev.source,
        "kind": ev.kind,
        "selection": selection_to_json(ev.selection),
    }


def _view_payload(sess: Session) -> dict:
    return {
        vid: {
            "kind": view.vdef.mark.kind,
            "viewport": list(view.vdef.viewport),
            "marks": view.marks,
        }
        for vid, view in sess.views.items()
    }


def create_app(config: ServerConfig | None = None, state: EngineState | None = None) -> FastAPI:
    config = config or ServerConfig.from_env()
    state = state or EngineState()
    app = FastAPI(title="vistrace", version="0.1.0")
    app.state.engine = state
    app.state.config = config

    @app.exception_handler(EngineError)
    async def engine_error_handler(request: Request, exc: EngineError):
        code, status = classify_error(exc)
        body = {"code": code, "message": str(exc)}
        line = getattr(exc, "line", None)
        if line is not None:
            body["detail"] = {"line": exc.line, "column": exc.column}
        return JSONResponse(status_code=status, content=body)

    @app.post("/datasets", status_code=201)
    async def create_dataset(request: Request):
        form = await request.form()
        name = form.get("name") or state.next_id("d")
        schema_raw = form.get("schema")
        if schema_raw is None:
            raise SchemaMismatchError("missing schema document")
        if isinstance(schema_raw, UploadFile):
            schema_raw = (await schema_raw.read()).decode("utf-8")
        try:
            schema_doc = json.loads(schema_raw)
        except json.JSONDecodeError as e:
            raise SchemaMismatchError(f"schema document is not valid JSON: {e}") from e
        files: dict[str, bytes] = {}
        total = 0
        for key, value in form.multi_items():
            if key == "schema" or not isinstance(value, UploadFile):
                continue
            content = await value.read()
            total += len(content)
            if total > config.max_upload_bytes:
                raise CsvParseError(
                    f"dataset exceeds upload limit of {config.max_upload_bytes} bytes"
                )
            files[value.filename] = content
        if not files:
            raise SchemaMismatchError("no CSV files uploaded")
        dataset_id = str(name)
        if dataset_id in state.datasets:
            raise DuplicateRelationError(f"dataset {dataset_id!r} already exists")
        ds = Dataset(dataset_id)
        for rel_name, file_name, schema in _parse_schema_doc(schema_doc):
            if file_name not in files:
                raise SchemaMismatchError(f"schema references missing file {file_name!r}")
            ds.ingest_csv(files[file_name], schema, rel_name)
        state.datasets[dataset_id] = ds
        return {"dataset_id": dataset_id}

    @app.post("/sessions", status_code=201)
    async def create_session_route(body: dict):
        dataset_id = body.get("dataset_id")
        if dataset_id not in state.datasets:
            raise UnknownRelationError(f"no dataset {dataset_id!r}")
        views = [viewdef_from_json(v) for v in body.get("views", [])]
        session_id = state.next_id("s")
        sess = create_session(state.datasets[dataset_id], views, session_id)
        state.sessions[session_id] = sess
        state.locks[session_id] = threading.Lock()
        return {"session_id": session_id, "views": _view_payload(sess)}

    def _session(session_id: str) -> Session:
        sess = state.sessions.get(session_id)
        if sess is None:
            raise UnknownViewError(f"no session {session_id!r}")
        return sess

    @app.post("/sessions/{session_id}/interactions")
    def post_interaction(session_id: str, body: dict):
        sess = _session(session_id)
        source = body.get("source")
        kind = body.get("kind", "brush")
        if kind not in ("brush", "hover", "click"):
            raise SelectionOutOfViewportError(f"unknown interaction kind {kind!r}")
        sel = selection_from_json(body.get("selection", {}))
        with state.locks[session_id]:  # event appends are serialized per session
            ev = InteractionEvent(-1, now_ms(), source, kind, sel)
            eid = record_event(sess, ev)
            outcome = execute_interaction(sess, source, kind, sel)
        return {
            "eid": eid,
            "updates": outcome.update_marks,
            "highlights": outcome.highlights,
        }

    @app.get("/sessions/{session_id}/history")
    def get_history(session_id: str, source: str | None = None):
        sess = _session(session_id)
        entries = []
        for ev in sess.events.all(source):
            _, outcome = replay_event_full(sess, ev.eid)
            entries.append(
                {
                    "event": _event_json(ev),
                    "updates": outcome.update_marks,
                    "highlights": outcome.highlights,
                }
            )
        return {"events": entries}

    return app


def run(config: ServerConfig | None = None) -> None:  # pragma: no cover - manual entry
    import uvicorn

    config = config or ServerConfig.from_env()
    uvicorn.run(
        create_app(config),
        host=config.host,
        port=config.port,
        timeout_keep_alive=int(config.request_timeout_s),
    )
