"""HTTP service exposing sessions, warps, and the static drag UI.

Endpoints:
  POST /api/session            multipart upload (image PNG, optional depth FGRID)
  POST /api/warp               {"id", "drags": {...}, "params": {...}?}
  GET  /api/session/{id}/depth.png
  GET  /healthz
  GET  /*                      static assets

Sessions live in memory and expire after a TTL.  Warp computations run on a
bounded thread pool with a wall-clock budget; exceeding it returns 503.
"""

from __future__ import annotations

import base64
import concurrent.futures
import io
import json
import mimetypes
import threading
import time
import uuid
from dataclasses import dataclass, replace
from email.parser import BytesParser
from email.policy import HTTP as HTTP_POLICY
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path

from .errors import DragwarpError, HeaderParse
from .grid import (
    DepthMap,
    FeatureGrid,
    dragspec_from_json,
    grid_to_image,
    image_to_grid,
    params_from_json,
    read_fgrid,
)
from .pipeline import depth_for_grid, warp_grid

WARP_BUDGET_SECONDS = 10.0


@dataclass
class Session:
    id: str
    image: FeatureGrid
    depth: DepthMap
    created_at: float
    touched_at: float


class SessionStore:
    def __init__(self, ttl_seconds: float):
        self.ttl = ttl_seconds
        self._lock = threading.Lock()
        self._sessions: dict[str, Session] = {}

    def _sweep(self, now: float) -> None:
        dead = [sid for sid, s in self._sessions.items() if now - s.touched_at > self.ttl]
        for sid in dead:
            del self._sessions[sid]

    def create(self, image: FeatureGrid, depth: DepthMap) -> Session:
        now = time.time()
        session = Session(id=uuid.uuid4().hex, image=image, depth=depth,
                          created_at=now, touched_at=now)
        with self._lock:
            self._sweep(now)
            self._sessions[session.id] = session
        return session

    def get(self, sid: str) -> Session | None:
        now = time.time()
        with self._lock:
            self._sweep(now)
            session = self._sessions.get(sid)
            if session:
                session.touched_at = now
            return session


class AppState:
    def __init__(self, assets_dir: str | None, ttl_seconds: float, workers: int):
        self.store = SessionStore(ttl_seconds)
        self.assets_dir = Path(assets_dir).resolve() if assets_dir else None
        self.pool = concurrent.futures.ThreadPoolExecutor(max_workers=workers)


def _parse_multipart(content_type: str, body: bytes) -> dict[str, bytes]:
    msg = BytesParser(policy=HTTP_POLICY).parsebytes(
        b"Content-Type: " + content_type.encode("latin-1") + b"\r\n\r\n" + body
    )
    if not msg.is_multipart():
        raise HeaderParse("expected multipart/form-data")
    parts: dict[str, bytes] = {}
    for part in msg.iter_parts():
        name = part.get_param("name", header="content-disposition")
        if name:
            parts[name] = part.get_payload(decode=True) or b""
    return parts


class Handler(BaseHTTPRequestHandler):
    app: AppState  # assigned by serve()
    protocol_version = "HTTP/1.1"

    def log_message(self, fmt, *args):  # quiet by default
        pass

    # -- helpers ---------------------------------------------------------
    def _send(self, status: int, body: bytes, content_type: str) -> None:
        self.send_response(status)
        self.send_header("Content-Type", content_type)
        self.send_header("Content-Length", str(len(body)))
        self.end_headers()
        self.wfile.write(body)

    def _json(self, status: int, obj) -> None:
        self._send(status, json.dumps(obj).encode(), "application/json")

    def _error(self, status: int, code: str, detail: str) -> None:
        self._json(status, {"error": code, "detail": detail})

    def _body(self) -> bytes:
        length = int(self.headers.get("Content-Length", "0"))
        return self.rfile.read(length) if length else b""

    # -- routes ----------------------------------------------------------
    def do_GET(self):
        try:
            if self.path == "/healthz":
                self._send(200, b"ok", "text/plain")
            elif self.path.startswith("/api/session/") and self.path.endswith("/depth.png"):
                sid = self.path[len("/api/session/"):-len("/depth.png")]
                self._depth_png(sid)
            else:
                self._static(self.path)
        except Exception as exc:  # pragma: no cover - defensive
            self._error(500, "internal_error", str(exc))

    def do_POST(self):
        try:
            if self.path == "/api/session":
                self._create_session()
            elif self.path == "/api/warp":
                self._warp()
            else:
                self._error(404, "not_found", f"no such endpoint {self.path}")
        except DragwarpError as exc:
            self._error(400, exc.code, exc.detail)
        except Exception as exc:  # pragma: no cover - defensive
            self._error(500, "internal_error", str(exc))

    def _create_session(self):
        ctype = self.headers.get("Content-Type", "")
        body = self._body()
        if "multipart/form-data" not in ctype:
            self._error(400, "bad_request", "expected multipart/form-data with an 'image' part")
            return
        try:
            parts = _parse_multipart(ctype, body)
        except HeaderParse as exc:
            self._error(400, exc.code, exc.detail)
            return
        if "image" not in parts:
            self._error(400, "missing_image", "multipart part 'image' is required")
            return
        image = image_to_grid(parts["image"])
        if "depth" in parts and parts["depth"]:
            depth_grid = read_fgrid(parts["depth"])
            if depth_grid.depth_dim != 1:
                self._error(400, "bad_depth", "depth FGRID must have one channel")
                return
            if depth_grid.data.shape[:2] != image.data.shape[:2]:
                self._error(400, "shape_mismatch", "depth shape differs from image")
                return
            depth = DepthMap(depth_grid.data[:, :, 0])
        else:
            depth = depth_for_grid(image, None)
        session = self.app.store.create(image, depth)
        self._json(200, {"id": session.id, "h": image.height, "w": image.width})

    def _warp(self):
        try:
            payload = json.loads(self._body().decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            self._error(400, "bad_json", f"body is not valid JSON: {exc}")
            return
        if not isinstance(payload, dict):
            self._error(400, "bad_json", "body must be a JSON object")
            return
        sid = payload.get("id")
        session = self.app.store.get(sid) if isinstance(sid, str) else None
        if session is None:
            self._error(404, "no_such_session", f"unknown session id {sid!r}")
            return
        if "drags" not in payload:
            self._error(400, "missing_drags", "'drags' object is required")
            return
        spec = dragspec_from_json(payload["drags"])
        if "params" in payload:
            spec = replace(spec, params=params_from_json(payload["params"], base=spec.params))
        if spec.mask.bits.shape != session.image.data.shape[:2]:
            self._error(400, "shape_mismatch", "mask shape differs from session image")
            return

        future = self.app.pool.submit(
            warp_grid, session.image, spec.mask, session.depth, spec.pairs, spec.params
        )
        try:
            result = future.result(timeout=WARP_BUDGET_SECONDS)
        except concurrent.futures.TimeoutError:
            future.cancel()
            self._error(503, "busy", "warp exceeded its time budget")
            return

        png = grid_to_image(result.warped)
        self._json(200, {
            "image_png_base64": base64.b64encode(png).decode("ascii"),
            "displacements": result.displacements,
            "diagnostics": result.diagnostics.to_dict(),
        })

    def _depth_png(self, sid: str):
        session = self.app.store.get(sid)
        if session is None:
            self._error(404, "no_such_session", f"unknown session id {sid!r}")
            return
        vals = session.depth.values
        lo, hi = vals.min(), vals.max()
        span = (hi - lo) or 1.0
        gray = FeatureGrid(((vals - lo) / span)[:, :, None])
        self._send(200, grid_to_image(gray), "image/png")

    def _static(self, path: str):
        if self.app.assets_dir is None:
            self._send(200, _FALLBACK_PAGE.encode(), "text/html")
            return
        rel = path.lstrip("/") or "index.html"
        target = (self.app.assets_dir / rel).resolve()
        if not str(target).startswith(str(self.app.assets_dir)) or not target.is_file():
            self._error(404, "not_found", f"no asset {rel}")
            return
        ctype = mimetypes.guess_type(str(target))[0] or "application/octet-stream"
        self._send(200, target.read_bytes(), ctype)


_FALLBACK_PAGE = """<!doctype html>
<html><head><title>dragwarp</title></head>
<body><h1>dragwarp service</h1>
<p>No asset directory configured. The API lives under <code>/api</code>;
see the README for building the drag-studio frontend.</p></body></html>
"""


def make_server(host: str, port: int, assets_dir: str | None = None,
                ttl_seconds: float = 1800.0, workers: int | None = None) -> ThreadingHTTPServer:
    state = AppState(assets_dir, ttl_seconds, workers or (threading.active_count() + 4))
    handler = type("BoundHandler", (Handler,), {"app": state})
    return ThreadingHTTPServer((host, port), handler)


def serve(host: str, port: int, assets_dir: str | None = None,
          ttl_seconds: float = 1800.0, workers: int | None = None) -> None:
    httpd = make_server(host, port, assets_dir, ttl_seconds, workers)
    print(f"dragwarp service on http://{host}:{port}/ (assets: {assets_dir or 'builtin page'})")
    try:
        httpd.serve_forever()
    finally:
        httpd.server_close()
