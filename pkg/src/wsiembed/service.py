"""Stateless JSON-over-HTTP embedding service.

Routes: ``POST /v1/embeddings``, ``GET /v1/health``, ``GET /v1/info``.

A request lists sources, each with patches. Sources are retrieved and
embedded on a shared worker pool; results come back in request order with
per-patch errors, so one bad patch or source never sinks its siblings.
"""

from __future__ import annotations

import json
import logging
import threading
import time
from concurrent.futures import ThreadPoolExecutor, wait
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

import jsonschema

from . import __version__
from .config import ServiceConfig
from .encoder import PATCH_SIZE, EncoderSpec, make_encoder
from .errors import BadPatchShape, DeadlineExceeded, MalformedRequest, RequestTooLarge, WsiEmbedError
from .ingestion import DataSourceRef, HttpFetcher, open_source
from .wsi import PatchSpec

log = logging.getLogger(__name__)

_PATCH = {
    "type": "object",
    "required": ["x", "y", "w", "h"],
    "properties": {k: {"type": "integer"} for k in ("x", "y", "w", "h")},
    "additionalProperties": False,
}
_SOURCE = {
    "type": "object",
    "required": ["kind"],
    "oneOf": [
        {
            "properties": {
                "kind": {"const": "inline"},
                "payload": {"type": "string"},
                "format": {"enum": ["jpeg", "png"]},
            },
            "required": ["kind", "payload"],
            "additionalProperties": False,
        },
        {
            "properties": {"kind": {"const": "object"}, "uri": {"type": "string", "minLength": 1}},
            "required": ["kind", "uri"],
            "additionalProperties": False,
        },
        {
            "properties": {
                "kind": {"const": "dicomweb"},
                **{k: {"type": "string", "minLength": 1} for k in ("base_url", "study_uid", "series_uid", "instance_uid")},
            },
            "required": ["kind", "base_url", "study_uid", "series_uid", "instance_uid"],
            "additionalProperties": False,
        },
    ],
}
REQUEST_SCHEMA = {
    "type": "object",
    "required": ["sources"],
    "properties": {
        "sources": {
            "type": "array",
            "minItems": 1,
            "items": {
                "type": "object",
                "required": ["source", "patches"],
                "properties": {
                    "source": _SOURCE,
                    "patches": {"type": "array", "minItems": 1, "items": _PATCH},
                },
                "additionalProperties": False,
            },
        },
        "encoder": {
            "type": "object",
            "required": ["name", "dim", "seed"],
            "properties": {
                "name": {"type": "string"},
                "dim": {"type": "integer", "minimum": 1},
                "seed": {"type": "integer", "minimum": 0, "maximum": 2**64 - 1},
            },
            "additionalProperties": False,
        },
    },
    "additionalProperties": False,
}
_VALIDATOR = jsonschema.Draft202012Validator(REQUEST_SCHEMA)


def _error(source: int, patch: int, exc: BaseException) -> dict:
    if isinstance(exc, WsiEmbedError):
        err = exc.to_dict()
    else:
        log.exception("unexpected failure on source %d patch %d", source, patch, exc_info=exc)
        err = {"code": "InternalError", "message": str(exc)}
    return {"source": source, "patch": patch, "error": err}


class EmbeddingService:
    """Request handling without any HTTP concerns; safe to call from many threads."""

    def __init__(self, config: ServiceConfig | None = None):
        self.config = config or ServiceConfig()
        self._ready = threading.Event()
        self.encoder = make_encoder(self.config.encoder_spec)
        self.fetcher = HttpFetcher(
            timeout_ms=self.config.fetch_timeout_ms,
            retries=self.config.fetch_retries,
            token=self.config.fetch_token or None,
        )
        self.pool = ThreadPoolExecutor(max_workers=self.config.workers, thread_name_prefix="embed")
        self._ready.set()

    def close(self):
        self._ready.clear()
        self.pool.shutdown(wait=True)
        self.fetcher.close()

    def health(self) -> dict:
        return {"status": "ready" if self._ready.is_set() else "starting"}

    def info(self) -> dict:
        return {
            "encoder": self.encoder.name,
            "dim": int(self.encoder.dim),
            "seed": int(self.encoder.seed),
            "limits": {
                "max_patches_per_request": self.config.max_patches_per_request,
                "patch_size": PATCH_SIZE,
                "request_deadline_s": self.config.request_deadline_s,
            },
            "version": __version__,
        }

    def parse_request(self, request: dict):
        errors = sorted(_VALIDATOR.iter_errors(request), key=lambda e: list(e.path))
        if errors:
            first = errors[0]
            where = "/".join(str(p) for p in first.path) or "<root>"
            raise MalformedRequest(f"{where}: {first.message}")
        total = sum(len(s["patches"]) for s in request["sources"])
        if total > self.config.max_patches_per_request:
            raise RequestTooLarge(f"{total} patches exceeds the limit of {self.config.max_patches_per_request}")
        encoder = self.encoder
        if "encoder" in request:
            e = request["encoder"]
            try:
                encoder = make_encoder(EncoderSpec(e["name"], e["dim"], e["seed"]))
            except WsiEmbedError as exc:
                raise MalformedRequest(exc.message) from None
        sources = []
        for entry in request["sources"]:
            ref = DataSourceRef.from_json(entry["source"])
            specs = [(p["x"], p["y"], p["w"], p["h"]) for p in entry["patches"]]
            sources.append((ref, specs))
        return sources, encoder

    def _run_source(self, source_index: int, ref: DataSourceRef, specs, encoder):
        """Retrieve one source, cut its patches and embed them. Returns (results, retrieval_s, inference_s)."""
        t0 = time.perf_counter()
        results: list = [None] * len(specs)
        try:
            src = open_source(ref, self.fetcher, self.config.cache_frames)
        except Exception as exc:
            return [_error(source_index, i, exc) for i in range(len(specs))], time.perf_counter() - t0, 0.0
        ok_idx, ok_patches = [], []
        for i, (x, y, w, h) in enumerate(specs):
            try:
                if w != PATCH_SIZE or h != PATCH_SIZE:
                    raise BadPatchShape(f"patches must be {PATCH_SIZE}x{PATCH_SIZE}, got {w}x{h}", index=i)
                ok_patches.append(src.extract_patch(PatchSpec(x, y, w, h)))
                ok_idx.append(i)
            except Exception as exc:
                results[i] = _error(source_index, i, exc)
        t1 = time.perf_counter()
        if ok_patches:
            try:
                vectors = encoder.embed_batch(ok_patches)
            except Exception as exc:
                for i in ok_idx:
                    results[i] = _error(source_index, i, exc)
            else:
                for i, vec in zip(ok_idx, vectors):
                    results[i] = {"source": source_index, "patch": i, "embedding": vec.tolist()}
        return results, t1 - t0, time.perf_counter() - t1

    def handle_embed(self, request: dict) -> dict:
        start = time.perf_counter()
        sources, encoder = self.parse_request(request)
        futures = [self.pool.submit(self._run_source, i, ref, specs, encoder) for i, (ref, specs) in enumerate(sources)]
        wait(futures, timeout=self.config.request_deadline_s)
        results, retrieval, inference = [], 0.0, 0.0
        for i, (fut, (_, specs)) in enumerate(zip(futures, sources)):
            if not fut.done():
                fut.cancel()
                timeout = DeadlineExceeded(f"request deadline of {self.config.request_deadline_s}s exceeded")
                results.extend(_error(i, j, timeout) for j in range(len(specs)))
                continue
            part, r, inf = fut.result()
            results.extend(part)
            retrieval += r
            inference += inf
        return {
            "results": results,
            "timing": {
                "retrieval_ms": retrieval * 1000.0,
                "inference_ms": inference * 1000.0,
                "total_ms": (time.perf_counter() - start) * 1000.0,
            },
        }


# --------------------------------------------------------------------------- HTTP


class _Server(ThreadingHTTPServer):
    daemon_threads = True
    allow_reuse_address = True
    request_queue_size = 128


def make_handler(service: EmbeddingService):
    class Handler(BaseHTTPRequestHandler):
        protocol_version = "HTTP/1.1"
        disable_nagle_algorithm = True

        def _send(self, status: int, payload: dict):
            body = json.dumps(payload, separators=(",", ":")).encode("utf-8")
            self.send_response(status)
            self.send_header("Content-Type", "application/json; charset=utf-8")
            self.send_header("Content-Length", str(len(body)))
            self.end_headers()
            self.wfile.write(body)

        def _authorised(self) -> bool:
            token = service.config.auth_token
            if not token or self.headers.get("Authorization") == f"Bearer {token}":
                return True
            self._send(401, {"error": {"code": "Unauthorized", "message": "missing or bad bearer token"}})
            return False

        def do_GET(self):
            if not self._authorised():
                return
            if self.path == "/v1/health":
                health = service.health()
                self._send(200 if health["status"] == "ready" else 503, health)
            elif self.path == "/v1/info":
                self._send(200, service.info())
            else:
                self._send(404, {"error": {"code": "NotFound", "message": self.path}})

        def do_POST(self):
            length = int(self.headers.get("Content-Length") or 0)
            raw = self.rfile.read(length) if length else b""
            if not self._authorised():
                return
            if self.path != "/v1/embeddings":
                self._send(404, {"error": {"code": "NotFound", "message": self.path}})
                return
            try:
                try:
                    request = json.loads(raw.decode("utf-8"))
                except (UnicodeDecodeError, json.JSONDecodeError) as exc:
                    raise MalformedRequest(f"body is not UTF-8 JSON: {exc}") from None
                response = service.handle_embed(request)
            except (MalformedRequest, RequestTooLarge) as exc:
                self._send(exc.http_status, {"error": exc.to_dict()})
                return
            except Exception as exc:  # pragma: no cover - defensive
                log.exception("request failed")
                self._send(500, {"error": {"code": "InternalError", "message": str(exc)}})
                return
            self._send(200, response)

        def log_message(self, fmt, *args):
            log.debug("%s - %s", self.address_string(), fmt % args)

    return Handler


class EmbeddingServer:
    """HTTP front-end; ``start()`` runs it on a background thread, ``serve_forever()`` blocks."""

    def __init__(self, config: ServiceConfig | None = None, service: EmbeddingService | None = None):
        self.service = service or EmbeddingService(config)
        cfg = self.service.config
        self._httpd = _Server((cfg.host, cfg.port), make_handler(self.service))
        self._thread = None

    @property
    def url(self) -> str:
        host, port = self._httpd.server_address[:2]
        return f"http://{host}:{port}"

    def serve_forever(self):
        self._httpd.serve_forever()

    def start(self):
        self._thread = threading.Thread(target=self._httpd.serve_forever, daemon=True)
        self._thread.start()
        return self

    def stop(self):
        self._httpd.shutdown()
        self._httpd.server_close()
        self.service.close()

    def __enter__(self):
        return self.start()

    def __exit__(self, *exc):
        self.stop()
