"""Localhost stand-ins for an object store and a DICOMweb server.

Both record every request path so tests (and the benchmark) can count GETs.
"""

from __future__ import annotations

import json
import re
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

from .fixtures import dicom_json_metadata
from .wsi import parse_wsi


class _QuietServer(ThreadingHTTPServer):
    daemon_threads = True
    allow_reuse_address = True


class StubServer:
    """Serve ``respond(path) -> (status, content_type, body)`` on a background thread."""

    def __init__(self, host="127.0.0.1", port=0):
        self.requests: list[str] = []
        self._log_lock = threading.Lock()
        stub = self

        class Handler(BaseHTTPRequestHandler):
            protocol_version = "HTTP/1.1"
            disable_nagle_algorithm = True

            def do_GET(self):
                with stub._log_lock:
                    stub.requests.append(self.path)
                status, ctype, body = stub.respond(self.path)
                self.send_response(status)
                self.send_header("Content-Type", ctype)
                self.send_header("Content-Length", str(len(body)))
                self.end_headers()
                self.wfile.write(body)

            def log_message(self, *args):
                pass

        self._server = _QuietServer((host, port), Handler)
        self._thread = threading.Thread(target=self._server.serve_forever, daemon=True)

    @property
    def url(self) -> str:
        host, port = self._server.server_address[:2]
        return f"http://{host}:{port}"

    def respond(self, path: str):
        return 404, "text/plain", b"not found"

    def start(self):
        self._thread.start()
        return self

    def stop(self):
        self._server.shutdown()
        self._server.server_close()

    def __enter__(self):
        return self.start()

    def __exit__(self, *exc):
        self.stop()

    def clear_log(self):
        with self._log_lock:
            self.requests.clear()

    def count(self, pattern: str) -> int:
        rx = re.compile(pattern)
        with self._log_lock:
            return sum(1 for p in self.requests if rx.search(p))


class StaticFileServer(StubServer):
    """Static object store: ``files`` maps URL path (``/bucket/a.png``) to bytes."""

    def __init__(self, files: dict[str, bytes] | None = None, **kwargs):
        super().__init__(**kwargs)
        self.files = dict(files or {})
        self.status_overrides: dict[str, int] = {}

    def respond(self, path):
        if path in self.status_overrides:
            return self.status_overrides[path], "text/plain", b"forced status"
        body = self.files.get(path)
        if body is None:
            return 404, "text/plain", b"not found"
        ctype = "image/png" if body[:4] == b"\x89PNG" else "image/jpeg"
        return 200, ctype, body


_DICOMWEB_ROUTE = re.compile(
    r"^/studies/(?P<study>[^/]+)/series/(?P<series>[^/]+)/instances/(?P<instance>[^/]+)"
    r"/(?:(?P<metadata>metadata)|frames/(?P<frame>\d+))$"
)


class DicomWebStub(StubServer):
    """Minimal WADO-RS: instance ``/metadata`` (DICOM JSON) and single raw ``/frames/{n}``."""

    def __init__(self, **kwargs):
        super().__init__(**kwargs)
        self.instances: dict[tuple[str, str, str], tuple] = {}

    def add_instance(self, uids: tuple[str, str, str], container: bytes) -> None:
        meta, index = parse_wsi(container)
        self.instances[tuple(uids)] = (meta, index, container)

    def frame_requests(self) -> int:
        return self.count(r"/frames/\d+$")

    def respond(self, path):
        m = _DICOMWEB_ROUTE.match(path.split("?", 1)[0])
        if not m:
            return 404, "text/plain", b"unknown route"
        uids = (m["study"], m["series"], m["instance"])
        if uids not in self.instances:
            return 404, "text/plain", b"unknown instance"
        meta, index, container = self.instances[uids]
        if m["metadata"]:
            body = json.dumps(dicom_json_metadata(meta, uids)).encode()
            return 200, "application/dicom+json", body
        frame_no = int(m["frame"]) - 1
        if not 0 <= frame_no < meta.frame_count:
            return 404, "text/plain", b"frame out of range"
        off, length = index.extent(frame_no)
        ctype = "application/octet-stream" if meta.transfer_syntax.codec == 0 else "image/jpeg"
        return 200, ctype, bytes(container[off : off + length])
