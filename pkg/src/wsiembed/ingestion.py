"""Pixel sources: inline base64 images, object-store URLs and DICOMweb instances.

Every source exposes the same small surface (``shape`` and ``extract_patch``),
so the service does not care where pixels came from.
"""

from __future__ import annotations

import base64
import binascii
import io
import logging
import threading
import time
from collections import OrderedDict
from concurrent.futures import Future
from dataclasses import dataclass
from typing import Protocol

import httpx
import numpy as np
from PIL import Image

from .errors import BadBase64, BadImage, FetchFailed, MalformedContainer, UnsupportedFormat
from .wsi import DICOM_TAGS, Patch, PatchSpec, WsiMetadata, assemble_patch, decode_frame, metadata_from_attributes

log = logging.getLogger(__name__)

FORMATS = ("jpeg", "png")
_PIL_FORMATS = {"jpeg": "JPEG", "png": "PNG"}


@dataclass(frozen=True)
class DicomWebRef:
    base_url: str
    study_uid: str
    series_uid: str
    instance_uid: str

    @property
    def instance_url(self) -> str:
        return (
            f"{self.base_url.rstrip('/')}/studies/{self.study_uid}"
            f"/series/{self.series_uid}/instances/{self.instance_uid}"
        )


@dataclass(frozen=True)
class DataSourceRef:
    """Where a request's pixels live. Exactly one variant is populated."""

    kind: str  # "inline" | "object" | "dicomweb"
    inline_payload: str | None = None
    inline_format: str | None = None
    object_uri: str | None = None
    dicomweb: DicomWebRef | None = None

    def __post_init__(self):
        populated = {
            "inline": self.inline_payload is not None,
            "object": self.object_uri is not None,
            "dicomweb": self.dicomweb is not None,
        }
        if self.kind not in populated:
            raise ValueError(f"unknown source kind {self.kind!r}")
        if not populated[self.kind] or sum(populated.values()) != 1:
            raise ValueError(f"source of kind {self.kind!r} must populate exactly its own fields")

    @classmethod
    def inline(cls, payload: str, fmt: str = "png") -> "DataSourceRef":
        return cls("inline", inline_payload=payload, inline_format=fmt)

    @classmethod
    def object(cls, uri: str) -> "DataSourceRef":
        return cls("object", object_uri=uri)

    @classmethod
    def dicomweb_instance(cls, base_url, study_uid, series_uid, instance_uid) -> "DataSourceRef":
        return cls("dicomweb", dicomweb=DicomWebRef(base_url, study_uid, series_uid, instance_uid))

    @classmethod
    def from_json(cls, obj: dict) -> "DataSourceRef":
        kind = obj["kind"]
        if kind == "inline":
            return cls.inline(obj["payload"], obj.get("format", "png"))
        if kind == "object":
            return cls.object(obj["uri"])
        if kind == "dicomweb":
            return cls.dicomweb_instance(obj["base_url"], obj["study_uid"], obj["series_uid"], obj["instance_uid"])
        raise ValueError(f"unknown source kind {kind!r}")

    def to_json(self) -> dict:
        if self.kind == "inline":
            return {"kind": "inline", "payload": self.inline_payload, "format": self.inline_format}
        if self.kind == "object":
            return {"kind": "object", "uri": self.object_uri}
        ref = self.dicomweb
        return {
            "kind": "dicomweb",
            "base_url": ref.base_url,
            "study_uid": ref.study_uid,
            "series_uid": ref.series_uid,
            "instance_uid": ref.instance_uid,
        }


class PixelSource(Protocol):
    @property
    def shape(self) -> tuple[int, int]: ...

    def extract_patch(self, spec: PatchSpec) -> Patch: ...


class ImageSource:
    """A fully decoded RGB8 image held in memory."""

    def __init__(self, pixels: np.ndarray):
        self.pixels = pixels
        self.pixels.flags.writeable = False

    @property
    def shape(self):
        return self.pixels.shape[:2]

    def extract_patch(self, spec: PatchSpec) -> Patch:
        spec.check_bounds(*self.shape)
        y, x = spec.y_origin, spec.x_origin
        return Patch(spec, self.pixels[y : y + spec.height, x : x + spec.width])


def decode_image(data: bytes, fmt: str | None = None) -> np.ndarray:
    """Decode PNG/JPEG bytes to (rows, cols, 3) uint8. ``fmt=None`` sniffs the format."""
    if fmt is not None and fmt not in FORMATS:
        raise UnsupportedFormat(f"image format {fmt!r} is not supported; use one of {FORMATS}")
    try:
        with Image.open(io.BytesIO(data)) as img:
            actual = (img.format or "").upper()
            if actual not in _PIL_FORMATS.values():
                raise UnsupportedFormat(f"image is {actual or 'unknown'}, only JPEG and PNG are accepted")
            if fmt is not None and actual != _PIL_FORMATS[fmt]:
                raise BadImage(f"payload declared as {fmt} but decodes as {actual}")
            return np.asarray(img.convert("RGB"))
    except (UnsupportedFormat, BadImage):
        raise
    except Exception as exc:
        raise BadImage(f"could not decode image: {exc}") from exc


def decode_base64(payload: str) -> bytes:
    try:
        return base64.b64decode(payload, validate=True)
    except (binascii.Error, ValueError) as exc:
        raise BadBase64(f"invalid base64 payload: {exc}") from None


def open_inline(payload: str, fmt: str = "png") -> ImageSource:
    if fmt not in FORMATS:
        raise UnsupportedFormat(f"image format {fmt!r} is not supported; use one of {FORMATS}")
    return ImageSource(decode_image(decode_base64(payload), fmt))


class HttpFetcher:
    """GET with a fixed retry policy: retries on 5xx and timeouts, never on 4xx.

    One instance (and its connection pool) may be shared by many threads.
    """

    def __init__(self, timeout_ms=30_000, retries=2, backoff_ms=100, token=None, client=None):
        self.timeout_ms = timeout_ms
        self.retries = retries
        self.backoff_ms = backoff_ms
        self.token = token
        self._client = client or httpx.Client(timeout=timeout_ms / 1000.0)

    def close(self):
        self._client.close()

    def get(self, url: str, accept: str | None = None) -> httpx.Response:
        headers = {}
        if self.token:
            headers["Authorization"] = f"Bearer {self.token}"
        if accept:
            headers["Accept"] = accept
        for attempt in range(self.retries + 1):
            try:
                resp = self._client.get(url, headers=headers)
            except httpx.TimeoutException as exc:
                err = FetchFailed(f"GET {url} timed out", status=None)
                cause = exc
            except httpx.HTTPError as exc:
                raise FetchFailed(f"GET {url} failed: {exc}") from exc
            else:
                if resp.status_code < 400:
                    return resp
                err = FetchFailed(f"GET {url} returned {resp.status_code}", status=resp.status_code)
                cause = None
                if resp.status_code < 500:
                    raise err
            if attempt < self.retries:
                time.sleep(self.backoff_ms / 1000.0 * 2**attempt)
        raise err from cause


def fetch_object(uri: str, fetcher: HttpFetcher | None = None) -> ImageSource:
    own = fetcher is None
    fetcher = fetcher or HttpFetcher()
    try:
        body = fetcher.get(uri).content
    finally:
        if own:
            fetcher.close()
    return ImageSource(decode_image(body))


def _multipart_first_part(resp: httpx.Response) -> bytes:
    ctype = resp.headers.get("content-type", "")
    if not ctype.startswith("multipart/"):
        return resp.content
    boundary = None
    for param in ctype.split(";")[1:]:
        key, _, value = param.strip().partition("=")
        if key.lower() == "boundary":
            boundary = value.strip('"')
    if not boundary:
        raise FetchFailed("multipart response without boundary")
    body = resp.content
    delim = b"--" + boundary.encode()
    start = body.find(delim)
    head_end = body.find(b"\r\n\r\n", start)
    end = body.find(b"\r\n" + delim, head_end)
    if start < 0 or head_end < 0 or end < 0:
        raise FetchFailed("malformed multipart frame response")
    return body[head_end + 4 : end]


def dicom_json_to_attributes(dataset: dict) -> dict:
    attrs = {}
    for (group, elem), keyword in DICOM_TAGS.items():
        entry = dataset.get(f"{group:04X}{elem:04X}")
        if entry and entry.get("Value"):
            attrs[keyword] = entry["Value"][0]
    return attrs


class DicomWebSource:
    """Lazy tiled reader over WADO-RS: only frames touched by patches are fetched.

    Frames are kept in an LRU cache; concurrent requests for the same frame
    share one in-flight GET.
    """

    def __init__(self, ref: DicomWebRef, fetcher: HttpFetcher, cache_frames: int = 64):
        self.ref = ref
        self.fetcher = fetcher
        self.cache_frames = cache_frames
        self._cache: OrderedDict[int, np.ndarray] = OrderedDict()
        self._inflight: dict[int, Future] = {}
        self._lock = threading.Lock()
        self.frame_requests = 0
        self.meta = self._load_metadata()

    def _load_metadata(self) -> WsiMetadata:
        resp = self.fetcher.get(self.ref.instance_url + "/metadata", accept="application/dicom+json")
        try:
            datasets = resp.json()
            dataset = datasets[0] if isinstance(datasets, list) else datasets
        except (ValueError, IndexError) as exc:
            raise MalformedContainer(f"bad DICOMweb metadata: {exc}") from None
        return metadata_from_attributes(dicom_json_to_attributes(dataset))

    @property
    def shape(self):
        return self.meta.total_rows, self.meta.total_cols

    def _download(self, frame_no: int) -> np.ndarray:
        with self._lock:
            self.frame_requests += 1
        url = f"{self.ref.instance_url}/frames/{frame_no + 1}"
        resp = self.fetcher.get(url, accept="application/octet-stream")
        return decode_frame(self.meta, _multipart_first_part(resp), frame_no)

    def get_frame(self, frame_no: int) -> np.ndarray:
        with self._lock:
            if frame_no in self._cache:
                self._cache.move_to_end(frame_no)
                return self._cache[frame_no]
            future = self._inflight.get(frame_no)
            owner = future is None
            if owner:
                future = self._inflight[frame_no] = Future()
        if not owner:
            return future.result()
        try:
            frame = self._download(frame_no)
        except BaseException as exc:
            with self._lock:
                del self._inflight[frame_no]
            future.set_exception(exc)
            raise
        with self._lock:
            del self._inflight[frame_no]
            if self.cache_frames > 0:
                self._cache[frame_no] = frame
                while len(self._cache) > self.cache_frames:
                    self._cache.popitem(last=False)
        future.set_result(frame)
        return frame

    def fetch_frames(self, frame_numbers) -> list[np.ndarray]:
        return [self.get_frame(n) for n in frame_numbers]

    def extract_patch(self, spec: PatchSpec) -> Patch:
        return assemble_patch(self.meta, spec, self.get_frame)


def open_dicomweb(ref: DicomWebRef, fetcher: HttpFetcher | None = None, cache_frames: int = 64) -> DicomWebSource:
    return DicomWebSource(ref, fetcher or HttpFetcher(), cache_frames)


def fetch_frames(src: DicomWebSource, frame_numbers) -> list[np.ndarray]:
    return src.fetch_frames(frame_numbers)


def open_source(ref: DataSourceRef, fetcher: HttpFetcher, cache_frames: int = 64) -> PixelSource:
    if ref.kind == "inline":
        return open_inline(ref.inline_payload, ref.inline_format or "png")
    if ref.kind == "object":
        return fetch_object(ref.object_uri, fetcher)
    return open_dicomweb(ref.dicomweb, fetcher, cache_frames)
