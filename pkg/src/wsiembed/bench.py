"""Load generator and cost accounting for the embedding service.

The harness fires ``total / per_request`` requests at the service from
``concurrency`` worker threads, times first-send to last-receive on a
monotonic clock and turns the throughput into cost figures for a given
hourly instance price.
"""

from __future__ import annotations

import contextlib
import csv
import io
import math
import threading
import time
from dataclasses import asdict, dataclass, field

import httpx
import numpy as np

from .errors import NonPositiveInput, TargetUnreachable
from .fixtures import encode_base64_image, encode_image, make_swsi, synthetic_bitmap
from .stubs import DicomWebStub, StaticFileServer

SOURCE_KINDS = ("inline", "object", "dicomweb")
CSV_COLUMNS = [
    "source",
    "elapsed_s",
    "emb_per_hour",
    "price_per_embedding",
    "emb_per_dollar",
    "p50_ms",
    "p90_ms",
    "p99_ms",
    "errors",
]
PATCH = 224


@dataclass(frozen=True)
class CostReport:
    price_per_embedding: float
    embeddings_per_dollar: float

    @property
    def embeddings_per_dollar_floor(self) -> int:
        return math.floor(self.embeddings_per_dollar)


def cost_report(embeddings_per_hour: float, hourly_price: float) -> CostReport:
    """Price of one embedding and embeddings bought per dollar at a given throughput."""
    if not embeddings_per_hour > 0 or not hourly_price > 0:
        raise NonPositiveInput(f"throughput and price must be positive (got {embeddings_per_hour}, {hourly_price})")
    return CostReport(hourly_price / embeddings_per_hour, embeddings_per_hour / hourly_price)


@dataclass
class BenchmarkConfig:
    target: str = "http://127.0.0.1:8080"
    source_kind: str = "inline"
    concurrency: int = 10
    embeddings_per_request: int = 500
    total_embeddings: int = 5000
    hourly_price: float = 3.12
    # "single": one source carrying every patch; "per-patch": one 224x224 image per patch
    layout: str | None = None
    warmup: bool = True
    seed: int = 0
    image_size: int = 2048
    timeout_s: float = 300.0

    def __post_init__(self):
        if self.source_kind not in SOURCE_KINDS:
            raise ValueError(f"source_kind must be one of {SOURCE_KINDS}")
        if self.concurrency < 1 or self.embeddings_per_request < 1 or self.total_embeddings < 1:
            raise ValueError("concurrency, per-request and total counts must be >= 1")
        if self.total_embeddings % self.embeddings_per_request:
            raise ValueError("total_embeddings must be divisible by embeddings_per_request")
        if self.hourly_price <= 0:
            raise NonPositiveInput("hourly_price must be positive")
        if self.layout is None:
            self.layout = "per-patch" if self.source_kind == "object" else "single"
        if self.layout not in ("single", "per-patch"):
            raise ValueError("layout must be 'single' or 'per-patch'")

    @property
    def request_count(self) -> int:
        return self.total_embeddings // self.embeddings_per_request


@dataclass
class BenchmarkReport:
    source: str
    total_embeddings: int
    requests_issued: int
    elapsed_s: float
    embeddings_per_hour: float
    price_per_embedding: float
    embeddings_per_dollar: float
    p50_ms: float
    p90_ms: float
    p99_ms: float
    error_count: int
    embeddings_received: int
    hourly_price: float
    concurrency: int
    utilization_note: str = ""
    latencies_ms: list = field(default_factory=list, repr=False)

    @classmethod
    def from_measurements(
        cls, source, total_embeddings, elapsed_s, hourly_price, latencies_ms, error_count, requests_issued, concurrency, **kw
    ) -> "BenchmarkReport":
        per_hour = total_embeddings * 3600 / elapsed_s
        cost = cost_report(per_hour, hourly_price)
        lat = np.asarray(latencies_ms, dtype=float)
        q = np.percentile(lat, [50, 90, 99]) if lat.size else [math.nan] * 3
        return cls(
            source=source,
            total_embeddings=total_embeddings,
            requests_issued=requests_issued,
            elapsed_s=elapsed_s,
            embeddings_per_hour=per_hour,
            price_per_embedding=cost.price_per_embedding,
            embeddings_per_dollar=cost.embeddings_per_dollar,
            p50_ms=float(q[0]),
            p90_ms=float(q[1]),
            p99_ms=float(q[2]),
            error_count=error_count,
            embeddings_received=kw.pop("embeddings_received", total_embeddings - error_count),
            hourly_price=hourly_price,
            concurrency=concurrency,
            latencies_ms=list(latencies_ms),
            **kw,
        )

    def csv_row(self) -> dict:
        return {
            "source": self.source,
            "elapsed_s": repr(self.elapsed_s),
            "emb_per_hour": repr(self.embeddings_per_hour),
            "price_per_embedding": repr(self.price_per_embedding),
            "emb_per_dollar": repr(self.embeddings_per_dollar),
            "p50_ms": repr(self.p50_ms),
            "p90_ms": repr(self.p90_ms),
            "p99_ms": repr(self.p99_ms),
            "errors": str(self.error_count),
        }

    def to_dict(self) -> dict:
        d = asdict(self)
        d.pop("latencies_ms")
        return d


def write_csv(reports, out=None) -> str:
    """Write report rows (header + one row per report); returns the CSV text."""
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=CSV_COLUMNS, lineterminator="\n")
    writer.writeheader()
    for r in reports:
        writer.writerow(r.csv_row())
    text = buf.getvalue()
    if out is not None:
        with open(out, "w", newline="", encoding="utf-8") as fh:
            fh.write(text)
    return text


# --------------------------------------------------------------------------- workloads


def _random_specs(rng, n, rows, cols):
    xs = rng.integers(0, cols - PATCH + 1, size=n)
    ys = rng.integers(0, rows - PATCH + 1, size=n)
    return [{"x": int(x), "y": int(y), "w": PATCH, "h": PATCH} for x, y in zip(xs, ys)]


@contextlib.contextmanager
def prepare_workload(cfg: BenchmarkConfig):
    """Yield ``make_request(request_no, n_patches) -> dict``, standing up local stubs as needed."""
    rng = np.random.default_rng(cfg.seed)
    size = cfg.image_size
    stack = contextlib.ExitStack()
    with stack:
        if cfg.layout == "per-patch":
            tiles = [synthetic_bitmap(PATCH, PATCH, "gradient", seed=i) for i in range(16)]
            if cfg.source_kind == "object":
                store = stack.enter_context(StaticFileServer({f"/bench/{i}.png": encode_image(t) for i, t in enumerate(tiles)}))
                sources = [{"kind": "object", "uri": f"{store.url}/bench/{i}.png"} for i in range(len(tiles))]
            elif cfg.source_kind == "inline":
                sources = [{"kind": "inline", "format": "png", "payload": encode_base64_image(t)} for t in tiles]
            else:
                raise ValueError("per-patch layout is not available for dicomweb sources")
            full = {"x": 0, "y": 0, "w": PATCH, "h": PATCH}

            def make_request(i, n):
                return {"sources": [{"source": sources[(i * n + j) % len(sources)], "patches": [full]} for j in range(n)]}

        else:
            bitmap = synthetic_bitmap(size, size, "gradient", seed=cfg.seed)
            if cfg.source_kind == "inline":
                source = {"kind": "inline", "format": "png", "payload": encode_base64_image(bitmap)}
            elif cfg.source_kind == "object":
                store = stack.enter_context(StaticFileServer({"/bench/slide.png": encode_image(bitmap)}))
                source = {"kind": "object", "uri": f"{store.url}/bench/slide.png"}
            else:
                uids = ("1.2.3", "1.2.3.4", "1.2.3.4.5")
                dicomweb = stack.enter_context(DicomWebStub())
                dicomweb.add_instance(uids, make_swsi(bitmap, codec="BaselineJpeg", quality=90))
                source = {"kind": "dicomweb", "base_url": dicomweb.url, "study_uid": uids[0], "series_uid": uids[1], "instance_uid": uids[2]}
            lock = threading.Lock()

            def make_request(i, n):
                with lock:
                    specs = _random_specs(rng, n, size, size)
                return {"sources": [{"source": source, "patches": specs}]}

        yield make_request


def _count_errors(body: dict) -> tuple[int, int]:
    errors = sum(1 for r in body.get("results", []) if "error" in r)
    return errors, len(body.get("results", [])) - errors


def run_benchmark(cfg: BenchmarkConfig, utilization_note: str = "") -> BenchmarkReport:
    target = cfg.target.rstrip("/")
    try:
        health = httpx.get(f"{target}/v1/health", timeout=10.0)
        if health.status_code != 200:
            raise TargetUnreachable(f"{target} health check returned {health.status_code}")
    except httpx.HTTPError as exc:
        raise TargetUnreachable(f"cannot reach {target}: {exc}") from None

    n_requests = cfg.request_count
    per = cfg.embeddings_per_request
    latencies: list[float] = []
    errors = received = issued = 0
    lock = threading.Lock()
    next_request = iter(range(n_requests))
    first_send: list[float] = []
    last_receive = [0.0]

    with prepare_workload(cfg) as make_request:
        bodies = [make_request(i, per) for i in range(n_requests)]
        warm_body = make_request(n_requests, 1)
        ready = threading.Barrier(cfg.concurrency + 1)

        def worker():
            nonlocal errors, received, issued
            with httpx.Client(timeout=cfg.timeout_s) as client:
                if cfg.warmup:
                    with contextlib.suppress(httpx.HTTPError):
                        client.post(f"{target}/v1/embeddings", json=warm_body)
                ready.wait()
                while True:
                    with lock:
                        i = next(next_request, None)
                    if i is None:
                        return
                    t0 = time.monotonic()
                    with lock:
                        issued += 1
                        if not first_send:
                            first_send.append(t0)
                    try:
                        resp = client.post(f"{target}/v1/embeddings", json=bodies[i])
                        body = resp.json() if resp.status_code == 200 else {}
                        bad, good = _count_errors(body) if body else (per, 0)
                    except (httpx.HTTPError, ValueError):
                        bad, good = per, 0
                    t1 = time.monotonic()
                    with lock:
                        latencies.append((t1 - t0) * 1000.0)
                        errors += bad
                        received += good
                        last_receive[0] = max(last_receive[0], t1)

        threads = [threading.Thread(target=worker, daemon=True) for _ in range(cfg.concurrency)]
        for t in threads:
            t.start()
        ready.wait()
        for t in threads:
            t.join()

    elapsed = last_receive[0] - first_send[0]
    return BenchmarkReport.from_measurements(
        source=cfg.source_kind,
        total_embeddings=cfg.total_embeddings,
        elapsed_s=elapsed,
        hourly_price=cfg.hourly_price,
        latencies_ms=latencies,
        error_count=errors,
        requests_issued=issued,
        concurrency=cfg.concurrency,
        embeddings_received=received,
        utilization_note=utilization_note,
    )


def compare_sources(cfgs, out=None) -> tuple[list[BenchmarkReport], str]:
    """Run one benchmark per config and lay the reports side by side as CSV."""
    reports = [run_benchmark(c) for c in cfgs]
    return reports, write_csv(reports, out)
