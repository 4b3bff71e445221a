import csv
import io
import math

import pytest

from wsiembed.bench import CSV_COLUMNS, BenchmarkConfig, BenchmarkReport, compare_sources, cost_report, run_benchmark
from wsiembed.config import ServiceConfig
from wsiembed.errors import NonPositiveInput, TargetUnreachable
from wsiembed.service import EmbeddingServer, EmbeddingService

# published throughputs and the figures derived from them at $3.12/h
TABLE = [
    # (embeddings/hour, printed price, decimals printed, embeddings per dollar)
    (960_869, "0.000003", 6, 307_970),
    (243_779, "0.00001", 5, 78_134),
    (988_217, "0.000003", 6, 316_736),
]


@pytest.mark.parametrize("per_hour,printed,decimals,per_dollar", TABLE)
def test_cost_matches_published_table(per_hour, printed, decimals, per_dollar):
    cost = cost_report(per_hour, 3.12)
    assert cost.embeddings_per_dollar_floor == per_dollar
    assert f"{cost.price_per_embedding:.{decimals}f}" == printed
    assert math.isclose(cost.price_per_embedding * cost.embeddings_per_dollar, 1.0, rel_tol=1e-9)


def test_cost_price_magnitudes():
    assert math.isclose(cost_report(960_869, 3.12).price_per_embedding, 3.25e-6, rel_tol=0.01)
    assert math.isclose(cost_report(243_779, 3.12).price_per_embedding, 1.28e-5, rel_tol=0.01)


@pytest.mark.parametrize("args", [(0, 3.12), (100, 0), (-1, 1), (1, -3)])
def test_cost_rejects_non_positive(args):
    with pytest.raises(NonPositiveInput):
        cost_report(*args)


def test_injected_elapsed_unit_case():
    r = BenchmarkReport.from_measurements(
        source="inline", total_embeddings=50_000, elapsed_s=3600.0, hourly_price=3.12,
        latencies_ms=[1.0, 2.0], error_count=0, requests_issued=10, concurrency=10,
    )
    assert r.embeddings_per_hour == 50_000
    assert math.isclose(r.price_per_embedding * r.embeddings_per_dollar, 1.0, rel_tol=1e-9)


def test_config_validation():
    assert BenchmarkConfig(total_embeddings=5000, embeddings_per_request=500).request_count == 10
    assert BenchmarkConfig(source_kind="object").layout == "per-patch"
    assert BenchmarkConfig(source_kind="dicomweb").layout == "single"
    with pytest.raises(ValueError):
        BenchmarkConfig(total_embeddings=5000, embeddings_per_request=300)
    with pytest.raises(ValueError):
        BenchmarkConfig(concurrency=0)
    with pytest.raises(ValueError):
        BenchmarkConfig(source_kind="ftp")


class CountingService(EmbeddingService):
    def __init__(self, *a, **kw):
        super().__init__(*a, **kw)
        self.calls = []

    def handle_embed(self, request):
        self.calls.append(sum(len(s["patches"]) for s in request["sources"]))
        return super().handle_embed(request)


@pytest.fixture
def counting_server():
    svc = CountingService(ServiceConfig(port=0, workers=2))
    with EmbeddingServer(service=svc) as server:
        yield server, svc


def test_request_accounting(counting_server):
    server, svc = counting_server
    cfg = BenchmarkConfig(target=server.url, total_embeddings=200, embeddings_per_request=20, concurrency=4, image_size=512)
    report = run_benchmark(cfg)
    assert report.requests_issued == 10
    timed = [n for n in svc.calls if n == 20]
    assert len(timed) == 10  # the 4 warm-up requests carry one patch each
    assert svc.calls.count(1) == 4
    assert report.error_count == 0
    assert report.embeddings_received == 200
    assert len(report.latencies_ms) == 10
    assert report.p50_ms <= report.p90_ms <= report.p99_ms
    assert math.isclose(report.embeddings_per_hour, 200 * 3600 / report.elapsed_s)
    assert math.isclose(report.price_per_embedding * report.embeddings_per_dollar, 1.0, rel_tol=1e-9)


def test_rejected_requests_count_as_errors():
    with EmbeddingServer(ServiceConfig(port=0, workers=1, max_patches_per_request=5)) as server:
        cfg = BenchmarkConfig(target=server.url, total_embeddings=20, embeddings_per_request=10, concurrency=2, image_size=256)
        report = run_benchmark(cfg)
    assert report.requests_issued == 2
    assert report.error_count == 20
    assert report.embeddings_received == 0


def test_unreachable_target():
    with pytest.raises(TargetUnreachable):
        run_benchmark(BenchmarkConfig(target="http://127.0.0.1:9", total_embeddings=10, embeddings_per_request=10))


def test_compare_sources_csv(service_url, tmp_path):
    cfgs = [
        BenchmarkConfig(target=service_url, source_kind=k, total_embeddings=40, embeddings_per_request=20, concurrency=2, image_size=512)
        for k in ("inline", "object", "dicomweb")
    ]
    out = tmp_path / "report.csv"
    reports, text = compare_sources(cfgs, out)
    assert out.read_text() == text
    rows = list(csv.DictReader(io.StringIO(text)))
    assert text.splitlines()[0] == ",".join(CSV_COLUMNS)
    assert [r["source"] for r in rows] == ["inline", "object", "dicomweb"]
    for row, rep in zip(rows, reports):
        assert rep.error_count == 0 and row["errors"] == "0"
        assert math.isclose(float(row["price_per_embedding"]) * float(row["emb_per_dollar"]), 1.0, rel_tol=1e-9)
