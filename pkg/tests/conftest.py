import numpy as np
import pytest

from wsiembed.config import ServiceConfig
from wsiembed.encoder import make_encoder
from wsiembed.service import EmbeddingServer
from wsiembed.stubs import DicomWebStub, StaticFileServer

UIDS = ("1.2.826.0.1.1", "1.2.826.0.1.1.2", "1.2.826.0.1.1.2.3")


@pytest.fixture(scope="session")
def encoder():
    return make_encoder()


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def file_server():
    with StaticFileServer() as server:
        yield server


@pytest.fixture
def dicomweb():
    with DicomWebStub() as server:
        yield server


@pytest.fixture
def service_url():
    with EmbeddingServer(ServiceConfig(port=0, workers=4)) as server:
        yield server.url


def brute_force_auc(scores, labels):
    """Pairwise oracle: count correctly ordered (pos, neg) pairs, ties as 1/2."""
    pos = [s for s, l in zip(scores, labels) if l == 1]
    neg = [s for s, l in zip(scores, labels) if l == 0]
    total = 0.0
    for p in pos:
        for n in neg:
            total += 1.0 if p > n else 0.5 if p == n else 0.0
    return total / (len(pos) * len(neg))


ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def verdict(capsys):
    """Record one PASS/FAIL line for an acceptance criterion and assert on it."""

    def record(number: int, ok: bool, detail: str):
        line = f"criterion {number:>2}: {'PASS' if ok else 'FAIL'} | {detail}"
        ACCEPTANCE_LINES.append(line)
        with capsys.disabled():
            print("\n" + line, flush=True)
        assert ok, line

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda l: int(l.split(":")[0].split()[1])):
            terminalreporter.write_line(line)
