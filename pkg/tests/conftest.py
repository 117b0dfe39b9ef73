from __future__ import annotations

import sys
from pathlib import Path

import pytest

TESTS = Path(__file__).resolve().parent
sys.path.insert(0, str(TESTS / "fixtures"))

from fake_services import ENVIRON, SERVICES, FakeServices  # noqa: E402

from tailkg.gateway import Cassette, Gateway, endpoints_from_config  # noqa: E402

GOLDEN = TESTS / "golden"
E2E = TESTS / "data" / "e2e"


def golden(name: str) -> str:
    return (GOLDEN / name).read_text(encoding="utf-8")


@pytest.fixture
def fake() -> FakeServices:
    return FakeServices()


@pytest.fixture
def endpoints():
    return endpoints_from_config(SERVICES)


@pytest.fixture
def live_gateway(fake):
    """Gateway that talks straight to the fake services."""
    return Gateway("live", transport=fake, environ=ENVIRON, sleep=lambda s: None)


@pytest.fixture
def replay_gateway():
    """Gateway over the committed end-to-end cassette; the network is never reached."""
    def boom(*a, **k):
        raise AssertionError("replay must not touch the transport")

    return Gateway("replay", Cassette(E2E / "cassette.jsonl"), transport=boom, environ={})
