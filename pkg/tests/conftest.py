import random

import pytest

from chain.config import FeePolicy
from chain.wallet import Funding
from simnet.network import SimNetwork
from tests.support import SMALL_NET, Deployment, deploy, make_funding


@pytest.fixture
def rng() -> random.Random:
    return random.Random(20240501)


@pytest.fixture
def policy() -> FeePolicy:
    return FeePolicy()


@pytest.fixture
def funding(rng) -> Funding:
    return make_funding(rng)


@pytest.fixture
def small_net() -> SimNetwork:
    return SimNetwork(SMALL_NET)


@pytest.fixture
def deployment(tmp_path) -> Deployment:
    """Registrierter Client und Server auf dem kleinen Netz, Korpus mit zwei URIs."""
    corpus = {
        "https://example.org/news": random.Random(7).randbytes(3_000),
        "https://example.org/feed": b"feed-v1 " * 100,
    }
    return deploy(tmp_path, corpus=corpus)
