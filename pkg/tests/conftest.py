import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent.parent))

from fixture_server import FixtureServer


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: acceptance-scale runs (deselect with -m \"not slow\")")


@pytest.fixture
def fixture_server():
    """Factory for local fixture servers; all are stopped after the test."""
    servers = []

    def make(root=None, stall=0.0, routes=None):
        server = FixtureServer(root, stall=stall, routes=routes).start()
        servers.append(server)
        return server

    yield make
    for server in servers:
        server.stop()
