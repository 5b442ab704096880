import ipaddress
import random
import socket

import pytest

from helpers import FIXTURES

_real_connect = socket.socket.connect


def _loopback_only(self, address):
    host = address[0] if isinstance(address, tuple) else None
    if host is not None:
        try:
            ok = host == "localhost" or ipaddress.ip_address(host).is_loopback
        except ValueError:
            ok = False
        if not ok:
            raise OSError(f"network access disabled in tests (tried {host})")
    return _real_connect(self, address)


def pytest_configure(config):
    socket.socket.connect = _loopback_only


def pytest_terminal_summary(terminalreporter):
    import test_acceptance

    if test_acceptance.RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in sorted(test_acceptance.RESULTS.values()):
            terminalreporter.write_line(line)


@pytest.fixture
def fixtures():
    return FIXTURES


@pytest.fixture
def rng():
    return random.Random(1234)
