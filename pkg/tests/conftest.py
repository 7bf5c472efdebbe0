import pytest
from hypothesis import HealthCheck, settings

from powmesh.netmodel import ArchRole, DeviceSpec, Role, uniform_latency_network

settings.register_profile("powmesh", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("powmesh")

MBPS = 1e6

# acceptance lines collected by tests/test_acceptance.py
ACCEPTANCE: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE, key=lambda l: int(l.split()[1].rstrip(':'))):
            terminalreporter.write_line(line)


def device(i, miner=False, down=10.0, up=10.0, city="A", power=1.0):
    return DeviceSpec(
        id=i,
        role=Role.MINER if miner else Role.REGULAR,
        arch_role=ArchRole.FULL_PEER if miner else ArchRole.LIGHT_PEER,
        city=city,
        download_bw=down * MBPS,
        upload_bw=up * MBPS,
        mining_power=power if miner else 0.0,
    )


def line_network(n, latency_ms=10.0, miners=(0,), down=10.0, up=10.0):
    devs = [device(i, i in miners, down, up) for i in range(n)]
    return uniform_latency_network(devs, [(i, i + 1) for i in range(n - 1)], latency_ms)


@pytest.fixture
def small_line():
    return line_network(4)
