import math

import pytest

from ubiloc.geometry import AnchorTag
from ubiloc.simenv import NoiseModel, Scenario, Waypoint


def make_scenario(anchors, waypoints, walls=(), noise=None, **kw):
    """Small inline scenario; anchors as (id, x, y), waypoints as (x, y[, dwell])."""
    return Scenario(
        name=kw.pop("name", "test"),
        walls=tuple(walls),
        anchors=tuple(AnchorTag(i, (x, y)) for i, x, y in anchors),
        waypoints=tuple(Waypoint((w[0], w[1]), w[2] if len(w) > 2 else 0.0) for w in waypoints),
        noise=NoiseModel.noiseless() if noise is None else noise,
        **kw,
    )


@pytest.fixture
def square_room():
    anchors = [(1, 0.0, 0.0), (2, 8.0, 0.0), (3, 8.0, 6.0), (4, 0.0, 6.0), (5, 4.0, 7.0), (6, 9.0, 3.0)]
    path = [(1.0, 1.0), (7.0, 1.0), (7.0, 5.0), (1.0, 5.0), (1.0, 1.0)]
    return make_scenario(anchors, path, speed_mps=1.0, sample_hz=2.0, seed=11)


def angle_diff(a, b):
    return abs((a - b + math.pi) % (2 * math.pi) - math.pi)


_CRITERIA = {}


@pytest.fixture
def criterion(request):
    """Record one acceptance line: ``criterion(n, ok, detail)`` returns ``ok``."""

    def record(number, ok, detail):
        _CRITERIA[number] = (bool(ok), detail)
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_CRITERIA):
        ok, detail = _CRITERIA[number]
        terminalreporter.write_line(f"criterion {number:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
