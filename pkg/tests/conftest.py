import math

import pytest

from qkdprov.costs import CostTable, PhysicalParams
from qkdprov.topology import load_topology


TRIANGLE = """
qkd_capacity 300
km_capacity 100
node a
node b
node c
link a b 160
link b c 160
link a c 400
"""

# Two-hop detour totals 160 km but needs two segment sets; the 165 km direct
# link needs one extra relay yet fewer key managers, so the cheapest route is
# not the shortest one.
DETOUR = """
qkd_capacity 300
km_capacity 100
node a
node b
node c
link a b 80
link b c 80
link a c 165
"""


@pytest.fixture
def triangle():
    return load_topology(TRIANGLE, "triangle")


@pytest.fixture
def detour():
    return load_topology(DETOUR, "detour")


@pytest.fixture
def params():
    return PhysicalParams(segment_length_km=160.0)


@pytest.fixture
def costs():
    return CostTable()


def assert_close(a, b, rel=1e-9):
    assert math.isclose(a, b, rel_tol=rel, abs_tol=1e-9), f"{a} != {b}"
