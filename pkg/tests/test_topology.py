import importlib.resources

import numpy as np
import pytest

from qkdprov.parsing import ParseError
from qkdprov.topology import (CapacityError, NoPathError, ValidationError,
                              all_simple_paths, assign_wavelengths,
                              canonical_link, check_assignment,
                              k_shortest_paths, load_topology,
                              load_topology_file, shortest_path)

from conftest import TRIANGLE


def data_path(name):
    return importlib.resources.files("qkdprov") / "data" / name


def test_triangle_loads_three_links(triangle):
    assert len(triangle.nodes) == 3
    assert len(triangle.links) == 3
    assert triangle.length(("a", "b")) == 160


def test_shipped_nsfnet_has_14_nodes():
    topo = load_topology_file(data_path("nsfnet.topo"))
    assert len(topo.nodes) == 14


def test_shipped_usnet_has_24_nodes():
    topo = load_topology_file(data_path("usnet.topo"))
    assert len(topo.nodes) == 24


@pytest.mark.parametrize("text,fragment", [
    ("node a\nnode b\nlink a b 160\nlink b c 100", "unknown node"),
    ("node a\nnode b\nnode c\nlink a b 160", "not connected"),
    ("node a\nnode b\nlink a b -5", "non-positive length"),
    ("node a\nnode b\nlink a b 160\nqkd_capacity 0", "at least 1"),
])
def test_invariant_violations_are_named(text, fragment):
    with pytest.raises(ValidationError, match=fragment):
        load_topology(text)


def test_parse_errors_carry_line_numbers():
    with pytest.raises(ParseError) as err:
        load_topology("node a\nnode b\nlink a b", "bad.topo")
    assert err.value.line_no == 3
    with pytest.raises(ParseError, match="duplicate link"):
        load_topology("node a\nnode b\nlink a b 1\nlink b a 2")
    with pytest.raises(ParseError, match="self-loop"):
        load_topology("node a\nnode b\nlink a a 1")


def test_shortest_path_matches_enumeration(triangle):
    route = shortest_path(triangle, "a", "c")
    assert route.nodes == ("a", "b", "c")
    assert route.length_km == 320
    enumerated = all_simple_paths(triangle, "a", "c")
    assert route.length_km == min(r.length_km for r in enumerated)


def test_shortest_path_rejects_equal_endpoints(triangle):
    with pytest.raises(ValidationError):
        shortest_path(triangle, "a", "a")


def test_shortest_path_tie_breaks_lexicographically():
    square = load_topology("""
        node a
        node b
        node d
        node z
        link a b 100
        link b z 100
        link a d 100
        link d z 100
    """)
    # Two equal-length routes a-b-z and a-d-z; enumeration confirms the tie
    # and the solver must return the lexicographically smaller sequence.
    tied = [r for r in all_simple_paths(square, "a", "z") if r.length_km == 200]
    assert len(tied) == 2
    assert shortest_path(square, "a", "z").nodes == min(t.nodes for t in tied)


def test_k_shortest_paths_triangle(triangle):
    routes = k_shortest_paths(triangle, "a", "c", 2)
    assert [(r.nodes, r.length_km) for r in routes] == [
        (("a", "b", "c"), 320), (("a", "c"), 400)]


def test_k_shortest_paths_first_equals_shortest(triangle):
    assert k_shortest_paths(triangle, "a", "c", 1)[0] == shortest_path(triangle, "a", "c")


def test_k_shortest_paths_line_graph_returns_single_path():
    line = load_topology("node a\nnode b\nnode c\nlink a b 10\nlink b c 10")
    assert len(k_shortest_paths(line, "a", "c", 3)) == 1


def test_k_shortest_paths_random_graphs_match_enumeration():
    rng = np.random.default_rng(7)
    for _ in range(25):
        n = int(rng.integers(4, 7))
        nodes = [f"v{i}" for i in range(n)]
        lines = [f"node {v}" for v in nodes]
        # Random connected graph: a spine plus random chords.
        links = {canonical_link(nodes[i - 1], nodes[i]) for i in range(1, n)}
        for _ in range(n):
            i, j = rng.integers(0, n, size=2)
            if i != j:
                links.add(canonical_link(nodes[i], nodes[j]))
        for a, b in sorted(links):
            lines.append(f"link {a} {b} {rng.integers(50, 400)}")
        topo = load_topology("\n".join(lines))
        enumerated = all_simple_paths(topo, nodes[0], nodes[-1])
        got = k_shortest_paths(topo, nodes[0], nodes[-1], 3)
        lengths = sorted(r.length_km for r in enumerated)
        assert [r.length_km for r in got] == lengths[: len(got)]
        assert got[0].length_km <= min(lengths)
        balance = got[0].flow_balance()
        assert balance[nodes[0]] == 1 and balance[nodes[-1]] == -1
        assert all(v == 0 for k, v in balance.items() if k not in (nodes[0], nodes[-1]))


def test_unreachable_destination():
    # Validated topologies are connected, so unreachability only arises when
    # the search is constrained; the spur search reports it as "no path".
    line = load_topology("node a\nnode b\nlink a b 10")
    from qkdprov.topology import _shortest_avoiding
    assert _shortest_avoiding(line, "a", "b", set(), {("a", "b")}) is None
    with pytest.raises(ValidationError):
        shortest_path(line, "a", "zz")
    assert NoPathError is not None


def test_assign_single_request_first_fit(triangle):
    route = shortest_path(triangle, "a", "c", request_id="r1")
    got = assign_wavelengths(triangle, {"r1": route}, {"r1": 1}, {"r1": 0})
    assert got.km["r1"][("a", "b")] == (1,)
    assert got.km["r1"][("b", "c")] == (1,)


def test_assign_two_requests_take_successive_indices(triangle):
    routes = {
        "r1": shortest_path(triangle, "a", "c", request_id="r1"),
        "r2": shortest_path(triangle, "a", "c", request_id="r2"),
    }
    got = assign_wavelengths(triangle, routes, {"r1": 1, "r2": 1}, {"r1": 3, "r2": 3})
    assert got.km["r1"][("a", "b")] == (1,)
    assert got.km["r2"][("a", "b")] == (2,)
    assert got.qkd["r1"][("a", "b")] == (1, 2, 3)
    assert got.qkd["r2"][("a", "b")] == (4, 5, 6)


def test_assign_capacity_exceeded_names_link_and_class():
    tight = load_topology(TRIANGLE.replace("km_capacity 100", "km_capacity 1"))
    routes = {
        "r1": shortest_path(tight, "a", "c", request_id="r1"),
        "r2": shortest_path(tight, "a", "c", request_id="r2"),
    }
    with pytest.raises(CapacityError) as err:
        assign_wavelengths(tight, routes, {"r1": 1, "r2": 1}, {})
    assert err.value.wavelength_class == "km"
    assert err.value.link in (("a", "b"), ("b", "c"))


def test_assignment_validator_passes_assigner_output(triangle):
    routes = {
        "r1": shortest_path(triangle, "a", "c", request_id="r1"),
        "r2": shortest_path(triangle, "a", "b", request_id="r2"),
    }
    km = {"r1": 1, "r2": 1}
    qkd = {"r1": 6, "r2": 3}
    got = assign_wavelengths(triangle, routes, km, qkd)
    assert check_assignment(triangle, routes, km, qkd, got) == []


def test_assignment_validator_catches_mutations(triangle):
    routes = {
        "r1": shortest_path(triangle, "a", "c", request_id="r1"),
        "r2": shortest_path(triangle, "a", "c", request_id="r2"),
    }
    km = {"r1": 1, "r2": 1}
    qkd = {"r1": 3, "r2": 3}
    good = assign_wavelengths(triangle, routes, km, qkd)

    broken = assign_wavelengths(triangle, routes, km, qkd)
    broken.qkd["r2"][("a", "b")] = (1, 5, 6)  # collides with r1's triple
    assert any("shared" in v for v in check_assignment(triangle, routes, km, qkd, broken))

    drifted = assign_wavelengths(triangle, routes, km, qkd)
    drifted.km["r1"][("b", "c")] = (2,)  # differs from the a-b hop
    assert any("continuity" in v for v in check_assignment(triangle, routes, km, qkd, drifted))

    assert check_assignment(triangle, routes, km, qkd, good) == []
