"""Network graph, transmission requests, routing, and wavelength assignment.

Nodes are string identifiers; fiber links are undirected pairs with a length
in km. Every link multiplexes two wavelength classes: quantum (QKD) channels,
capacity ``qkd_capacity`` indices per link, and key-management (KM) channels,
capacity ``km_capacity``. A secured request occupies the same wavelength
indices on every link of its path (continuity) and no index is shared by two
requests on one link (uniqueness).
"""

from __future__ import annotations

import heapq
from dataclasses import dataclass, field

from .parsing import ParseError, iter_tokens, parse_number, read_tokens

Link = tuple[str, str]

DEFAULT_QKD_CAPACITY = 300
DEFAULT_KM_CAPACITY = 100


class ValidationError(ValueError):
    """Topology or request data violates a structural invariant."""


class NoPathError(ValueError):
    """No simple path exists between the requested endpoints."""


class CapacityError(ValueError):
    """A link ran out of wavelength indices; names the link and class."""

    def __init__(self, link: Link, wavelength_class: str, capacity: int):
        self.link = link
        self.wavelength_class = wavelength_class
        self.capacity = capacity
        super().__init__(
            f"link {link[0]}-{link[1]} exceeds {wavelength_class} capacity {capacity}"
        )


def canonical_link(a: str, b: str) -> Link:
    return (a, b) if a <= b else (b, a)


@dataclass(frozen=True)
class NetworkTopology:
    """Undirected fiber graph with per-link lengths and wavelength capacities."""

    nodes: frozenset[str]
    lengths: dict[Link, float]
    qkd_capacity: int = DEFAULT_QKD_CAPACITY
    km_capacity: int = DEFAULT_KM_CAPACITY
    adjacency: dict[str, dict[str, float]] = field(compare=False, default_factory=dict)

    def __post_init__(self):
        adjacency: dict[str, dict[str, float]] = {n: {} for n in sorted(self.nodes)}
        for (a, b), length in self.lengths.items():
            if a == b:
                raise ValidationError(f"self-loop at node {a}")
            if a not in self.nodes or b not in self.nodes:
                raise ValidationError(f"link {a}-{b} references unknown node")
            if (a, b) != canonical_link(a, b):
                raise ValidationError(f"link {a}-{b} not stored in canonical order")
            if length <= 0:
                raise ValidationError(f"link {a}-{b} has non-positive length {length}")
            adjacency[a][b] = length
            adjacency[b][a] = length
        if self.qkd_capacity < 1 or self.km_capacity < 1:
            raise ValidationError("wavelength capacities must be at least 1")
        if not self.nodes:
            raise ValidationError("topology has no nodes")
        object.__setattr__(self, "adjacency", adjacency)
        if not self._connected():
            raise ValidationError("topology is not connected")

    def _connected(self) -> bool:
        start = next(iter(sorted(self.nodes)))
        seen = {start}
        frontier = [start]
        while frontier:
            node = frontier.pop()
            for nxt in self.adjacency[node]:
                if nxt not in seen:
                    seen.add(nxt)
                    frontier.append(nxt)
        return len(seen) == len(self.nodes)

    @property
    def links(self) -> list[Link]:
        return sorted(self.lengths)

    def length(self, link: Link) -> float:
        return self.lengths[canonical_link(*link)]


@dataclass(frozen=True)
class TransmissionRequest:
    """Secured model-transmission demand between two nodes.

    The key rate is realized per demand scenario, so it stays unset on
    requests loaded from file.
    """

    id: str
    source: str
    destination: str
    key_rate: float | None = None

    def __post_init__(self):
        if self.source == self.destination:
            raise ValidationError(f"request {self.id}: source equals destination")


@dataclass(frozen=True)
class Route:
    """Simple path for one request, stored as its ordered node sequence."""

    request_id: str
    nodes: tuple[str, ...]
    length_km: float

    @property
    def links(self) -> tuple[Link, ...]:
        return tuple(
            canonical_link(a, b) for a, b in zip(self.nodes, self.nodes[1:])
        )

    def flow_balance(self) -> dict[str, int]:
        """Net out-flow per node: +1 at the source, -1 at the destination, 0 elsewhere."""
        balance: dict[str, int] = {}
        for a, b in zip(self.nodes, self.nodes[1:]):
            balance[a] = balance.get(a, 0) + 1
            balance[b] = balance.get(b, 0) - 1
        return balance


@dataclass
class WavelengthAssignment:
    """Per-request, per-link wavelength indices for both classes.

    ``km[r][link]`` and ``qkd[r][link]`` hold the 1-based indices the request
    occupies on that link; continuity means the same tuple appears on every
    link of the request's route.
    """

    km: dict[str, dict[Link, tuple[int, ...]]]
    qkd: dict[str, dict[Link, tuple[int, ...]]]


def load_topology(source: str, name: str = "<string>") -> NetworkTopology:
    """Parse a topology description.

    Line formats: ``node <id>``, ``link <a> <b> <length_km>``,
    ``qkd_capacity <int>``, ``km_capacity <int>``.
    """
    nodes: set[str] = set()
    lengths: dict[Link, float] = {}
    qkd_cap = DEFAULT_QKD_CAPACITY
    km_cap = DEFAULT_KM_CAPACITY
    for line_no, tokens in iter_tokens(source, name):
        kind, args = tokens[0], tokens[1:]
        if kind == "node":
            if len(args) != 1:
                raise ParseError(name, line_no, "node takes exactly one identifier")
            if args[0] in nodes:
                raise ParseError(name, line_no, f"duplicate node {args[0]}")
            nodes.add(args[0])
        elif kind == "link":
            if len(args) != 3:
                raise ParseError(name, line_no, "link takes <a> <b> <length_km>")
            a, b = args[0], args[1]
            if a == b:
                raise ParseError(name, line_no, f"self-loop at node {a}")
            link = canonical_link(a, b)
            if link in lengths:
                raise ParseError(name, line_no, f"duplicate link {a}-{b}")
            lengths[link] = parse_number(args[2], name, line_no)
        elif kind == "qkd_capacity":
            qkd_cap = parse_number(args[0], name, line_no, int)
        elif kind == "km_capacity":
            km_cap = parse_number(args[0], name, line_no, int)
        else:
            raise ParseError(name, line_no, f"unknown directive {kind!r}")
    return NetworkTopology(
        nodes=frozenset(nodes),
        lengths=lengths,
        qkd_capacity=qkd_cap,
        km_capacity=km_cap,
    )


def load_topology_file(path) -> NetworkTopology:
    return load_topology(open(path).read(), name=str(path))


def load_requests(path, topo: NetworkTopology) -> list[TransmissionRequest]:
    """Parse ``request <id> <src> <dst>`` lines and validate endpoints."""
    requests = []
    seen = set()
    for line_no, tokens in read_tokens(path):
        if tokens[0] != "request" or len(tokens) != 4:
            raise ParseError(str(path), line_no, "expected: request <id> <src> <dst>")
        _, rid, src, dst = tokens
        if rid in seen:
            raise ParseError(str(path), line_no, f"duplicate request id {rid}")
        if src not in topo.nodes or dst not in topo.nodes:
            raise ParseError(str(path), line_no, f"request {rid} references unknown node")
        seen.add(rid)
        requests.append(TransmissionRequest(id=rid, source=src, destination=dst))
    return requests


def shortest_path(topo: NetworkTopology, source: str, destination: str,
                  request_id: str = "") -> Route:
    """Minimum-length simple path; ties break to the lexicographically
    smallest node sequence so runs are reproducible."""
    if source not in topo.nodes or destination not in topo.nodes:
        raise ValidationError(f"endpoint not in topology: {source}->{destination}")
    if source == destination:
        raise ValidationError("source equals destination")
    # Dijkstra keyed on (distance, node sequence): the tuple order makes the
    # first finalized entry per node the lexicographic winner among shortest.
    heap: list[tuple[float, tuple[str, ...]]] = [(0.0, (source,))]
    done: set[str] = set()
    while heap:
        dist, path = heapq.heappop(heap)
        node = path[-1]
        if node in done:
            continue
        done.add(node)
        if node == destination:
            return Route(request_id=request_id, nodes=path, length_km=dist)
        for nxt, length in sorted(topo.adjacency[node].items()):
            if nxt not in done:
                heapq.heappush(heap, (dist + length, path + (nxt,)))
    raise NoPathError(f"no path from {source} to {destination}")


def _shortest_avoiding(topo: NetworkTopology, source: str, destination: str,
                       banned_nodes: set[str], banned_links: set[Link]):
    heap: list[tuple[float, tuple[str, ...]]] = [(0.0, (source,))]
    done: set[str] = set()
    while heap:
        dist, path = heapq.heappop(heap)
        node = path[-1]
        if node in done:
            continue
        done.add(node)
        if node == destination:
            return dist, path
        for nxt, length in sorted(topo.adjacency[node].items()):
            if nxt in done or nxt in banned_nodes:
                continue
            if canonical_link(node, nxt) in banned_links:
                continue
            heapq.heappush(heap, (dist + length, path + (nxt,)))
    return None


def k_shortest_paths(topo: NetworkTopology, source: str, destination: str,
                     count: int, request_id: str = "") -> list[Route]:
    """Yen's algorithm: loopless paths in nondecreasing length.

    Returns fewer than ``count`` routes when fewer simple paths exist.
    """
    if count < 1:
        raise ValidationError("count must be at least 1")
    first = shortest_path(topo, source, destination, request_id)
    accepted: list[tuple[float, tuple[str, ...]]] = [(first.length_km, first.nodes)]
    candidates: list[tuple[float, tuple[str, ...]]] = []
    while len(accepted) < count:
        _, last = accepted[-1]
        for i in range(len(last) - 1):
            root = last[: i + 1]
            root_len = sum(
                topo.length((root[j], root[j + 1])) for j in range(len(root) - 1)
            )
            banned_links = {
                canonical_link(nodes[i], nodes[i + 1])
                for _, nodes in accepted
                if nodes[: i + 1] == root and len(nodes) > i + 1
            }
            banned_nodes = set(root[:-1])
            spur = _shortest_avoiding(topo, root[-1], destination, banned_nodes, banned_links)
            if spur is None:
                continue
            spur_len, spur_nodes = spur
            entry = (root_len + spur_len, root + spur_nodes[1:])
            if entry not in candidates and entry not in accepted:
                candidates.append(entry)
        if not candidates:
            break
        candidates.sort()
        accepted.append(candidates.pop(0))
    return [
        Route(request_id=request_id, nodes=nodes, length_km=length)
        for length, nodes in accepted
    ]


def all_simple_paths(topo: NetworkTopology, source: str, destination: str,
                     limit: int = 100000) -> list[Route]:
    """Exhaustive DFS enumeration, intended for small verification graphs."""
    routes: list[Route] = []
    stack: list[tuple[tuple[str, ...], float]] = [((source,), 0.0)]
    while stack:
        path, dist = stack.pop()
        node = path[-1]
        if node == destination:
            routes.append(Route(request_id="", nodes=path, length_km=dist))
            continue
        if len(routes) > limit:
            raise ValidationError("path enumeration limit exceeded")
        for nxt, length in sorted(topo.adjacency[node].items(), reverse=True):
            if nxt not in path:
                stack.append((path + (nxt,), dist + length))
    routes.sort(key=lambda r: (r.length_km, r.nodes))
    return routes


def assign_wavelengths(topo: NetworkTopology, routes: dict[str, Route],
                       km_demand: dict[str, int],
                       qkd_demand: dict[str, int]) -> WavelengthAssignment:
    """First-fit assignment honoring continuity, uniqueness, and capacity.

    ``km_demand[r]`` is 0 or 1 KM wavelength; ``qkd_demand[r]`` is a multiple
    of 3 (quantum channels come in triples). Requests are served in id order.
    """
    used_km: dict[Link, set[int]] = {}
    used_qkd: dict[Link, set[int]] = {}
    out = WavelengthAssignment(km={}, qkd={})
    for rid in sorted(routes):
        route = routes[rid]
        links = route.links
        need_km = km_demand.get(rid, 0)
        need_qkd = qkd_demand.get(rid, 0)
        if need_km < 0 or need_qkd < 0:
            raise ValidationError(f"request {rid}: negative wavelength demand")
        if need_km > 1:
            raise ValidationError(f"request {rid}: a request uses at most one KM wavelength")
        if need_qkd % 3:
            raise ValidationError(f"request {rid}: QKD demand {need_qkd} is not a triple count")
        km_idx = _first_fit(links, used_km, need_km, topo.km_capacity, "km")
        qkd_idx = _first_fit(links, used_qkd, need_qkd, topo.qkd_capacity, "qkd")
        out.km[rid] = {link: km_idx for link in links}
        out.qkd[rid] = {link: qkd_idx for link in links}
        for link in links:
            used_km.setdefault(link, set()).update(km_idx)
            used_qkd.setdefault(link, set()).update(qkd_idx)
    return out


def _first_fit(links: tuple[Link, ...], used: dict[Link, set[int]], need: int,
               capacity: int, wavelength_class: str) -> tuple[int, ...]:
    if need == 0:
        return ()
    picked: list[int] = []
    for index in range(1, capacity + 1):
        if all(index not in used.get(link, ()) for link in links):
            picked.append(index)
            if len(picked) == need:
                return tuple(picked)
    # Witness: the route link with the most occupied indices is the bottleneck.
    bottleneck = max(links, key=lambda l: (len(used.get(l, ())), l))
    raise CapacityError(bottleneck, wavelength_class, capacity)


def check_assignment(topo: NetworkTopology, routes: dict[str, Route],
                     km_demand: dict[str, int], qkd_demand: dict[str, int],
                     assignment: WavelengthAssignment) -> list[str]:
    """Re-derive every wavelength constraint from scratch; returns violations.

    Checks demand match, triple coupling, continuity along each route,
    per-link uniqueness, and per-link capacity, independently of how the
    assignment was produced.
    """
    violations: list[str] = []
    per_link_km: dict[Link, list[tuple[str, int]]] = {}
    per_link_qkd: dict[Link, list[tuple[str, int]]] = {}
    for rid, route in sorted(routes.items()):
        links = route.links
        km_sets = assignment.km.get(rid, {})
        qkd_sets = assignment.qkd.get(rid, {})
        if set(km_sets) != set(links) or set(qkd_sets) != set(links):
            violations.append(f"{rid}: assignment links do not match route links")
            continue
        ref_km, ref_qkd = km_sets[links[0]], qkd_sets[links[0]]
        if len(ref_km) != km_demand.get(rid, 0):
            violations.append(f"{rid}: KM demand not met on {links[0]}")
        if len(ref_qkd) != qkd_demand.get(rid, 0):
            violations.append(f"{rid}: QKD demand not met on {links[0]}")
        # Triple coupling: 3*rho quantum channels ride on exactly one KM wavelength.
        if len(ref_qkd) > 0 and len(ref_km) != 1:
            violations.append(f"{rid}: QKD triples not coupled to a KM wavelength")
        for link in links:
            if km_sets[link] != ref_km:
                violations.append(f"{rid}: KM continuity broken on {link[0]}-{link[1]}")
            if qkd_sets[link] != ref_qkd:
                violations.append(f"{rid}: QKD continuity broken on {link[0]}-{link[1]}")
            for idx in km_sets[link]:
                if not 1 <= idx <= topo.km_capacity:
                    violations.append(f"{rid}: KM index {idx} outside capacity")
                per_link_km.setdefault(link, []).append((rid, idx))
            for idx in qkd_sets[link]:
                if not 1 <= idx <= topo.qkd_capacity:
                    violations.append(f"{rid}: QKD index {idx} outside capacity")
                per_link_qkd.setdefault(link, []).append((rid, idx))
    for link, pairs in sorted(per_link_km.items()):
        _check_link(link, pairs, topo.km_capacity, "KM", violations)
    for link, pairs in sorted(per_link_qkd.items()):
        _check_link(link, pairs, topo.qkd_capacity, "QKD", violations)
    return violations


def _check_link(link: Link, pairs: list[tuple[str, int]], capacity: int,
                label: str, violations: list[str]) -> None:
    owners: dict[int, str] = {}
    for rid, idx in pairs:
        if idx in owners and owners[idx] != rid:
            violations.append(
                f"{label} index {idx} on {link[0]}-{link[1]} shared by {owners[idx]} and {rid}"
            )
        owners[idx] = rid
    if len({idx for _, idx in pairs}) > capacity or len(pairs) > capacity:
        violations.append(f"{label} capacity exceeded on {link[0]}-{link[1]}")
