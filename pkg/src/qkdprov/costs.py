"""Hardware counts and monetary cost of provisioning plans.

Each link of length ``l`` is split into ``n_seg = ceil(l / L)`` secured
segments, where ``L`` is the maximum span between two quantum transmitters.
One QKD circuit (a triple of quantum wavelengths) needs two transmitters and
one untrusted receiver per segment; one KM wavelength needs a local key
manager per segment endpoint, security infrastructure at trusted relays
between segments, and MUX/DEMUX pairs. Channel cost is charged per km per
wavelength. Reserved capacity is cheap; on-demand recourse is expensive.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field, replace

from .demand import ScenarioSet
from .parsing import ParseError, parse_number, read_tokens
from .topology import Link, NetworkTopology, Route

COMPONENT_CLASSES = ("tx", "rx", "km", "si", "md", "ch")

# Normalized monetary units per component, reserved vs on-demand.
DEFAULT_RESERVED = {"tx": 1500.0, "rx": 2250.0, "km": 1200.0,
                    "si": 150.0, "md": 300.0, "ch": 1.0}
DEFAULT_ON_DEMAND = {"tx": 6000.0, "rx": 9000.0, "km": 3000.0,
                     "si": 500.0, "md": 900.0, "ch": 4.0}


class PlanError(ValueError):
    """A provisioning plan violates a structural or capacity invariant."""


@dataclass(frozen=True)
class PhysicalParams:
    """Segment geometry and attainable key rate.

    The attainable rate at the full segment length is ``kl_scale / L``, i.e.
    inversely proportional to distance. The default scale makes the rate one
    key unit per second, so integer demand levels map directly to circuits.
    """

    segment_length_km: float = 160.0
    kl_scale: float | None = None

    def __post_init__(self):
        if self.segment_length_km <= 0:
            raise ValueError("segment length must be positive")
        if self.kl_scale is None:
            object.__setattr__(self, "kl_scale", self.segment_length_km)
        if self.kl_scale <= 0:
            raise ValueError("key-rate scale must be positive")

    @property
    def qt_qr_distance_km(self) -> float:
        return self.segment_length_km / 2.0

    @property
    def key_rate_capacity(self) -> float:
        return self.kl_scale / self.segment_length_km


@dataclass(frozen=True)
class CostTable:
    """Reserved and on-demand unit prices for the six component classes."""

    reserved: dict[str, float] = field(default_factory=lambda: dict(DEFAULT_RESERVED))
    on_demand: dict[str, float] = field(default_factory=lambda: dict(DEFAULT_ON_DEMAND))
    on_demand_multiplier: float = 1.0

    def __post_init__(self):
        for table, label in ((self.reserved, "reserved"), (self.on_demand, "on-demand")):
            missing = [c for c in COMPONENT_CLASSES if c not in table]
            if missing:
                raise ValueError(f"{label} prices missing classes {missing}")
            if any(table[c] < 0 for c in COMPONENT_CLASSES):
                raise ValueError(f"{label} prices must be nonnegative")
        cheap = [c for c in COMPONENT_CLASSES if self.on_demand[c] < self.reserved[c]]
        if cheap:
            warnings.warn(
                f"on-demand price below reserved for classes {cheap}; "
                "recourse would never be penalized", stacklevel=2)

    def on_demand_price(self, component: str) -> float:
        return self.on_demand[component] * self.on_demand_multiplier

    def with_multiplier(self, multiplier: float) -> "CostTable":
        return replace(self, on_demand_multiplier=multiplier)


def load_cost_table(path, on_demand_multiplier: float = 1.0) -> CostTable:
    """Parse ``cost <class> <reserved> <on_demand>`` lines."""
    reserved: dict[str, float] = {}
    on_demand: dict[str, float] = {}
    for line_no, tokens in read_tokens(path):
        if tokens[0] != "cost" or len(tokens) != 4:
            raise ParseError(str(path), line_no, "expected: cost <class> <reserved> <on_demand>")
        cls = tokens[1]
        if cls not in COMPONENT_CLASSES:
            raise ParseError(str(path), line_no,
                             f"unknown class {cls!r}, expected one of {COMPONENT_CLASSES}")
        reserved[cls] = parse_number(tokens[2], str(path), line_no)
        on_demand[cls] = parse_number(tokens[3], str(path), line_no)
    return CostTable(reserved=reserved, on_demand=on_demand,
                     on_demand_multiplier=on_demand_multiplier)


@dataclass(frozen=True)
class ComponentCounts:
    """Hardware totals for one routed request."""

    qt: int
    qr: int
    lkm: int
    si: int
    muxdemux: int
    channel_km: float


@dataclass
class ProvisioningPlan:
    """First-stage reservations plus per-scenario on-demand recourse.

    QKD wavelength counts are stored as raw wavelengths and must be
    divisible by 3 (circuits occupy triples).
    """

    reserved_km: dict[Link, int]
    reserved_qkd: dict[Link, int]
    on_demand_km: dict[int, dict[Link, int]]
    on_demand_qkd: dict[int, dict[Link, int]]

    @staticmethod
    def empty(levels: tuple[int, ...] = ()) -> "ProvisioningPlan":
        return ProvisioningPlan(
            reserved_km={}, reserved_qkd={},
            on_demand_km={k: {} for k in levels},
            on_demand_qkd={k: {} for k in levels},
        )

    def validate(self, topo: NetworkTopology) -> None:
        for name, table in (("reserved_km", self.reserved_km),
                            ("reserved_qkd", self.reserved_qkd)):
            for link, count in table.items():
                if count < 0 or count != int(count):
                    raise PlanError(f"{name}[{link}] must be a nonnegative integer")
        for link, count in self.reserved_qkd.items():
            if count % 3:
                raise PlanError(f"reserved_qkd[{link}]={count} is not a triple count")
        for level, table in self.on_demand_qkd.items():
            for link, count in table.items():
                if count % 3 or count < 0:
                    raise PlanError(f"on_demand_qkd[{level}][{link}]={count} invalid")
        for level in self.on_demand_km:
            for link in set(self.reserved_km) | set(self.on_demand_km[level]):
                total = self.reserved_km.get(link, 0) + self.on_demand_km[level].get(link, 0)
                if total > topo.km_capacity:
                    raise PlanError(
                        f"KM capacity exceeded on {link[0]}-{link[1]} at level {level}")
            for link in set(self.reserved_qkd) | set(self.on_demand_qkd[level]):
                total = self.reserved_qkd.get(link, 0) + self.on_demand_qkd[level].get(link, 0)
                if total > topo.qkd_capacity:
                    raise PlanError(
                        f"QKD capacity exceeded on {link[0]}-{link[1]} at level {level}")


def segments(length_km: float, params: PhysicalParams) -> int:
    return math.ceil(length_km / params.segment_length_km)


def concurrent_links(key_rate: float, params: PhysicalParams) -> int:
    """Number of parallel QKD circuits needed to deliver ``key_rate``."""
    if key_rate < 0:
        raise ValueError("key rate must be nonnegative")
    return math.ceil(key_rate / params.key_rate_capacity)


def request_components(topo: NetworkTopology, route: Route, circuits: int,
                       params: PhysicalParams) -> ComponentCounts:
    """Hardware counts for one request carrying ``circuits`` QKD circuits."""
    if circuits < 0:
        raise ValueError("circuit count must be nonnegative")
    L = params.segment_length_km
    qt = qr = lkm = si = md = 0
    channel = 0.0
    for link in route.links:
        l = topo.length(link)
        n_seg = math.ceil(l / L)
        qt += 2 * circuits * n_seg
        qr += circuits * n_seg
        lkm += math.ceil(l / L + 1)
        si += max(math.ceil(l / L - 1), 0)
        md += n_seg + max(math.ceil(l / L - 1), 0)
        channel += 3 * circuits * l + l
    return ComponentCounts(qt=qt, qr=qr, lkm=lkm, si=si, muxdemux=md,
                           channel_km=channel)


@dataclass(frozen=True)
class LinkUnitCounts:
    """Per-link hardware needed by one QKD triple and by one KM wavelength."""

    triple_qt: int
    triple_qr: int
    km_lkm: int
    km_si: int
    km_md: int


def link_unit_counts(length_km: float, params: PhysicalParams) -> LinkUnitCounts:
    if length_km <= 0:
        raise ValueError("link length must be positive")
    n_seg = segments(length_km, params)
    return LinkUnitCounts(
        triple_qt=2 * n_seg,
        triple_qr=n_seg,
        km_lkm=n_seg + 1,
        km_si=max(n_seg - 1, 0),
        km_md=2 * n_seg - 1,
    )


@dataclass(frozen=True)
class LinkUnitCosts:
    """Money per reserved/on-demand QKD triple and KM wavelength on one link."""

    reserved_triple: float
    on_demand_triple: float
    reserved_km: float
    on_demand_km: float


def link_unit_costs(length_km: float, costs: CostTable,
                    params: PhysicalParams) -> LinkUnitCosts:
    units = link_unit_counts(length_km, params)

    def triple(price):
        return (units.triple_qt * price("tx") + units.triple_qr * price("rx")
                + 3 * length_km * price("ch"))

    def km(price):
        return (units.km_lkm * price("km") + units.km_si * price("si")
                + units.km_md * price("md") + length_km * price("ch"))

    return LinkUnitCosts(
        reserved_triple=triple(costs.reserved.__getitem__),
        on_demand_triple=triple(costs.on_demand_price),
        reserved_km=km(costs.reserved.__getitem__),
        on_demand_km=km(costs.on_demand_price),
    )


def _stage_cost(km_counts: dict[Link, int], qkd_counts: dict[Link, int],
                topo: NetworkTopology, price, params: PhysicalParams) -> float:
    total = 0.0
    for link in sorted(set(km_counts) | set(qkd_counts)):
        x = km_counts.get(link, 0)
        f = qkd_counts.get(link, 0)
        if x == 0 and f == 0:
            continue
        length = topo.length(link)
        units = link_unit_counts(length, params)
        total += (f / 3) * (units.triple_qt * price("tx") + units.triple_qr * price("rx"))
        total += x * (units.km_lkm * price("km") + units.km_si * price("si")
                      + units.km_md * price("md"))
        total += length * (f + x) * price("ch")
    return total


def plan_cost(plan: ProvisioningPlan, topo: NetworkTopology, costs: CostTable,
              params: PhysicalParams,
              scenarios: ScenarioSet | None = None
              ) -> tuple[float, dict[int, float], float]:
    """Reserved cost, per-scenario recourse cost, and the expected total."""
    plan.validate(topo)
    first = _stage_cost(plan.reserved_km, plan.reserved_qkd, topo,
                        costs.reserved.__getitem__, params)
    second: dict[int, float] = {}
    for level in sorted(plan.on_demand_km):
        second[level] = _stage_cost(
            plan.on_demand_km.get(level, {}), plan.on_demand_qkd.get(level, {}),
            topo, costs.on_demand_price, params)
    if scenarios is None:
        if any(cost > 0 for cost in second.values()):
            raise ValueError("scenario probabilities required to expectation-weight recourse")
        expected = first
    else:
        probs = dict(zip(scenarios.levels, scenarios.probabilities))
        expected = first + math.fsum(
            probs.get(level, 0.0) * cost for level, cost in second.items())
    return first, second, expected
