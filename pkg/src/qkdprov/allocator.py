"""Reservation solvers: exact two-stage optimum, baselines, and a brute-force oracle.

With routing fixed to shortest paths and all requests sharing one realized
demand level, the two-stage problem separates per link and per wavelength
class into a discrete newsvendor: reserve ``w`` units to minimize
``c_b * w + sum_k p(k) * c_o * max(0, d_k - w)``. The solver enumerates
``w`` exactly; an independent critical-fractile formula and an exhaustive
oracle over candidate routings guard the decomposition.
"""

from __future__ import annotations

import itertools
import math
import time
from dataclasses import dataclass

import numpy as np

from . import topology as topo_mod
from .costs import (CostTable, LinkUnitCosts, PhysicalParams, ProvisioningPlan,
                    concurrent_links, link_unit_costs, plan_cost)
from .demand import ScenarioSet
from .topology import (Link, NetworkTopology, Route, TransmissionRequest,
                       assign_wavelengths, check_assignment, k_shortest_paths,
                       shortest_path)

ORACLE_MAX_NODES = 6
ORACLE_MAX_REQUESTS = 4
ORACLE_MAX_SCENARIOS = 3
ORACLE_MAX_PATHS = 3


class InfeasibleError(ValueError):
    """Demand cannot fit link capacities; carries the bottleneck links."""

    def __init__(self, bottlenecks: list[tuple[Link, str]]):
        self.bottlenecks = bottlenecks
        pretty = ", ".join(f"{a}-{b} ({cls})" for (a, b), cls in bottlenecks)
        super().__init__(f"capacity exceeded on: {pretty}")


class InstanceTooLargeError(ValueError):
    """The exhaustive oracle only handles desk-size instances."""


@dataclass(frozen=True)
class DemandProfile:
    """Per-scenario wavelength demand on every link, derived from routing.

    ``triples[k][link]`` counts QKD circuit triples (one triple = 3 quantum
    wavelengths); ``km[k][link]`` counts KM wavelengths, one per request that
    is active (nonzero circuits) in that scenario.
    """

    levels: tuple[int, ...]
    triples: dict[int, dict[Link, int]]
    km: dict[int, dict[Link, int]]

    def max_triples(self, link: Link) -> int:
        return max(self.triples[k].get(link, 0) for k in self.levels)

    def max_km(self, link: Link) -> int:
        return max(self.km[k].get(link, 0) for k in self.levels)

    @property
    def links(self) -> list[Link]:
        seen = set()
        for k in self.levels:
            seen.update(self.triples[k])
            seen.update(self.km[k])
        return sorted(seen)


@dataclass
class SolveReport:
    """Solver output: the plan, its cost split, and bookkeeping."""

    plan: ProvisioningPlan
    routes: dict[str, Route]
    first_stage_cost: float
    second_stage_costs: dict[int, float]
    expected_total: float
    solver: str
    wall_time_s: float

    def reserved_levels(self) -> dict[Link, tuple[int, int]]:
        """Per link: (KM wavelengths, QKD triples) reserved up front."""
        links = sorted(set(self.plan.reserved_km) | set(self.plan.reserved_qkd))
        return {
            link: (self.plan.reserved_km.get(link, 0),
                   self.plan.reserved_qkd.get(link, 0) // 3)
            for link in links
        }

    def csv_rows(self, scenarios: ScenarioSet) -> list[str]:
        probs = dict(zip(scenarios.levels, scenarios.probabilities))
        links = sorted(set(self.plan.reserved_km) | set(self.plan.reserved_qkd)
                       | {l for t in self.plan.on_demand_km.values() for l in t}
                       | {l for t in self.plan.on_demand_qkd.values() for l in t})
        rows = ["link,reserved_km,reserved_qkd,expected_on_demand_km,expected_on_demand_qkd"]
        for link in links:
            exp_km = math.fsum(
                probs.get(k, 0.0) * self.plan.on_demand_km.get(k, {}).get(link, 0)
                for k in self.plan.on_demand_km)
            exp_qkd = math.fsum(
                probs.get(k, 0.0) * self.plan.on_demand_qkd.get(k, {}).get(link, 0)
                for k in self.plan.on_demand_qkd)
            rows.append(f"{link[0]}-{link[1]},{self.plan.reserved_km.get(link, 0)},"
                        f"{self.plan.reserved_qkd.get(link, 0)},{exp_km:.6g},{exp_qkd:.6g}")
        return rows


def route_all(topo: NetworkTopology,
              requests: list[TransmissionRequest]) -> dict[str, Route]:
    """Shortest route per request; the same routes serve every scenario."""
    return {
        r.id: shortest_path(topo, r.source, r.destination, request_id=r.id)
        for r in requests
    }


def build_demand_profile(routes: dict[str, Route], scenarios: ScenarioSet,
                         params: PhysicalParams) -> DemandProfile:
    crossings: dict[Link, int] = {}
    for route in routes.values():
        for link in route.links:
            crossings[link] = crossings.get(link, 0) + 1
    triples: dict[int, dict[Link, int]] = {}
    km: dict[int, dict[Link, int]] = {}
    for level in scenarios.levels:
        circuits = concurrent_links(float(level), params)
        triples[level] = {link: circuits * n for link, n in crossings.items()}
        km[level] = {link: (n if circuits > 0 else 0) for link, n in crossings.items()}
    return DemandProfile(levels=scenarios.levels, triples=triples, km=km)


def solve_newsvendor(demands: list[int], probabilities: list[float],
                     reserve_cost: float, recourse_cost: float) -> tuple[int, float]:
    """Enumerate reservations 0..max(d); ties break to the smaller stock."""
    best_w, best_cost = 0, None
    for w in range(max(demands) + 1):
        cost = reserve_cost * w + math.fsum(
            p * recourse_cost * max(0, d - w)
            for d, p in zip(demands, probabilities))
        if best_cost is None or cost < best_cost - 1e-12:
            best_w, best_cost = w, cost
    return best_w, best_cost


def critical_fractile_reservation(demands: list[int], probabilities: list[float],
                                  reserve_cost: float, recourse_cost: float) -> int:
    """Closed form: smallest w with P(d <= w) >= 1 - c_b/c_o."""
    if recourse_cost <= 0:
        return 0
    ratio = 1.0 - reserve_cost / recourse_cost
    if ratio <= 0:
        return 0
    for w in range(max(demands) + 1):
        cdf = math.fsum(p for d, p in zip(demands, probabilities) if d <= w)
        if cdf >= ratio - 1e-12:
            return w
    return max(demands)


def _capacity_check(profile: DemandProfile, topo: NetworkTopology) -> None:
    bottlenecks: list[tuple[Link, str]] = []
    for link in profile.links:
        if 3 * profile.max_triples(link) > topo.qkd_capacity:
            bottlenecks.append((link, "qkd"))
        if profile.max_km(link) > topo.km_capacity:
            bottlenecks.append((link, "km"))
    if bottlenecks:
        raise InfeasibleError(bottlenecks)


def _plan_from_reservations(profile: DemandProfile,
                            reserved_triples: dict[Link, int],
                            reserved_km: dict[Link, int]) -> ProvisioningPlan:
    """Recourse is the exact shortfall in every scenario."""
    plan = ProvisioningPlan(
        reserved_km={l: c for l, c in sorted(reserved_km.items()) if c},
        reserved_qkd={l: 3 * c for l, c in sorted(reserved_triples.items()) if c},
        on_demand_km={}, on_demand_qkd={},
    )
    for level in profile.levels:
        plan.on_demand_km[level] = {
            link: need - reserved_km.get(link, 0)
            for link, need in sorted(profile.km[level].items())
            if need > reserved_km.get(link, 0)
        }
        plan.on_demand_qkd[level] = {
            link: 3 * (need - reserved_triples.get(link, 0))
            for link, need in sorted(profile.triples[level].items())
            if need > reserved_triples.get(link, 0)
        }
    return plan


def _report(plan: ProvisioningPlan, routes: dict[str, Route],
            topo: NetworkTopology, costs: CostTable, params: PhysicalParams,
            scenarios: ScenarioSet, solver: str, started: float) -> SolveReport:
    first, second, expected = plan_cost(plan, topo, costs, params, scenarios)
    return SolveReport(plan=plan, routes=routes, first_stage_cost=first,
                       second_stage_costs=second, expected_total=expected,
                       solver=solver, wall_time_s=time.perf_counter() - started)


def solve_deterministic(topo: NetworkTopology, requests: list[TransmissionRequest],
                        level: int, costs: CostTable,
                        params: PhysicalParams) -> SolveReport:
    """Reserve exactly the demand of one known level; no recourse."""
    started = time.perf_counter()
    routes = route_all(topo, requests)
    single = ScenarioSet(levels=(level,), probabilities=(1.0,), mean_rate=float(level))
    profile = build_demand_profile(routes, single, params)
    _capacity_check(profile, topo)
    circuits = concurrent_links(float(level), params)
    assign_wavelengths(
        topo, routes,
        km_demand={rid: (1 if circuits > 0 else 0) for rid in routes},
        qkd_demand={rid: 3 * circuits for rid in routes},
    )
    plan = _plan_from_reservations(profile, profile.triples[level], profile.km[level])
    return _report(plan, routes, topo, costs, params, single, "deterministic", started)


def _reserve_by_class(profile: DemandProfile, scenarios: ScenarioSet,
                      unit_costs: dict[Link, LinkUnitCosts]
                      ) -> tuple[dict[Link, int], dict[Link, int]]:
    probs = list(scenarios.probabilities)
    triples: dict[Link, int] = {}
    km: dict[Link, int] = {}
    for link in profile.links:
        uc = unit_costs[link]
        tri_demand = [profile.triples[k].get(link, 0) for k in scenarios.levels]
        km_demand = [profile.km[k].get(link, 0) for k in scenarios.levels]
        triples[link], _ = solve_newsvendor(tri_demand, probs,
                                            uc.reserved_triple, uc.on_demand_triple)
        km[link], _ = solve_newsvendor(km_demand, probs,
                                       uc.reserved_km, uc.on_demand_km)
    return triples, km


def solve_sip(topo: NetworkTopology, requests: list[TransmissionRequest],
              scenarios: ScenarioSet, costs: CostTable,
              params: PhysicalParams) -> SolveReport:
    """Exact two-stage optimum over shortest-path routing."""
    started = time.perf_counter()
    routes = route_all(topo, requests)
    profile = build_demand_profile(routes, scenarios, params)
    _capacity_check(profile, topo)
    unit_costs = {link: link_unit_costs(topo.length(link), costs, params)
                  for link in profile.links}
    triples, km = _reserve_by_class(profile, scenarios, unit_costs)
    plan = _plan_from_reservations(profile, triples, km)
    return _report(plan, routes, topo, costs, params, scenarios, "sip", started)


def evf_plan(topo: NetworkTopology, requests: list[TransmissionRequest],
             scenarios: ScenarioSet, costs: CostTable,
             params: PhysicalParams) -> SolveReport:
    """Reserve at the mean demand level; recourse covers the shortfall."""
    started = time.perf_counter()
    routes = route_all(topo, requests)
    profile = build_demand_profile(routes, scenarios, params)
    _capacity_check(profile, topo)
    mean_level = int(math.floor(scenarios.mean_level() + 0.5))
    circuits = concurrent_links(float(mean_level), params)
    crossings = _crossings(routes)
    triples = {link: circuits * n for link, n in crossings.items()}
    km = {link: (n if circuits > 0 else 0) for link, n in crossings.items()}
    plan = _plan_from_reservations(profile, triples, km)
    return _report(plan, routes, topo, costs, params, scenarios, "evf", started)


def random_plan(topo: NetworkTopology, requests: list[TransmissionRequest],
                scenarios: ScenarioSet, costs: CostTable, params: PhysicalParams,
                rng: np.random.Generator) -> SolveReport:
    """Reserve each link at an independent uniform level in 0..|levels|."""
    started = time.perf_counter()
    routes = route_all(topo, requests)
    profile = build_demand_profile(routes, scenarios, params)
    _capacity_check(profile, topo)
    crossings = _crossings(routes)
    triples: dict[Link, int] = {}
    km: dict[Link, int] = {}
    for link in sorted(crossings):
        level = int(rng.integers(0, len(scenarios) + 1))
        circuits = concurrent_links(float(level), params)
        # Drawn levels may exceed the top scenario; cap at link capacity.
        triples[link] = min(circuits * crossings[link], topo.qkd_capacity // 3)
        km[link] = min(crossings[link] if circuits > 0 else 0, topo.km_capacity)
    plan = _plan_from_reservations(profile, triples, km)
    return _report(plan, routes, topo, costs, params, scenarios, "random", started)


def _crossings(routes: dict[str, Route]) -> dict[Link, int]:
    crossings: dict[Link, int] = {}
    for route in routes.values():
        for link in route.links:
            crossings[link] = crossings.get(link, 0) + 1
    return crossings


def brute_force_oracle(topo: NetworkTopology, requests: list[TransmissionRequest],
                       scenarios: ScenarioSet, costs: CostTable,
                       params: PhysicalParams,
                       paths_per_request: int = ORACLE_MAX_PATHS) -> SolveReport:
    """Exhaustive search over candidate routings and reservation levels.

    For every combination of candidate paths, evaluates every per-link
    reservation count through the plan cost function and keeps the exact
    minimum. Only meant to verify the decomposed solver on tiny instances.
    """
    started = time.perf_counter()
    if len(topo.nodes) > ORACLE_MAX_NODES:
        raise InstanceTooLargeError(f"oracle handles at most {ORACLE_MAX_NODES} nodes")
    if len(requests) > ORACLE_MAX_REQUESTS:
        raise InstanceTooLargeError(f"oracle handles at most {ORACLE_MAX_REQUESTS} requests")
    if len(scenarios) > ORACLE_MAX_SCENARIOS:
        raise InstanceTooLargeError(f"oracle handles at most {ORACLE_MAX_SCENARIOS} scenarios")
    if paths_per_request > ORACLE_MAX_PATHS:
        raise InstanceTooLargeError(f"oracle handles at most {ORACLE_MAX_PATHS} paths per request")

    candidates = {
        r.id: k_shortest_paths(topo, r.source, r.destination,
                               paths_per_request, request_id=r.id)
        for r in requests
    }
    order = sorted(candidates)
    best: tuple[float, dict[str, Route], ProvisioningPlan] | None = None
    first_infeasible: InfeasibleError | None = None
    for combo in itertools.product(*(candidates[rid] for rid in order)):
        routes = dict(zip(order, combo))
        profile = build_demand_profile(routes, scenarios, params)
        try:
            _capacity_check(profile, topo)
        except InfeasibleError as err:
            first_infeasible = first_infeasible or err
            continue
        triples: dict[Link, int] = {}
        km: dict[Link, int] = {}
        total = 0.0
        for link in profile.links:
            tri_demand = {k: profile.triples[k].get(link, 0) for k in scenarios.levels}
            km_demand = {k: profile.km[k].get(link, 0) for k in scenarios.levels}
            w_tri, cost_tri = _scan_link(topo, link, tri_demand, {}, costs, params, scenarios)
            w_km, cost_km = _scan_link(topo, link, {}, km_demand, costs, params, scenarios)
            triples[link], km[link] = w_tri, w_km
            total += cost_tri + cost_km
        if best is None or total < best[0] - 1e-9:
            plan = _plan_from_reservations(profile, triples, km)
            best = (total, routes, plan)
    if best is None:
        raise first_infeasible or InfeasibleError([])
    _, routes, plan = best
    return _report(plan, routes, topo, costs, params, scenarios, "oracle", started)


def _scan_link(topo: NetworkTopology, link: Link, tri_demand: dict[int, int],
               km_demand: dict[int, int], costs: CostTable, params: PhysicalParams,
               scenarios: ScenarioSet) -> tuple[int, float]:
    """Try every reservation count on one link, costing full mini-plans."""
    high = max(list(tri_demand.values()) + list(km_demand.values()) + [0])
    best_w, best_cost = 0, None
    for w in range(high + 1):
        if tri_demand:
            plan = ProvisioningPlan(
                reserved_km={}, reserved_qkd={link: 3 * w} if w else {},
                on_demand_km={k: {} for k in scenarios.levels},
                on_demand_qkd={k: ({link: 3 * (d - w)} if d > w else {})
                               for k, d in tri_demand.items()},
            )
        else:
            plan = ProvisioningPlan(
                reserved_km={link: w} if w else {}, reserved_qkd={},
                on_demand_km={k: ({link: d - w} if d > w else {})
                              for k, d in km_demand.items()},
                on_demand_qkd={k: {} for k in scenarios.levels},
            )
        _, _, expected = plan_cost(plan, topo, costs, params, scenarios)
        if best_cost is None or expected < best_cost - 1e-12:
            best_w, best_cost = w, expected
    return best_w, best_cost


def check_plan(topo: NetworkTopology, requests: list[TransmissionRequest],
               routes: dict[str, Route], scenarios: ScenarioSet,
               plan: ProvisioningPlan, params: PhysicalParams,
               assignments: dict[int, topo_mod.WavelengthAssignment] | None = None
               ) -> list[str]:
    """Independent validation of a plan against the full constraint set.

    Per scenario: route flow conservation, demand satisfaction by
    reserved+on-demand counts, triple coupling, wavelength continuity,
    capacity, and uniqueness. Returns human-readable violations.
    """
    violations: list[str] = []
    by_id = {r.id: r for r in requests}
    for rid, route in sorted(routes.items()):
        request = by_id.get(rid)
        if request is None:
            violations.append(f"route for unknown request {rid}")
            continue
        if route.nodes[0] != request.source or route.nodes[-1] != request.destination:
            violations.append(f"{rid}: route endpoints do not match request")
        if len(set(route.nodes)) != len(route.nodes):
            violations.append(f"{rid}: route is not a simple path")
        balance = route.flow_balance()
        expect = {request.source: 1, request.destination: -1}
        for node, net in balance.items():
            if net != expect.get(node, 0):
                violations.append(f"{rid}: flow conservation broken at {node}")
    for level in scenarios.levels:
        circuits = concurrent_links(float(level), params)
        km_demand = {rid: (1 if circuits > 0 else 0) for rid in routes}
        qkd_demand = {rid: 3 * circuits for rid in routes}
        if assignments is not None and level in assignments:
            assignment = assignments[level]
        else:
            try:
                assignment = assign_wavelengths(topo, routes, km_demand, qkd_demand)
            except topo_mod.CapacityError as err:
                violations.append(f"level {level}: {err}")
                continue
        violations.extend(
            f"level {level}: {v}"
            for v in check_assignment(topo, routes, km_demand, qkd_demand, assignment))
        used_km: dict[Link, int] = {}
        used_qkd: dict[Link, int] = {}
        for rid, route in routes.items():
            for link in route.links:
                used_km[link] = used_km.get(link, 0) + len(assignment.km[rid][link])
                used_qkd[link] = used_qkd.get(link, 0) + len(assignment.qkd[rid][link])
        for link in sorted(set(used_km) | set(used_qkd)):
            have_km = (plan.reserved_km.get(link, 0)
                       + plan.on_demand_km.get(level, {}).get(link, 0))
            have_qkd = (plan.reserved_qkd.get(link, 0)
                        + plan.on_demand_qkd.get(level, {}).get(link, 0))
            if used_km.get(link, 0) > have_km:
                violations.append(
                    f"level {level}: KM demand unsatisfied on {link[0]}-{link[1]}")
            if used_qkd.get(link, 0) > have_qkd:
                violations.append(
                    f"level {level}: QKD demand unsatisfied on {link[0]}-{link[1]}")
    return violations
