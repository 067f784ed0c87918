"""Allocation environment: agents reserve wavelengths, demand realizes, costs accrue.

Each agent owns a disjoint subset of links and sees only its own history: the
reservations it made and the on-demand shortfalls that materialized over the
last few slots, scaled to [0, 1]. Actions are continuous pairs in [-1, 1] per
link, decoded to integer (KM wavelengths, QKD triples) reservations. After
every slot one demand level is drawn, shortfalls are bought on demand, and
managers receive the ratio of the precomputed near-minimal expected cost to
the realized cost (capped at one). Controllers always receive reward zero.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .allocator import build_demand_profile, route_all, solve_sip
from .costs import CostTable, PhysicalParams, link_unit_costs
from .demand import ScenarioSet, sample_scenario
from .parsing import ParseError, parse_number, read_tokens
from .topology import Link, NetworkTopology, TransmissionRequest, canonical_link


@dataclass
class EnvConfig:
    """Instance plus agent layout for one environment."""

    topo: NetworkTopology
    requests: list[TransmissionRequest]
    scenarios: ScenarioSet
    costs: CostTable
    params: PhysicalParams
    partition: dict[int, tuple[Link, ...]]
    managers: tuple[int, ...]
    history_len: int = 2
    slots_per_episode: int = 8
    discount: float = 0.95
    seed: int = 0
    reference_cost: float | None = None

    def __post_init__(self):
        if not self.managers:
            raise ValueError("need at least one manager")
        if any(m not in self.partition for m in self.managers):
            raise ValueError("managers must be partition agents")
        claimed: list[Link] = []
        for links in self.partition.values():
            claimed.extend(links)
        if len(claimed) != len(set(claimed)):
            raise ValueError("partition link subsets must be disjoint")
        routed = _routed_links(self.topo, self.requests)
        if set(claimed) != routed:
            raise ValueError("partition must cover exactly the routed links")
        if self.history_len < 1 or self.slots_per_episode < 1:
            raise ValueError("history length and slots per episode must be positive")


def _routed_links(topo: NetworkTopology, requests) -> set[Link]:
    routes = route_all(topo, requests)
    return {link for route in routes.values() for link in route.links}


def optimal_reference(config: EnvConfig) -> float:
    """Expected total of the exact two-stage solver, used to normalize rewards."""
    if config.reference_cost is not None:
        return config.reference_cost
    report = solve_sip(config.topo, config.requests, config.scenarios,
                       config.costs, config.params)
    return report.expected_total


class AllocationEnv:
    """Joint-step environment over one provisioning instance."""

    def __init__(self, config: EnvConfig):
        self.config = config
        self.agents = tuple(sorted(config.partition))
        self.managers = tuple(sorted(config.managers))
        self.pad = max(len(links) for links in config.partition.values())
        self.history_len = config.history_len
        self.reference_cost = optimal_reference(config)
        if self.reference_cost <= 0:
            raise ValueError("reference cost must be positive")

        routes = route_all(config.topo, config.requests)
        profile = build_demand_profile(routes, config.scenarios, config.params)
        self.links = profile.links
        index = {link: i for i, link in enumerate(self.links)}
        n = len(self.links)
        levels = config.scenarios.levels
        self._tri_demand = {
            k: np.array([profile.triples[k].get(l, 0) for l in self.links], dtype=float)
            for k in levels}
        self._km_demand = {
            k: np.array([profile.km[k].get(l, 0) for l in self.links], dtype=float)
            for k in levels}
        top = levels[-1]
        self.w_max_tri = np.minimum(self._tri_demand[top],
                                    config.topo.qkd_capacity // 3)
        self.w_max_km = np.minimum(self._km_demand[top], config.topo.km_capacity)
        self._cap_tri = float(config.topo.qkd_capacity // 3)
        self._cap_km = float(config.topo.km_capacity)

        unit = [link_unit_costs(config.topo.length(l), config.costs, config.params)
                for l in self.links]
        self._res_tri_cost = np.array([u.reserved_triple for u in unit])
        self._res_km_cost = np.array([u.reserved_km for u in unit])
        self._od_tri_cost = np.array([u.on_demand_triple for u in unit])
        self._od_km_cost = np.array([u.on_demand_km for u in unit])

        # Per agent: global link indices of its (padded) slots; -1 pads.
        self._slots: dict[int, np.ndarray] = {}
        for agent in self.agents:
            ids = [index[l] for l in config.partition[agent]]
            ids += [-1] * (self.pad - len(ids))
            self._slots[agent] = np.array(ids)

        self._rng = np.random.default_rng(config.seed)
        self.last_trace: list[tuple[int, int, float, float]] = []
        self.reset()

    # --- observation layout -------------------------------------------------
    @property
    def reservation_block_len(self) -> int:
        return 2 * self.history_len * self.pad

    @property
    def observation_dim(self) -> int:
        return 2 * self.reservation_block_len

    @property
    def action_dim(self) -> int:
        return 2 * self.pad

    def _observe(self, agent: int) -> np.ndarray:
        return np.concatenate([self._hist_res[agent].ravel(),
                               self._hist_short[agent].ravel()])

    # --- lifecycle -----------------------------------------------------------
    def reset(self, seed: int | None = None) -> dict[int, np.ndarray]:
        if seed is not None:
            self._rng = np.random.default_rng(seed)
        self._hist_res = {a: np.zeros((self.history_len, self.pad, 2))
                          for a in self.agents}
        self._hist_short = {a: np.zeros((self.history_len, self.pad, 2))
                            for a in self.agents}
        self.slot = 0
        self.last_trace = []
        return {a: self._observe(a) for a in self.agents}

    def decode_action(self, agent: int, action: np.ndarray
                      ) -> tuple[np.ndarray, np.ndarray]:
        """Map [-1, 1] pairs to integer (KM, triple) reservations per slot."""
        action = np.clip(np.asarray(action, dtype=float), -1.0, 1.0)
        if action.shape != (self.action_dim,):
            raise ValueError(f"action shape {action.shape} != ({self.action_dim},)")
        slots = self._slots[agent]
        w_km = np.where(slots >= 0, self.w_max_km[slots], 0.0)
        w_tri = np.where(slots >= 0, self.w_max_tri[slots], 0.0)
        km = np.floor((action[0::2] + 1.0) / 2.0 * w_km + 0.5)
        tri = np.floor((action[1::2] + 1.0) / 2.0 * w_tri + 0.5)
        return km, tri

    def actions_for(self, reservations: dict[Link, tuple[int, int]]
                    ) -> dict[int, np.ndarray]:
        """Inverse of decode: actions that reserve exactly (KM, triples) per link."""
        out = {}
        for agent in self.agents:
            action = -np.ones(self.action_dim)
            for i, link in enumerate(self.config.partition[agent]):
                km, tri = reservations.get(link, (0, 0))
                gi = self._slots[agent][i]
                if self.w_max_km[gi] > 0:
                    action[2 * i] = 2.0 * km / self.w_max_km[gi] - 1.0
                if self.w_max_tri[gi] > 0:
                    action[2 * i + 1] = 2.0 * tri / self.w_max_tri[gi] - 1.0
            out[agent] = action
        return out

    def step(self, actions: dict[int, np.ndarray]
             ) -> tuple[dict[int, np.ndarray], dict[int, float], bool, dict]:
        if self.slot >= self.config.slots_per_episode:
            raise RuntimeError("episode finished; call reset()")
        n = len(self.links)
        res_km = np.zeros(n)
        res_tri = np.zeros(n)
        decoded: dict[int, tuple[np.ndarray, np.ndarray]] = {}
        for agent in self.agents:
            km, tri = self.decode_action(agent, actions[agent])
            decoded[agent] = (km, tri)
            slots = self._slots[agent]
            valid = slots >= 0
            res_km[slots[valid]] = km[valid]
            res_tri[slots[valid]] = tri[valid]

        level = sample_scenario(self.config.scenarios, self._rng)
        need_km = self._km_demand[level]
        need_tri = self._tri_demand[level]
        # On-demand recourse covers shortfall up to capacity; beyond that the
        # purchase is clamped and the realized cost reflects what fit.
        total_km = np.minimum(np.maximum(res_km, need_km), self._cap_km)
        total_tri = np.minimum(np.maximum(res_tri, need_tri), self._cap_tri)
        short_km = total_km - res_km
        short_tri = total_tri - res_tri
        capacity_violation = bool(np.any(total_km < need_km)
                                  or np.any(total_tri < need_tri))
        cost = float(res_km @ self._res_km_cost + res_tri @ self._res_tri_cost
                     + short_km @ self._od_km_cost + short_tri @ self._od_tri_cost)
        reward = self.reference_cost / max(cost, self.reference_cost)

        for agent in self.agents:
            km, tri = decoded[agent]
            slots = self._slots[agent]
            valid = slots >= 0
            norm_km = np.where(self.w_max_km[slots] > 0,
                               self.w_max_km[slots], 1.0)
            norm_tri = np.where(self.w_max_tri[slots] > 0,
                                self.w_max_tri[slots], 1.0)
            res_entry = np.zeros((self.pad, 2))
            short_entry = np.zeros((self.pad, 2))
            res_entry[valid, 0] = (km / norm_km)[valid]
            res_entry[valid, 1] = (tri / norm_tri)[valid]
            short_entry[valid, 0] = (short_km[slots] / norm_km)[valid]
            short_entry[valid, 1] = (short_tri[slots] / norm_tri)[valid]
            self._hist_res[agent] = np.concatenate(
                [self._hist_res[agent][1:], res_entry[None]], axis=0)
            self._hist_short[agent] = np.concatenate(
                [self._hist_short[agent][1:], short_entry[None]], axis=0)

        self.slot += 1
        done = self.slot >= self.config.slots_per_episode
        rewards = {a: (reward if a in self.managers else 0.0) for a in self.agents}
        self.last_trace.append((self.slot - 1, level, cost, reward))
        obs = {a: self._observe(a) for a in self.agents}
        info = {"scenario": level, "cost": cost,
                "capacity_violation": capacity_violation}
        return obs, rewards, done, info

    def write_trace(self, path, manager: int | None = None) -> None:
        manager = manager if manager is not None else self.managers[0]
        rows = ["slot,scenario,cost,reward"]
        rows += [f"{slot},{level},{cost:.10g},{reward:.10g}"
                 for slot, level, cost, reward in self.last_trace]
        with open(path, "w") as handle:
            handle.write("\n".join(rows) + "\n")


def even_partition(topo: NetworkTopology, requests, num_agents: int
                   ) -> dict[int, tuple[Link, ...]]:
    """Split the routed links into contiguous, near-equal sorted chunks."""
    links = sorted(_routed_links(topo, requests))
    if num_agents < 1 or num_agents > len(links):
        raise ValueError("agent count must be between 1 and the link count")
    chunks: dict[int, tuple[Link, ...]] = {}
    base, extra = divmod(len(links), num_agents)
    start = 0
    for agent in range(num_agents):
        size = base + (1 if agent < extra else 0)
        chunks[agent] = tuple(links[start:start + size])
        start += size
    return chunks


def load_env_layout(path, topo: NetworkTopology) -> tuple[dict[int, tuple[Link, ...]],
                                                          tuple[int, ...], dict]:
    """Parse an agent-layout file mirroring the EnvConfig fields.

    Lines: ``agent <id> manager|controller``, ``assign <id> <a> <b>``, plus
    optional scalar overrides ``history_len``, ``slots_per_episode``,
    ``discount``, ``seed``.
    """
    roles: dict[int, str] = {}
    partition: dict[int, list[Link]] = {}
    extras: dict[str, float] = {}
    for line_no, tokens in read_tokens(path):
        kind = tokens[0]
        if kind == "agent":
            if len(tokens) != 3 or tokens[2] not in ("manager", "controller"):
                raise ParseError(str(path), line_no, "expected: agent <id> manager|controller")
            agent = parse_number(tokens[1], str(path), line_no, int)
            roles[agent] = tokens[2]
            partition.setdefault(agent, [])
        elif kind == "assign":
            if len(tokens) != 4:
                raise ParseError(str(path), line_no, "expected: assign <id> <a> <b>")
            agent = parse_number(tokens[1], str(path), line_no, int)
            link = canonical_link(tokens[2], tokens[3])
            if link not in topo.lengths:
                raise ParseError(str(path), line_no, f"unknown link {tokens[2]}-{tokens[3]}")
            partition.setdefault(agent, []).append(link)
        elif kind in ("history_len", "slots_per_episode", "seed"):
            extras[kind] = parse_number(tokens[1], str(path), line_no, int)
        elif kind == "discount":
            extras[kind] = parse_number(tokens[1], str(path), line_no, float)
        else:
            raise ParseError(str(path), line_no, f"unknown directive {kind!r}")
    managers = tuple(sorted(a for a, role in roles.items() if role == "manager"))
    return ({a: tuple(links) for a, links in partition.items()}, managers, extras)
