import math

import pytest

from qkdprov.costs import (CostTable, PhysicalParams, PlanError,
                           ProvisioningPlan, concurrent_links,
                           link_unit_costs, link_unit_counts, load_cost_table,
                           plan_cost, request_components)
from qkdprov.demand import ScenarioSet, build_scenarios
from qkdprov.topology import load_topology, shortest_path

from conftest import assert_close

SINGLE_LINK = "node a\nnode b\nlink a b 160"


@pytest.fixture
def single_link():
    return load_topology(SINGLE_LINK)


def test_concurrent_links_examples(params):
    assert concurrent_links(0, params) == 0
    assert concurrent_links(params.key_rate_capacity, params) == 1
    fast = PhysicalParams(segment_length_km=160, kl_scale=320)  # capacity 2/s
    assert concurrent_links(5, fast) == 3


def test_derived_physical_quantities():
    p = PhysicalParams(segment_length_km=160)
    assert p.qt_qr_distance_km == 80
    assert p.key_rate_capacity == 1.0
    with pytest.raises(ValueError):
        PhysicalParams(segment_length_km=0)


def test_request_components_two_segment_link(params):
    topo = load_topology("node a\nnode b\nlink a b 320")
    route = shortest_path(topo, "a", "b")
    got = request_components(topo, route, 2, params)
    assert (got.qt, got.qr, got.lkm, got.si, got.muxdemux) == (8, 4, 3, 1, 3)
    assert got.channel_km == 2240


def test_request_components_idle_request_keeps_channel(single_link, params):
    route = shortest_path(single_link, "a", "b")
    got = request_components(single_link, route, 0, params)
    assert got.qt == got.qr == 0
    assert got.channel_km == 160


def test_request_components_additive_in_circuits(single_link, params):
    route = shortest_path(single_link, "a", "b")
    one = request_components(single_link, route, 1, params)
    two = request_components(single_link, route, 2, params)
    three = request_components(single_link, route, 3, params)
    assert three.qt == one.qt + two.qt
    assert three.qr == one.qr + two.qr
    # Channel splits into a per-circuit triple term plus a fixed data term.
    length = route.length_km
    assert three.channel_km == 3 * 3 * length + length
    assert three.channel_km - length == (one.channel_km - length) + (two.channel_km - length)


def test_link_unit_counts_by_segment_count(params):
    one_seg = link_unit_counts(160, params)
    assert (one_seg.triple_qt, one_seg.triple_qr) == (2, 1)
    assert (one_seg.km_lkm, one_seg.km_si, one_seg.km_md) == (2, 0, 1)
    two_seg = link_unit_counts(320, params)
    assert (two_seg.triple_qt, two_seg.triple_qr) == (4, 2)
    assert (two_seg.km_lkm, two_seg.km_si, two_seg.km_md) == (3, 1, 3)
    assert link_unit_counts(1, params) == one_seg


def test_reserved_plan_cost_hand_computed(single_link, params, costs):
    plan = ProvisioningPlan(reserved_km={("a", "b"): 1},
                            reserved_qkd={("a", "b"): 3},
                            on_demand_km={}, on_demand_qkd={})
    first, second, expected = plan_cost(plan, single_link, costs, params)
    assert first == 2 * 1500 + 2250 + 2 * 1200 + 0 * 150 + 300 + 160 * 4 * 1
    assert first == 8590
    assert second == {}
    assert expected == first


def test_on_demand_plan_cost_hand_computed(single_link, params, costs):
    scen = ScenarioSet(levels=(0,), probabilities=(1.0,), mean_rate=0)
    plan = ProvisioningPlan(reserved_km={}, reserved_qkd={},
                            on_demand_km={0: {("a", "b"): 1}},
                            on_demand_qkd={0: {("a", "b"): 3}})
    first, second, expected = plan_cost(plan, single_link, costs, params, scen)
    assert first == 0
    assert second[0] == 2 * 6000 + 9000 + 2 * 3000 + 0 * 500 + 900 + 160 * 4 * 4
    assert second[0] == 30460
    assert expected == 30460


def test_empty_plan_costs_nothing(single_link, params, costs):
    first, second, expected = plan_cost(ProvisioningPlan.empty(), single_link, costs, params)
    assert (first, second, expected) == (0.0, {}, 0.0)


def test_plan_cost_linear_in_quantities(single_link, params, costs):
    def cost(scale):
        plan = ProvisioningPlan(reserved_km={("a", "b"): scale},
                                reserved_qkd={("a", "b"): 3 * scale},
                                on_demand_km={}, on_demand_qkd={})
        return plan_cost(plan, single_link, costs, params)[0]

    base = cost(1)
    for scale in (2, 3, 7):
        assert_close(cost(scale), scale * base)


def test_plan_invariants_enforced(single_link, params, costs):
    ragged = ProvisioningPlan(reserved_km={}, reserved_qkd={("a", "b"): 4},
                              on_demand_km={}, on_demand_qkd={})
    with pytest.raises(PlanError, match="triple"):
        plan_cost(ragged, single_link, costs, params)
    over = ProvisioningPlan(reserved_km={("a", "b"): 99},
                            reserved_qkd={}, on_demand_km={0: {("a", "b"): 2}},
                            on_demand_qkd={0: {}})
    with pytest.raises(PlanError, match="capacity"):
        plan_cost(over, single_link, costs, params,
                  ScenarioSet(levels=(0,), probabilities=(1.0,), mean_rate=0))


def test_expected_total_weights_recourse_by_probability(single_link, params, costs):
    scen = build_scenarios(2, mean=1)
    plan = ProvisioningPlan(reserved_km={}, reserved_qkd={},
                            on_demand_km={0: {}, 1: {("a", "b"): 1}},
                            on_demand_qkd={0: {}, 1: {("a", "b"): 3}})
    first, second, expected = plan_cost(plan, single_link, costs, params, scen)
    assert_close(expected, scen.probabilities[1] * second[1])


def test_unit_prices_on_demand_dominate_reserved(params):
    for length in (1, 80, 160, 320, 999, 2800):
        unit = link_unit_costs(length, CostTable(), params)
        assert unit.on_demand_triple >= unit.reserved_triple
        assert unit.on_demand_km >= unit.reserved_km


def test_cost_table_warns_when_on_demand_cheaper():
    with pytest.warns(UserWarning, match="on-demand price below reserved"):
        CostTable(on_demand={**{c: 0.0 for c in ("tx", "rx", "km", "si", "md", "ch")}})


def test_cost_table_multiplier_scales_on_demand_only(params):
    base = link_unit_costs(160, CostTable(), params)
    doubled = link_unit_costs(160, CostTable(on_demand_multiplier=2.0), params)
    assert doubled.reserved_triple == base.reserved_triple
    assert_close(doubled.on_demand_triple, 2 * base.on_demand_triple)


def test_load_cost_table_roundtrip(tmp_path):
    path = tmp_path / "costs.txt"
    path.write_text("""
        cost tx 1500 6000
        cost rx 2250 9000
        cost km 1200 3000
        cost si 150 500
        cost md 300 900
        cost ch 1 4
    """)
    table = load_cost_table(path)
    assert table.reserved == CostTable().reserved
    assert table.on_demand == CostTable().on_demand
