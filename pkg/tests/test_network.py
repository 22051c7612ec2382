import dataclasses
import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from marl_tsc.network import (InvalidReference, LaneKind, LaneSpec, TrafficNetwork,
                              build_single_junction, build_three_junction_example,
                              dumps_network, loads_network, network_from_dict, network_to_dict,
                              upstream_set, validate_network)


@pytest.fixture(scope="module")
def net():
    return build_three_junction_example()


def _replace_lane(net, lane_id, **changes):
    lanes = list(net.lanes)
    lanes[lane_id] = dataclasses.replace(lanes[lane_id], **changes)
    return TrafficNetwork(net.junctions, tuple(lanes), net.neighborhoods)


def test_three_junction_shape(net):
    assert net.n_junctions == 3
    assert [jn.n_lanes for jn in net.junctions] == [3, 3, 3]
    assert [jn.n_phases for jn in net.junctions] == [3, 3, 3]
    # lane 0 of every junction faces outside
    for jn in net.junctions:
        assert net.lane(jn.incoming_lanes[0]).kind is LaneKind.EXTERNAL


def test_three_junction_validates(net):
    rep = validate_network(net)
    assert rep.ok, list(rep)
    assert len(rep) == 0


def test_internal_lanes_have_two_feeders_from_the_opposite_junction(net):
    for ln in net.lanes:
        if ln.kind is LaneKind.INTERNAL:
            assert len(ln.feeders) == 2
            src = {net.lane(up).junction for up, _ in ln.feeders}
            assert len(src) == 1 and ln.junction not in src


def test_deterministic_construction():
    assert build_three_junction_example() == build_three_junction_example()


def test_turning_row_off_by_point_one(net):
    # drop one of lane 0's two shares from 0.5 to 0.4 -> its row sums to 0.9
    lane = next(ln for ln in net.lanes if ln.kind is LaneKind.INTERNAL
                and (0, 0.5) in ln.feeders)
    feeders = tuple((up, 0.4 if up == 0 else a) for up, a in lane.feeders)
    bad = _replace_lane(net, lane.id, feeders=feeders)
    rep = validate_network(bad)
    assert rep.kinds() == ["turning_probability"]
    assert len(rep) == 1


def test_missing_self_in_neighborhood(net):
    nbs = dict(net.neighborhoods)
    nbs[1] = frozenset({0, 2})
    rep = validate_network(TrafficNetwork(net.junctions, net.lanes, nbs))
    assert rep.kinds() == ["neighborhood"]
    assert len(rep) == 1


def test_asymmetric_neighborhood_reported(net):
    nbs = dict(net.neighborhoods)
    nbs[0] = frozenset({0, 1})
    rep = validate_network(TrafficNetwork(net.junctions, net.lanes, nbs))
    assert "neighborhood" in rep.kinds()


def test_structural_breaches_reported_not_raised(net):
    bad = _replace_lane(net, 0, feeders=((1, 0.5),))       # external lane with a feeder
    bad = _replace_lane(bad, 4, capacity=0)
    kinds = validate_network(bad).kinds()
    assert "structure" in kinds and "range" in kinds


def test_upstream_set(net):
    assert upstream_set(net, 0) == frozenset()
    # lane 1 of junction 0 is fed by junction 1: its external lane and its lane from junction 2
    got = upstream_set(net, 1)
    assert {net.lane(up).junction for up, _ in got} == {1}
    assert got == frozenset({(3, 0.5), (4, 0.25)})     # lane 4: junction 1, fed from junction 2


def test_upstream_set_unknown_lane(net):
    with pytest.raises(InvalidReference):
        upstream_set(net, 999)


def test_adjacency_and_default_neighborhoods(net):
    for j in range(3):
        assert net.adjacent(j) == frozenset({0, 1, 2}) - {j}
        assert net.neighborhoods[j] == frozenset({0, 1, 2})
    single = build_single_junction()
    assert single.neighborhoods == {0: frozenset({0})}


def test_routing_rows_include_exit_share(net):
    for lane_id, (dests, probs) in net.routing.items():
        assert len(probs) == len(dests) + 1
        assert sum(probs) == pytest.approx(1.0, abs=1e-12)


def test_round_trip_is_bit_exact(net):
    text = dumps_network(net)
    back = loads_network(text)
    assert back == net
    assert dumps_network(back) == text
    assert validate_network(back).kinds() == validate_network(net).kinds()
    for ln in net.lanes:
        assert upstream_set(back, ln.id) == upstream_set(net, ln.id)


def test_serialized_sections(net):
    data = json.loads(dumps_network(net))
    assert set(data) == {"junctions", "lanes", "neighborhoods"}
    assert set(data["lanes"][1]) >= {"id", "junction", "kind", "capacity", "arrival_rate",
                                      "service_rate", "feeders"}


@st.composite
def random_networks(draw):
    """Ring of junctions; each junction has one external lane plus one lane per upstream ring
    neighbour. Turning shares are random but each row sums to one."""
    J = draw(st.integers(2, 5))
    rng = np.random.default_rng(draw(st.integers(0, 2 ** 32 - 1)))
    return _ring(J, rng)


def _ring(J, rng):
    from marl_tsc.network import JunctionSpec, PhaseSpec, _default_neighborhoods
    lanes = []
    ext = [2 * j for j in range(J)]
    internal = [2 * j + 1 for j in range(J)]       # lane at j fed from j-1
    # external lane at j-1 sends share s to j, internal lane at j-1 sends share u to j
    share_ext = rng.uniform(0, 1, J)
    share_int = rng.uniform(0, 1, J)
    for j in range(J):
        k = (j - 1) % J
        lanes.append(LaneSpec(ext[j], j, LaneKind.EXTERNAL, 20, 0.5, arrival_rate=0.1,
                              exit_probability=1 - share_ext[j]))
        lanes.append(LaneSpec(internal[j], j, LaneKind.INTERNAL, 20, 0.5,
                              feeders=((ext[k], float(share_ext[k])),
                                       (internal[k], float(share_int[k]))),
                              exit_probability=1 - share_int[j]))
    junctions = tuple(JunctionSpec(j, (ext[j], internal[j]),
                                   (PhaseSpec(0, frozenset({ext[j]})),
                                    PhaseSpec(1, frozenset({internal[j]}))))
                      for j in range(J))
    return TrafficNetwork(junctions, tuple(lanes), _default_neighborhoods(junctions, lanes))


@settings(max_examples=50, deadline=None)
@given(random_networks())
def test_random_networks_are_valid_and_rows_sum_to_one(net):
    assert validate_network(net).ok
    for lane_id, down in net.downstream.items():
        if down:
            total = sum(a for _, a in down) + net.lane(lane_id).exit_probability
            assert abs(total - 1) < 1e-9


@settings(max_examples=50, deadline=None)
@given(random_networks())
def test_random_networks_round_trip(net):
    back = network_from_dict(json.loads(json.dumps(network_to_dict(net))))
    assert back == net
    for ln in net.lanes:
        assert upstream_set(back, ln.id) == upstream_set(net, ln.id)
