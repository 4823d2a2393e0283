import logging
import math

import numpy as np
import pytest

from dgrbench.config import CorrelationPolicy, ReweightPolicy
from dgrbench.dem import BOUNDARY, build_decoding_graph, parse_dem
from dgrbench.errors import ConfigError, InsufficientDataError
from dgrbench.matcher import Matching, decode, exact_oracle_decode, predict_observables
from dgrbench.reweight import (
    CorrelationTable,
    Reweighter,
    alignment_reweight,
    calibrate_trigger,
    difficulty_trigger,
    heuristic_corr_reweight,
    syndrome_weight_tail,
    two_pass_decode,
)
from dgrbench.surfgen import SurfaceCodeSpec, generate_surface_pheno

SCENARIO_DEM = "error(0.05) D0\nerror(0.2) D0 D3\nerror(0.2) D3\nerror(0.04) D1 D2"


def heuristic_policy(trigger):
    return ReweightPolicy(correlation=CorrelationPolicy(mode="heuristic", trigger=trigger))


@pytest.fixture
def scenario(make_graph):
    # D0 reaches the boundary directly (3.0) or through D3 (2.8); D1-D2 is
    # correlated with the direct boundary edge of D0
    graph = make_graph(SCENARIO_DEM, weights=[3.0, 1.4, 1.4, 2.0])
    pair_probs = {(0, 3): 0.02}
    edge_probs = np.array([0.05, 0.2, 0.2, 0.04])
    return graph, pair_probs, edge_probs


def test_alignment_uses_traced_probabilities(make_graph, simple_dem):
    graph = make_graph(simple_dem)
    aligned = alignment_reweight(graph, [0.2, 0.01, 0.7])
    np.testing.assert_allclose(aligned.weights, [math.log(4.0), math.log(99.0), 0.0])
    assert aligned.topology is graph.topology


def test_alignment_rejects_bad_estimates(make_graph, simple_dem):
    graph = make_graph(simple_dem)
    with pytest.raises(InsufficientDataError):
        alignment_reweight(graph, [0.1, 0.1])
    with pytest.raises(InsufficientDataError):
        alignment_reweight(graph, [0.1, 0.0, 0.1])
    with pytest.raises(InsufficientDataError):
        alignment_reweight(graph, [0.1, np.nan, 0.1])


def test_correlation_update_matches_ratio_rule(make_graph):
    graph = make_graph("error(0.01) D0 D1\nerror(0.01) D2 D3\nerror(0.01) D4 D5", weights=[4.0, 4.0, 5.0])
    pair_probs = {(0, 2): 0.002, (1, 2): 0.001}
    edge_probs = np.full(3, 0.01)
    updated = heuristic_corr_reweight(graph, Matching(frozenset({0}), 4.0), pair_probs, edge_probs)
    # edge 2 drops by 0.2 for matched edge 0 and rises by 0.1 for unmatched edge 1
    assert updated.weights[2] == pytest.approx(4.9)
    assert updated.weights[0] == pytest.approx(4.2)
    assert updated.weights[1] == pytest.approx(4.1)


def test_correlation_update_floors_at_zero(make_graph):
    graph = make_graph("error(0.01) D0 D1\nerror(0.01) D2 D3", weights=[1.0, 0.1])
    updated = heuristic_corr_reweight(graph, Matching(frozenset({0}), 1.0), {(0, 1): 0.01}, np.array([0.01, 0.5]))
    assert updated.weights[1] == 0.0


def test_table_respects_edge_floor():
    table = CorrelationTable.build({(0, 1): 0.001}, np.array([0.001, 0.1]), min_edge_prob=0.01)
    assert len(table) == 1
    assert (int(table.source[0]), int(table.target[0])) == (1, 0)
    assert table.ratio[0] == pytest.approx(0.01)


def test_empty_table_changes_nothing(scenario):
    graph, _, edge_probs = scenario
    updated = heuristic_corr_reweight(graph, Matching.empty(), {}, edge_probs)
    np.testing.assert_array_equal(updated.weights, graph.weights)


def test_difficulty_trigger():
    assert difficulty_trigger([1, 1, 2], 2)
    assert not difficulty_trigger([1, 1, 2], 3)
    assert difficulty_trigger([], 0)


def test_two_pass_moves_boundary_path(scenario):
    graph, pair_probs, edge_probs = scenario
    first = decode(graph, [0, 1, 2])
    assert first.edges == frozenset({1, 2, 3})
    second = two_pass_decode(graph, [0, 1, 2], heuristic_policy(3), pair_probs, edge_probs)
    assert second.edges == frozenset({0, 3})


def test_below_trigger_keeps_first_pass(scenario):
    graph, pair_probs, edge_probs = scenario
    result = two_pass_decode(graph, [0, 1, 2], heuristic_policy(4), pair_probs, edge_probs)
    assert result.edges == frozenset({1, 2, 3})


def test_mode_off_is_single_pass(scenario):
    graph, pair_probs, edge_probs = scenario
    result = two_pass_decode(graph, [0, 1, 2], ReweightPolicy(), pair_probs, edge_probs)
    assert result == decode(graph, [0, 1, 2])


def test_reweighter_counts_triggers(scenario):
    graph, pair_probs, edge_probs = scenario
    rw = Reweighter(graph, heuristic_policy(3), edge_probs, pair_probs)
    _, fired = rw.decode([0, 1, 2])
    assert fired
    _, fired = rw.decode([1, 2])
    assert not fired
    _, fired = rw.decode([])
    assert not fired
    assert (rw.triggered, rw.decoded) == (1, 3)
    assert rw.trigger_rate == pytest.approx(1 / 3)


def test_missing_trigger_means_always(scenario):
    graph, pair_probs, edge_probs = scenario
    rw = Reweighter(graph, heuristic_policy(None), edge_probs, pair_probs)
    assert rw.threshold == 0
    assert rw.decode([1, 2])[1]


def test_pair_floor_filters_ratios(scenario):
    graph, pair_probs, edge_probs = scenario
    policy = ReweightPolicy(correlation=CorrelationPolicy(mode="heuristic", trigger=3, pair_floor=0.1))
    # both endpoints of the only pair sit below the floor
    matching, fired = Reweighter(graph, policy, edge_probs, pair_probs).decode([0, 1, 2])
    assert fired
    assert matching.edges == frozenset({1, 2, 3})


def test_nn_mode_needs_params(scenario):
    graph, pair_probs, edge_probs = scenario
    policy = ReweightPolicy(correlation=CorrelationPolicy(mode="nn"))
    with pytest.raises(ConfigError):
        Reweighter(graph, policy, edge_probs, pair_probs)


def test_syndrome_weight_tail():
    model = parse_dem("error(0.999999) D0\nerror(0.999999) D1")
    tail = syndrome_weight_tail(model, 100, seed=1)
    assert tail[0] == 1.0
    assert tail[2] >= 0.99


def test_calibrate_trigger_lands_in_band():
    model = parse_dem("\n".join(f"error(0.075) D{i}" for i in range(10)))
    tau, rate = calibrate_trigger(model, 20_000, seed=5)
    # P(at least 2 of 10 at 7.5%) is about 0.17
    assert tau == 2
    assert 0.15 < rate < 0.19


def test_calibrate_trigger_out_of_band(caplog):
    model = parse_dem("error(0.999999) D0")
    with caplog.at_level(logging.WARNING):
        tau, rate = calibrate_trigger(model, 200, seed=2)
    assert tau == 1
    assert rate == 1.0
    assert "no threshold" in caplog.text


def test_calibrate_trigger_without_flips(caplog):
    model = parse_dem("error(0.000000000001) D0")
    with caplog.at_level(logging.WARNING):
        _, rate = calibrate_trigger(model, 200, seed=2)
    assert rate == 0.0
    assert "trigger disabled" in caplog.text


def arm_gid(model, channel, arm):
    return sum(len(ch.mechanisms) for ch in model.channels[:channel]) + arm


@pytest.fixture(scope="module")
def ybias_d3():
    """Y on data qubit (0, 2) plus X on (1, 1), single round, with hand-set weights.

    Z-check graph: the Y leaves D on the top boundary (L0), the X flips A and B.
    Pass one prefers the three cheap edges A-B, B-D, B-bottom (no L0); the
    correlated Z-match of the Y lowers D-top enough to pick A-B, D-top.
    """
    d = 3
    model = generate_surface_pheno(SurfaceCodeSpec(distance=d, p=0.01, rounds=1, y_bias=10.0))
    graph = build_decoding_graph(model)
    edges = graph.topology.mechanism_edges

    def x_edge(i, j):
        (eid,) = edges[arm_gid(model, i * d + j, 0)]
        return eid

    y_gid = arm_gid(model, 0 * d + 2, 1)
    x_gid = arm_gid(model, 1 * d + 1, 0)
    d_top, e_bnd = sorted(edges[y_gid], key=lambda e: -graph.topology.observables[e])
    weights = np.full(graph.num_edges, 10.0)
    for eid, w in {
        x_edge(1, 1): 1.0,  # A-B
        x_edge(1, 2): 1.0,  # B-D
        x_edge(2, 1): 1.0,  # B-bottom
        x_edge(0, 0): 2.5,  # A-top
        x_edge(1, 0): 5.0,  # A-C
        x_edge(2, 0): 5.0,  # C-bottom
        d_top: 2.3,
        e_bnd: 1.0,
    }.items():
        weights[eid] = w
    graph = graph.with_weights(weights)
    shot = sample_like(model, graph, [y_gid, x_gid])
    pair_probs = {tuple(sorted((d_top, e_bnd))): 0.009}
    edge_probs = np.full(graph.num_edges, 0.01)
    return graph, shot, pair_probs, edge_probs, (d_top, e_bnd, x_edge(1, 1), x_edge(1, 2), x_edge(2, 1))


def sample_like(model, graph, fired):
    detectors = set()
    observables = 0
    for gid in fired:
        for eid in graph.topology.mechanism_edges[gid]:
            a, b = graph.topology.keys[eid]
            detectors ^= {a} if b == BOUNDARY else {a, b}
            observables ^= graph.topology.observables[eid]
    return sorted(detectors), observables, graph.truth_edges(fired)


def test_surface_second_pass_recovers_y_correlation(ybias_d3):
    graph, (detectors, observables, truth), pair_probs, edge_probs, named = ybias_d3
    d_top, e_bnd, a_b, b_d, b_bottom = named
    assert len(detectors) == 4
    assert observables == 1

    first = decode(graph, detectors)
    assert first.edges == frozenset({a_b, b_d, b_bottom, e_bnd})
    assert first.weight == pytest.approx(exact_oracle_decode(graph, detectors).weight)
    assert predict_observables(graph, first) != observables

    second_graph = heuristic_corr_reweight(graph, first, pair_probs, edge_probs)
    assert second_graph.weights[d_top] == pytest.approx(2.3 - 0.9)
    assert second_graph.weights[e_bnd] == pytest.approx(1.0 + 0.9)
    second = two_pass_decode(graph, detectors, heuristic_policy(3), pair_probs, edge_probs)
    assert second.edges == truth == frozenset({a_b, d_top, e_bnd})
    assert second.weight == pytest.approx(exact_oracle_decode(second_graph, detectors).weight)
    assert predict_observables(graph, second) == observables
