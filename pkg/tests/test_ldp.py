import csv
import itertools

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import line_network
from lifenet.ldp import (
    ControllerConfig, VirtualQueueBank, compute_weights, controller_step, delayed_arrival_total,
    max_weight_allocate, snapshot_rows, update_virtual_queues, write_snapshots_csv,
)
from lifenet.model import (
    Client, CloudScenario, CommoditySpec, NetworkGraph, build_layered_graph, routing_network,
    shared_capacity_groups,
)
from lifenet.queueing import ArrivalSample, FlowDecision


def three_line(L=3, cost=1.0):
    # i=0 -> j=1 -> d=2
    return line_network(3, capacity=10, cost=cost, rate=1.0, L=L)


def test_weight_relay_branch():
    lg = three_line()
    U = VirtualQueueBank.zeros(lg)
    U.U[0, 0, 1], U.U[0, 0, 2] = 1, 3  # U_i^(<=2) = 4
    U.U[0, 1, 1] = 20  # U_j^(<=1) = 20
    W = compute_weights(U, lg, ControllerConfig(V=10))
    assert W[0, 0, 2] == 6


def test_weight_destination_branch():
    lg = three_line(cost=0.0)
    U = VirtualQueueBank.zeros(lg)
    U.U[0, 1, 1], U.U[0, 1, 2] = 1, 2
    U.Ud[0] = 8
    W = compute_weights(U, lg, ControllerConfig(V=0))
    assert W[0, 1, 2] == 5
    assert W[0, 1, 3] == 5  # U_j^(3) = 0 so the sum does not change


def test_zero_state_weights_and_forbidden_entries():
    lg = line_network(3, capacity=10, cost=0.0, L=2)
    W = compute_weights(VirtualQueueBank.zeros(lg), lg, ControllerConfig(V=0))
    assert np.all(W[:, :, 1:] == 0)
    assert np.all(np.isneginf(W[:, :, 0]))
    g = NetworkGraph(2, ((0, 1), (1, 0)), np.ones(2), np.ones(2))
    lg2 = routing_network(g, [CommoditySpec(1, 1.0, 2, {(0, 2): 1.0})])
    W2 = compute_weights(VirtualQueueBank.zeros(lg2), lg2, ControllerConfig())
    assert np.all(np.isneginf(W2[0, 1]))  # never send out of the destination


def test_lifetimes_above_commodity_limit_forbidden():
    g = NetworkGraph(2, ((0, 1),), np.ones(1), np.ones(1))
    lg = routing_network(g, [CommoditySpec(1, 1.0, 2, {}), CommoditySpec(1, 1.0, 4, {})])
    W = compute_weights(VirtualQueueBank.zeros(lg), lg, ControllerConfig())
    assert np.all(np.isneginf(W[0, 0, 3:]))
    assert np.all(np.isfinite(W[1, 0, 1:]))


def test_single_edge_argmax():
    lg = line_network(2, capacity=10, L=3)
    W = np.full((1, 1, 4), -np.inf)
    W[0, 0, 1:] = [-2, 6, 3]
    nu = max_weight_allocate(W, lg)
    assert nu.x[0, 0, 2] == 10 and nu.total() == 10


def test_nonpositive_weights_give_nothing():
    lg = line_network(2, capacity=10, L=3)
    W = np.full((1, 1, 4), -np.inf)
    W[0, 0, 1:] = [-2, 0, -1]
    assert max_weight_allocate(W, lg).total() == 0


def test_two_layer_group_single_winner():
    g = NetworkGraph(2, ((0, 1),), np.array([100.0]), np.ones(1))
    sc = CloudScenario(g, np.ones(2), np.ones(2), 1.0, 1, (Client(0, 1, 1.0, 1.0, 6),))
    lg = build_layered_graph(sc)
    link = next(grp for grp in shared_capacity_groups(lg) if grp.resource[0] == "link")
    e0, e1 = link.edges
    W = np.full((1, lg.graph.num_edges, 7), -1.0)
    W[0, e0, 3] = 2
    W[0, e1, 5] = 4
    nu = max_weight_allocate(W, lg)
    assert nu.x[0, e1, 5] == 100
    assert nu.x[0, e0].sum() == 0


def test_tie_break_prefers_small_lifetime_then_commodity_then_edge():
    g = NetworkGraph(2, ((0, 1),), np.array([7.0]), np.ones(1))
    lg = routing_network(g, [CommoditySpec(1, 1.0, 3, {}), CommoditySpec(1, 1.0, 3, {})])
    W = np.full((2, 1, 4), 5.0)
    W[:, :, 0] = -np.inf
    nu = max_weight_allocate(W, lg)
    assert nu.x[0, 0, 1] == 7 and nu.total() == 7
    W[0, 0, 1] = 1
    nu = max_weight_allocate(W, lg)
    assert nu.x[1, 0, 1] == 7


def test_virtual_destination_update():
    lg = line_network(2, capacity=10, L=1, gamma=0.9)
    U = VirtualQueueBank.zeros(lg)
    U.Ud[0] = 5
    a = ArrivalSample.from_entries(lg, {(0, 0, 1): 10})
    nu = FlowDecision.from_entries(lg, {(0, 0, 1): 4})
    update_virtual_queues(U, nu, a, lg)
    assert U.Ud[0] == pytest.approx(10)


def test_virtual_relay_update_floor():
    lg = three_line()
    U = VirtualQueueBank.zeros(lg)
    U.U[0, 1, 2] = 1
    nu = FlowDecision.from_entries(lg, {(0, 0, 3): 7})  # inflow to j at lifetime 3
    update_virtual_queues(U, nu, ArrivalSample.zeros(lg), lg)
    assert U.U[0, 1, 2] == 0


def test_virtual_update_suffix_sums():
    lg = three_line()
    U = VirtualQueueBank.zeros(lg)
    U.U[0, 1, 1] = 2
    nu = FlowDecision.from_entries(lg, {(0, 1, 2): 5, (0, 1, 3): 1, (0, 0, 3): 1})
    update_virtual_queues(U, nu, ArrivalSample.zeros(lg), lg)
    # U_j^(1) + out^(>=1) - in^(>=2) = 2 + 6 - 1
    assert U.U[0, 1, 1] == 7
    # U_j^(2): 0 + 6 - in^(>=3)=1 -> 5 ; U_j^(3): 0 + 1 - 0
    assert U.U[0, 1, 2] == 5 and U.U[0, 1, 3] == 1


def test_zero_state_stays_zero():
    lg = three_line()
    U = VirtualQueueBank.zeros(lg)
    update_virtual_queues(U, FlowDecision.zeros(lg), ArrivalSample.zeros(lg), lg)
    assert U.total() == 0


def test_first_step_sends_nothing():
    lg = line_network(3, capacity=10, cost=1.0, L=3)
    U = VirtualQueueBank.zeros(lg)
    a = ArrivalSample.from_entries(lg, {(0, 0, 3): 4})
    nu, U = controller_step(U, a, lg, ControllerConfig(V=5))
    assert nu.total() == 0
    assert U.Ud[0] == 4


def test_single_edge_hand_simulation():
    lg = line_network(2, capacity=5, cost=1.0, L=1)
    U = VirtualQueueBank.zeros(lg)
    a = ArrivalSample.from_entries(lg, {(0, 0, 1): 4})
    cfg = ControllerConfig(V=0)
    sent, Ud, Us = [], [], []
    for _ in range(4):
        nu, U = controller_step(U, a, lg, cfg)
        sent.append(nu.total())
        Ud.append(U.Ud[0])
        Us.append(U.U[0, 0, 1])
    # slot 3: w = U_d - U_s = 2 - 2 = 0, not positive, so nothing is sent
    assert sent == [0, 5, 5, 0]
    assert Ud == [4, 3, 2, 6]
    assert Us == [0, 1, 2, 0]


def test_controller_replay_is_deterministic():
    lg = line_network(4, capacity=3, cost=0.5, L=4)
    rng = np.random.default_rng(3)
    arrivals = [ArrivalSample.from_entries(lg, {(0, 0, 4): float(rng.poisson(2))}) for _ in range(50)]

    def trace():
        U = VirtualQueueBank.zeros(lg)
        out = []
        for a in arrivals:
            nu, U = controller_step(U, a, lg, ControllerConfig(V=2))
            out.append(nu.x.copy())
        return np.array(out)

    np.testing.assert_array_equal(trace(), trace())


def test_delayed_arrivals():
    lg = line_network(2, L=1)
    U = VirtualQueueBank.zeros(lg)
    seen = [delayed_arrival_total(U, ArrivalSample.from_entries(lg, {(0, 0, 1): v}), 2)[0] for v in (1, 2, 3, 4)]
    assert seen == [0, 0, 1, 2]


def test_config_validation():
    with pytest.raises(ValueError):
        ControllerConfig(V=-1)
    with pytest.raises(ValueError):
        ControllerConfig(tie_break="random")
    with pytest.raises(ValueError):
        ControllerConfig(arrival_delay=-1)


def test_snapshot_csv(tmp_path):
    lg = line_network(2, L=1)
    U = VirtualQueueBank.zeros(lg)
    U.U[0, 0, 1] = 2.5
    U.Ud[0] = 1.0
    rows = snapshot_rows(7, U, lg)
    p = tmp_path / "snap.csv"
    write_snapshots_csv(p, rows)
    got = list(csv.DictReader(p.open()))
    assert {"slot": "7", "commodity": "0", "node": "0", "lifetime": "1", "U": "2.5"} in got
    assert {"slot": "7", "commodity": "0", "node": "1", "lifetime": "0", "U": "1.0"} in got


# ---------------------------------------------------------------- properties


@st.composite
def small_instances(draw):
    n = draw(st.integers(2, 4))
    pairs = [(i, j) for i in range(n) for j in range(n) if i != j]
    edges = draw(st.lists(st.sampled_from(pairs), min_size=1, max_size=4, unique=True))
    m = len(edges)
    K = draw(st.integers(1, 2))
    L = draw(st.integers(1, 3))
    g = NetworkGraph(n, tuple(edges), np.array(draw(st.lists(st.integers(1, 9), min_size=m, max_size=m)), float),
                     np.array(draw(st.lists(st.integers(0, 3), min_size=m, max_size=m)), float))
    specs = [CommoditySpec(draw(st.integers(0, n - 1)), 0.5, L, {}) for _ in range(K)]
    lg = routing_network(g, specs)
    U = VirtualQueueBank.zeros(lg)
    U.U[:] = np.array(draw(st.lists(st.integers(0, 6), min_size=U.U.size, max_size=U.U.size)),
                      float).reshape(U.U.shape)
    U.Ud[:] = draw(st.lists(st.integers(0, 12), min_size=K, max_size=K))
    V = draw(st.sampled_from([0.0, 0.5, 1.0, 3.0]))
    return lg, U, V


def _brute_force_allocation(W, lg):
    nu = np.zeros_like(W)
    K, E, Lp1 = W.shape
    for grp in shared_capacity_groups(lg):
        cands = [(W[k, e, l], l, k, e) for e in grp.edges for k in range(K) for l in range(1, Lp1)]
        best = max(c[0] for c in cands)
        if best > 0:
            _, l, k, e = min((c for c in cands if c[0] == best), key=lambda c: (c[1], c[2], c[3]))
            nu[k, e, l] = grp.capacity
    return nu


def _hand_weights(U, lg, V):
    """Direct transcription of the weight rule, one entry at a time."""
    K = len(lg.commodities)
    E = lg.graph.num_edges
    Lp1 = U.U.shape[2]
    W = np.full((K, E, Lp1), -np.inf)
    for k, c in enumerate(lg.commodities):
        for e, (i, j) in enumerate(lg.graph.edges):
            if i == c.destination:
                continue
            for l in range(1, c.L + 1):
                send = sum(U.U[k, i, m] for m in range(1, l + 1))
                recv = U.Ud[k] if j == c.destination else sum(U.U[k, j, m] for m in range(1, l))
                W[k, e, l] = -V * lg.graph.cost[e] - send + recv
    return W


@given(small_instances())
def test_weights_match_hand_transcription(inst):
    lg, U, V = inst
    np.testing.assert_array_equal(compute_weights(U, lg, ControllerConfig(V=V)), _hand_weights(U, lg, V))


@given(small_instances())
def test_allocation_matches_brute_force(inst):
    lg, U, V = inst
    W = compute_weights(U, lg, ControllerConfig(V=V))
    np.testing.assert_array_equal(max_weight_allocate(W, lg).x, _brute_force_allocation(W, lg))


@given(small_instances(), st.lists(st.integers(-5, 5), min_size=48, max_size=48))
def test_allocation_brute_force_on_raw_weights(inst, vals):
    lg, _, _ = inst
    K, E = len(lg.commodities), lg.graph.num_edges
    W = np.array(list(itertools.islice(itertools.cycle(vals), K * E * 4)), float).reshape(K, E, 4)
    W = W[:, :, : lg.lmax + 1]
    np.testing.assert_array_equal(max_weight_allocate(W, lg).x, _brute_force_allocation(W, lg))


@given(small_instances())
def test_allocation_structure(inst):
    lg, U, V = inst
    nu = max_weight_allocate(compute_weights(U, lg, ControllerConfig(V=V)), lg).x
    assert np.all(nu >= 0)
    for grp in shared_capacity_groups(lg):
        block = nu[:, list(grp.edges), :]
        assert np.count_nonzero(block) <= 1
        assert block.sum() in (0.0, grp.capacity)


@given(small_instances(), st.floats(0, 10), st.floats(0, 10))
def test_weights_nonincreasing_in_V(inst, v1, v2):
    lg, U, _ = inst
    lo, hi = sorted((v1, v2))
    W_lo = compute_weights(U, lg, ControllerConfig(V=lo))
    W_hi = compute_weights(U, lg, ControllerConfig(V=hi))
    finite = np.isfinite(W_lo)
    assert np.all(W_hi[finite] <= W_lo[finite])
    Z = VirtualQueueBank.zeros(lg)
    assert np.all(compute_weights(Z, lg, ControllerConfig(V=hi))[finite] <= 0)


@given(small_instances(), st.integers(0, 2**31))
def test_virtual_queues_stay_nonnegative(inst, seed):
    lg, U, V = inst
    rng = np.random.default_rng(seed)
    cfg = ControllerConfig(V=V)
    for _ in range(20):
        a = ArrivalSample.zeros(lg)
        a.a[:, :, 1:] = rng.poisson(1.0, size=a.a[:, :, 1:].shape)
        for k, c in enumerate(lg.commodities):
            a.a[k, c.destination] = 0
        controller_step(U, a, lg, cfg)
        assert np.all(U.U >= 0) and np.all(U.Ud >= 0)
