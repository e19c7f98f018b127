import logging

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pws_msf.agent import Mode, galvanetto, saltation_crossing, sliding_field
from pws_msf.errors import NotConnected, NotSymmetric, SlidingLost, TopologyError
from pws_msf.network import (
    NetworkState,
    build_topology,
    complete_graph,
    coupled_alpha,
    coupling_term,
    edges_to_adjacency,
    full_monodromy,
    network_field,
    path_graph,
    region_index,
    simulate_network,
    synchronous_state,
)

from conftest import E_GALV

V = 0.15


class TestTopology:
    def test_two_nodes(self):
        t = build_topology([[0, 1], [1, 0]], E_GALV)
        assert np.array_equal(t.laplacian, [[-1, 1], [1, -1]])
        assert t.spectrum == pytest.approx([0.0, -2.0], abs=1e-14)

    def test_path_graph_spectrum(self):
        t = build_topology(path_graph(3), E_GALV)
        assert t.spectrum == pytest.approx([0.0, -1.0, -3.0], abs=1e-12)
        assert t.spectrum[0] == 0.0

    def test_disconnected(self):
        A = edges_to_adjacency([(0, 1), (2, 3)])
        with pytest.raises(NotConnected):
            build_topology(A, E_GALV)

    @pytest.mark.parametrize("A, err", [
        ([[0, 1], [0, 0]], NotSymmetric),
        ([[0, 2], [2, 0]], TopologyError),
        ([[1, 1], [1, 0]], TopologyError),
    ])
    def test_invalid(self, A, err):
        with pytest.raises(err):
            build_topology(A, E_GALV)

    def test_negative_sigma(self):
        with pytest.raises(TopologyError):
            build_topology(path_graph(2), E_GALV, -1.0)

    def test_region_index(self):
        assert region_index([-1, -1, -1]) == 1
        assert region_index([-1, 1, -1]) == 3
        assert region_index([1, 1, 1]) == 8


graphs = st.integers(2, 7).flatmap(lambda n: st.tuples(
    st.just(n), st.lists(st.tuples(st.integers(0, n - 1), st.integers(0, n - 1)), max_size=15)))


@settings(max_examples=60, deadline=None)
@given(graphs)
def test_laplacian_invariants(g):
    n, extra = g
    edges = [(i, i + 1) for i in range(n - 1)] + [(a, b) for a, b in extra if a != b]
    t = build_topology(edges_to_adjacency(edges, n), E_GALV)
    L = t.laplacian
    assert np.array_equal(L, L.T)
    assert np.max(np.abs(L.sum(axis=1))) <= 1e-14
    assert t.spectrum[0] == 0.0
    assert np.all(t.spectrum[1:] < 0)
    assert np.all(np.diff(t.spectrum) <= 0)
    W = t.eigenbasis
    assert np.allclose(W.T @ W, np.eye(n), atol=1e-12)
    # Kronecker change of coordinates diagonalizes the coupling
    I2 = np.eye(2)
    lhs = np.kron(W.T, I2) @ np.kron(L, E_GALV) @ np.kron(W, I2)
    assert np.max(np.abs(lhs - np.kron(np.diag(t.spectrum), E_GALV))) <= 1e-12
    # synchronous invariance
    x = synchronous_state([0.3, -0.7], n)
    assert np.max(np.abs(np.kron(L, E_GALV) @ x)) <= 1e-14


def test_jump_unchanged_under_change_of_coordinates(model):
    S = saltation_crossing(model, [-3.0, V], Mode.MINUS)
    for A in (complete_graph(2), path_graph(3), complete_graph(4)):
        W = build_topology(A, E_GALV).eigenbasis
        N = len(A)
        lhs = np.kron(W.T, np.eye(2)) @ np.kron(np.eye(N), S) @ np.kron(W, np.eye(2))
        assert np.max(np.abs(lhs - np.kron(np.eye(N), S))) <= 1e-13


class TestNetworkField:
    def test_synchronous_sliding(self, model):
        t = build_topology(complete_graph(3), E_GALV, 2.0)
        y = np.array([0.2, V])
        out = network_field(model, t, NetworkState(synchronous_state(y, 3), [Mode.SLIDING] * 3))
        assert np.allclose(out.reshape(3, 2), sliding_field(model, y), atol=1e-15)

    def test_uncoupled_blocks(self, model):
        t = build_topology(complete_graph(2), E_GALV, 0.0)
        x = np.array([0.1, 0.4, -0.3, 0.05])
        out = network_field(model, t, NetworkState(x, [Mode.PLUS, Mode.MINUS]))
        assert np.array_equal(out[:2], model.field_plus(x[:2]))
        assert np.array_equal(out[2:], model.field_minus(x[2:]))

    @pytest.mark.parametrize("other", [Mode.MINUS, Mode.PLUS, Mode.SLIDING])
    def test_tangency_independent_of_other_modes(self, model, other):
        t = build_topology(complete_graph(2), E_GALV, 1.0)
        x2 = np.array([0.0, 0.14]) if other is not Mode.SLIDING else np.array([0.3, V])
        x = np.concatenate([[0.0, V], x2])
        out = network_field(model, t, NetworkState(x, [Mode.SLIDING, other]))
        assert abs(model.switch_grad(x[:2]) @ out[:2]) <= 1e-12
        a = coupled_alpha(model, x[:2], coupling_term(t, x)[0])
        assert 0 <= a <= 1

    def test_sliding_lost(self, model):
        t = build_topology(complete_graph(2), E_GALV, 5.0)
        x = np.array([0.9, V, -0.9, V])
        with pytest.raises(SlidingLost):
            network_field(model, t, NetworkState(x, [Mode.SLIDING, Mode.SLIDING]))


class TestSimulation:
    def test_synchronous_initial_state_stays_synchronous(self, model, skeleton):
        t = build_topology(complete_graph(2), E_GALV, 1.2)
        x0 = synchronous_state(skeleton.anchor_state, 2)
        tr = simulate_network(model, t, x0, 2 * skeleton.period, 1e-2)
        assert np.max(tr.sync_error) <= 1e-10

    def test_uncoupled_agents_follow_single_agent_flow(self, model, skeleton):
        from pws_msf.integrator import integrate_hybrid

        t = build_topology(complete_graph(2), E_GALV, 0.0)
        a, b = np.array([0.3, -0.2]), np.array([-0.1, 0.05])
        tr = simulate_network(model, t, np.concatenate([a, b]), 5.0, 1e-3)
        for k, y in enumerate((a, b)):
            ref = integrate_hybrid(model, y, 0.0, 5.0, 1e-3).final_state
            assert np.allclose(tr.states[-1][2 * k:2 * k + 2], ref, atol=1e-9)

    def test_simultaneous_events_are_logged(self, model, caplog):
        t = build_topology(complete_graph(2), E_GALV, 0.0)
        x0 = synchronous_state([0.3, 0.1], 2)
        with caplog.at_level(logging.INFO, logger="pws_msf.network"):
            tr = simulate_network(model, t, x0, 1.0, 1e-3)
        assert any("index order" in r.message for r in caplog.records)
        assert [e[1] for e in tr.events[:2]] == [0, 1]


class TestFullMonodromy:
    def test_uncoupled_block_diagonal(self, model, skeleton):
        from pws_msf.msf import reduced_transition

        t = build_topology(complete_graph(2), E_GALV, 0.0)
        X = full_monodromy(model, t, skeleton)
        Z = reduced_transition(model, skeleton, 0.0, E_GALV)
        assert np.allclose(X, np.kron(np.eye(2), Z), atol=1e-13)
        ev = np.sort(np.abs(np.linalg.eigvals(X)))
        assert ev[:2] == pytest.approx([0, 0], abs=1e-12)
        assert ev[2:] == pytest.approx([1, 1], abs=1e-6)
