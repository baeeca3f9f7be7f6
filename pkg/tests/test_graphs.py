import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from oracles import dense_laplacian
from reentry.graphs import (GraphError, WeightedGraph, automorphisms, block_laplacian, complete_graph,
                            cycle_graph, in_neighborhoods, laplacian_apply, laplacian_matrix, laplacian_spectrum,
                            path_graph, spectral_gap, symmetrize_conductance)


def test_known_spectral_gaps():
    assert spectral_gap(complete_graph(3)) == pytest.approx(3.0, abs=1e-12)
    assert spectral_gap(path_graph(3)) == pytest.approx(1.0, abs=1e-12)
    assert spectral_gap(cycle_graph(4)) == pytest.approx(2.0, abs=1e-12)
    assert spectral_gap(WeightedGraph(1, (), np.zeros(0))) == 0.0


def test_disconnected_graph_has_zero_gap():
    g = WeightedGraph(4, ((0, 1), (1, 0), (2, 3), (3, 2)), np.ones(4))
    assert not g.is_connected()
    assert spectral_gap(g) == pytest.approx(0.0, abs=1e-12)


def test_laplacian_matches_dense_oracle():
    g = cycle_graph(5).with_weights(np.linspace(0.5, 2.0, 10))
    assert np.allclose(laplacian_matrix(g), dense_laplacian(5, g.edges, g.weights))


def test_nonsymmetric_spectrum_rejected_then_symmetrized():
    g = WeightedGraph(3, ((0, 1), (1, 2), (2, 0)), np.ones(3))
    with pytest.raises(GraphError):
        laplacian_spectrum(g)
    s = symmetrize_conductance(g)
    assert s.is_symmetric()
    assert laplacian_spectrum(s)[0] == pytest.approx(0.0, abs=1e-12)


def test_automorphism_counts():
    assert len(automorphisms(complete_graph(3))) == 6
    assert len(automorphisms(path_graph(3))) == 2


def test_block_laplacian_layout():
    B = block_laplacian(complete_graph(3), path_graph(2))
    assert B.shape == (5, 5)
    assert np.all(B[:3, 3:] == 0)
    assert np.allclose(B[3:, 3:], [[1, -1], [-1, 1]])


def test_in_neighborhoods_partition_edges():
    g = path_graph(4)
    groups = in_neighborhoods(g)
    assert sorted(np.concatenate(groups).tolist()) == list(range(len(g.edges)))
    for j, grp in enumerate(groups):
        assert all(g.edges[k][1] == j for k in grp)


def test_negative_weights_rejected():
    with pytest.raises(GraphError):
        WeightedGraph(2, ((0, 1),), np.array([-1.0]))


def test_roundtrip_dict():
    g = cycle_graph(4).with_weights(np.arange(1.0, 9.0))
    h = WeightedGraph.from_dict(g.to_dict())
    assert h.edges == g.edges and np.array_equal(h.weights, g.weights)


@settings(max_examples=60, deadline=None)
@given(st.integers(2, 6), st.data())
def test_laplacian_properties(n, data):
    g = complete_graph(n)
    w = np.array(data.draw(st.lists(st.floats(0.0, 3.0), min_size=len(g.edges), max_size=len(g.edges))))
    g = symmetrize_conductance(g.with_weights(w))
    L = laplacian_matrix(g)
    assert np.allclose(L.sum(axis=1), 0.0)
    assert np.allclose(L, L.T)
    assert laplacian_spectrum(g)[0] > -1e-10
    F = np.arange(2 * n, dtype=float).reshape(n, 2)
    assert np.allclose(laplacian_apply(g, F), L @ F)
