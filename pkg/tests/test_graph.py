import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from cloudsync.graph import (
    GraphError, build_graph, has_spanning_tree, laplacian, random_spanning_digraph,
    search_laplacians, sort_eigenvalues, spectral,
)
from helpers import OSC_EDGES


def test_neighbors_chain():
    g = build_graph(2, [(1, 2)])
    assert g.neighbors(1) == frozenset()
    assert g.neighbors(2) == frozenset({1})


def test_oscillator_graph_followers_have_neighbors():
    g = build_graph(4, OSC_EDGES)
    assert all(g.neighbors(i) for i in range(1, 5))


@pytest.mark.parametrize("edges", [[(1, 1)], [(1, 4)], [(0, 1)], [(1, 2), (1, 2)]])
def test_build_rejects_bad_edges(edges):
    with pytest.raises(GraphError):
        build_graph(3, edges)


def test_laplacian_examples():
    np.testing.assert_array_equal(laplacian(build_graph(2, [(1, 2)])), [[0, 0], [-1, 1]])
    np.testing.assert_array_equal(laplacian(build_graph(2, [(1, 2), (2, 1)])), [[1, -1], [-1, 1]])


def test_spanning_tree_detection():
    assert has_spanning_tree(build_graph(3, [(1, 2), (2, 3)]))
    assert not has_spanning_tree(build_graph(4, [(1, 2), (3, 4)]))
    assert has_spanning_tree(build_graph(4, OSC_EDGES))
    assert has_spanning_tree(build_graph(1, []))


def test_spectral_oscillator_graph():
    sp = spectral(build_graph(4, OSC_EDGES))
    np.testing.assert_allclose(sp.eigenvalues, [0, 1, 2 - 1j, 2 + 1j], atol=1e-9)
    np.testing.assert_allclose(sp.phi, [0.2, 0.2, 0.4, 0.2], atol=1e-12)


def test_spectral_chain():
    sp = spectral(build_graph(2, [(1, 2)]))
    np.testing.assert_allclose(sp.eigenvalues, [0, 1], atol=1e-12)
    np.testing.assert_allclose(sp.phi, [1, 0], atol=1e-12)
    np.testing.assert_allclose(sp.l_check, [[1.0]], atol=1e-12)


def test_spectral_single_agent():
    sp = spectral(build_graph(1, []))
    assert sp.x1.shape == (1, 0) and sp.l_check.shape == (0, 0)
    np.testing.assert_allclose(sp.phi, [1.0])


def test_spectral_rejects_disconnected():
    with pytest.raises(GraphError):
        spectral(build_graph(4, [(1, 2), (3, 4)]))


def test_sort_eigenvalues_order():
    got = sort_eigenvalues([2 + 1j, 0, 2 - 1j, 1])
    np.testing.assert_array_equal(got, [0, 1, 2 - 1j, 2 + 1j])


def test_search_two_nodes_by_hand():
    # eig {0, 1} on two nodes: exactly one of the two single edges
    assert search_laplacians(2, [0, 1]) == [[(1, 2)], [(2, 1)]]
    assert search_laplacians(2, [0, 1], target_phi=[1, 0]) == [[(1, 2)]]


def _brute_force_hits(target, phi):
    pairs = [p for p in itertools.permutations(range(1, 4), 2)]
    hits = []
    for r in range(len(pairs) + 1):
        for edges in itertools.combinations(pairs, r):
            g = build_graph(3, edges)
            try:
                sp = spectral(g)
            except GraphError:
                continue
            if np.allclose(sp.eigenvalues, sort_eigenvalues(target), atol=1e-6) and np.allclose(sp.phi, phi, atol=1e-6):
                hits.append(sorted(edges))
    return sorted(hits)


def test_search_matches_independent_enumeration():
    target, phi = [0, 1, 2], [1, 0, 0]
    assert search_laplacians(3, target, target_phi=phi) == _brute_force_hits(target, phi)


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 6), st.integers(0, 2**31 - 1))
def test_random_digraph_properties(n, seed):
    g = random_spanning_digraph(n, np.random.default_rng(seed))
    assert has_spanning_tree(g)
    sp = spectral(g)
    assert abs(sp.phi.sum() - 1) < 1e-9
    np.testing.assert_allclose(sp.phi @ sp.laplacian, 0, atol=1e-9)
    if n > 1:
        # the reduced matrix carries exactly the nonzero Laplacian eigenvalues;
        # compared through power traces since repeated eigenvalues may be defective
        lk, rk = np.eye(n), np.eye(n - 1)
        for _ in range(n - 1):
            lk, rk = lk @ sp.laplacian, rk @ sp.l_check
            assert np.trace(rk) == pytest.approx(np.trace(lk), rel=1e-9, abs=1e-9)
        np.testing.assert_allclose(sp.x1 @ sp.l_check, sp.laplacian @ sp.x1, atol=1e-10)
        np.testing.assert_allclose(sp.x1.T @ sp.x1, np.eye(n - 1), atol=1e-12)
