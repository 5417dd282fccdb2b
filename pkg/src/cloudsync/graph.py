"""Directed accessibility graph, Laplacian and the reduced spectral data.

Agents are numbered ``1..N`` at the interface; matrices are 0-based.
An edge ``(j, i)`` means agent ``i`` may read agent ``j``'s record.
"""

from __future__ import annotations

import itertools
from collections import deque
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla


class GraphError(ValueError):
    pass


@dataclass(frozen=True)
class AccessibilityGraph:
    n_agents: int
    edges: frozenset[tuple[int, int]]
    neighbor_sets: tuple[frozenset[int], ...] = field(compare=False)

    def neighbors(self, i: int) -> frozenset[int]:
        """In-neighbours of agent ``i`` (1-based)."""
        return self.neighbor_sets[i - 1]

    def sorted_edges(self) -> list[tuple[int, int]]:
        return sorted(self.edges)


def build_graph(n_agents: int, edges) -> AccessibilityGraph:
    if n_agents < 1:
        raise GraphError(f"need at least one agent, got {n_agents}")
    seen: set[tuple[int, int]] = set()
    for e in edges:
        j, i = (int(v) for v in e)
        if not (1 <= j <= n_agents and 1 <= i <= n_agents):
            raise GraphError(f"edge {(j, i)} out of range 1..{n_agents}")
        if i == j:
            raise GraphError(f"self-loop at agent {i}")
        if (j, i) in seen:
            raise GraphError(f"duplicate edge {(j, i)}")
        seen.add((j, i))
    nbrs = tuple(
        frozenset(j for (j, k) in seen if k == i) for i in range(1, n_agents + 1)
    )
    return AccessibilityGraph(n_agents, frozenset(seen), nbrs)


def laplacian(g: AccessibilityGraph) -> np.ndarray:
    lap = np.zeros((g.n_agents, g.n_agents))
    for j, i in g.edges:
        lap[i - 1, j - 1] = -1.0
        lap[i - 1, i - 1] += 1.0
    return lap


def has_spanning_tree(g: AccessibilityGraph) -> bool:
    """True iff some agent reaches every other one along edge direction."""
    out: dict[int, list[int]] = {v: [] for v in range(1, g.n_agents + 1)}
    for j, i in g.edges:
        out[j].append(i)
    for root in out:
        reached = {root}
        queue = deque([root])
        while queue:
            v = queue.popleft()
            for w in out[v]:
                if w not in reached:
                    reached.add(w)
                    queue.append(w)
        if len(reached) == g.n_agents:
            return True
    return False


def sort_eigenvalues(values) -> np.ndarray:
    values = np.asarray(values, dtype=complex)
    # rounding keeps numerically equal real parts tied
    order = np.lexsort((values.imag, np.round(values.real, 9)))
    return values[order]


@dataclass(frozen=True)
class Spectrum:
    laplacian: np.ndarray
    eigenvalues: np.ndarray
    phi: np.ndarray
    l_check: np.ndarray
    x1: np.ndarray

    @property
    def n_agents(self) -> int:
        return self.laplacian.shape[0]


def spectral(g: AccessibilityGraph, zero_tol: float = 1e-8) -> Spectrum:
    """Eigen-data of the Laplacian plus the reduction onto ``ker(phi^T)``.

    ``x1`` is an orthonormal basis of ``ker(phi^T)``; ``l_check`` is the
    matrix of ``L`` restricted to that invariant subspace.
    """
    lap = laplacian(g)
    n = g.n_agents
    eig = sort_eigenvalues(np.linalg.eigvals(lap))
    if np.count_nonzero(np.abs(eig) < zero_tol) != 1:
        raise GraphError(
            "graph has no directed spanning tree (zero eigenvalue is not simple)"
        )
    left = sla.null_space(lap.T, rcond=1e-10)
    if left.shape[1] != 1:
        raise GraphError("left null space of L is not one-dimensional")
    v = left[:, 0]
    total = v.sum()
    if abs(total) < 1e-12:
        raise GraphError("left null vector cannot be normalized to sum one")
    phi = v / total
    if n == 1:
        x1 = np.zeros((1, 0))
        l_check = np.zeros((0, 0))
    else:
        x1 = sla.null_space(phi[None, :])
        l_check, *_ = np.linalg.lstsq(x1, lap @ x1, rcond=None)
        resid = np.linalg.norm(x1 @ l_check - lap @ x1)
        if resid > 1e-9 * max(1.0, np.linalg.norm(lap)):
            raise GraphError(f"ker(phi^T) is not L-invariant (residual {resid:.3e})")
    return Spectrum(lap, eig, phi, l_check, x1)


def search_laplacians(n_agents: int, target_eigenvalues, target_phi=None, tol: float = 1e-6):
    """Enumerate every unit-weight digraph on ``n_agents`` nodes and keep
    those whose Laplacian matches the target spectrum (and left null vector).

    Returns edge lists sorted lexicographically, in lexicographic order.
    """
    pairs = [(j, i) for j in range(1, n_agents + 1) for i in range(1, n_agents + 1) if i != j]
    target = sort_eigenvalues(target_eigenvalues)
    hits = []
    for mask in range(1 << len(pairs)):
        edges = [p for k, p in enumerate(pairs) if mask >> k & 1]
        lap = np.zeros((n_agents, n_agents))
        for j, i in edges:
            lap[i - 1, j - 1] = -1.0
            lap[i - 1, i - 1] += 1.0
        eig = sort_eigenvalues(np.linalg.eigvals(lap))
        if np.max(np.abs(eig - target)) > tol:
            continue
        if target_phi is not None:
            g = build_graph(n_agents, edges)
            try:
                spec = spectral(g)
            except GraphError:
                continue
            if np.max(np.abs(spec.phi - np.asarray(target_phi))) > tol:
                continue
        hits.append(sorted(edges))
    return sorted(hits)


def random_spanning_digraph(n_agents: int, rng: np.random.Generator, extra_edge_prob: float = 0.3):
    """Random digraph containing a directed spanning tree rooted at a random agent."""
    order = list(rng.permutation(n_agents) + 1)
    edges = set()
    for k in range(1, n_agents):
        parent = order[int(rng.integers(0, k))]
        edges.add((int(parent), int(order[k])))
    for j, i in itertools.permutations(range(1, n_agents + 1), 2):
        if (j, i) not in edges and rng.random() < extra_edge_prob:
            edges.add((j, i))
    return build_graph(n_agents, sorted(edges))
