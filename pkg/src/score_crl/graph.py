"""Latent DAGs and graphical relations

Edge convention: `adjacency[i, j]` is true iff `j` is a parent of `i`, i.e.
the graph contains the edge `j -> i`. Nodes are labeled `0, ..., n - 1`.
"""

from __future__ import annotations

from collections.abc import Iterable, Sequence
import dataclasses
import functools
import logging
from typing import Self

import networkx as nx
import numpy as np

from .common import Array, GraphSizeError, tagged


_logger = logging.getLogger(__name__)


type Edge = tuple[int, int]  # (parent, child)


type CausalOrder = tuple[int, ...]


@dataclasses.dataclass(frozen=True)
class Dag:
    """Immutable directed acyclic graph over `n` latent nodes"""

    n: int
    edges: frozenset[Edge] = frozenset()

    def __post_init__(self) -> None:
        if self.n < 1:
            raise ValueError(f"Invalid node count: {self.n}")
        for parent, child in self.edges:
            if parent == child:
                raise ValueError(f"Self-loop on node {parent}")
            if not (0 <= parent < self.n and 0 <= child < self.n):
                raise ValueError(f"Edge out of range: {parent} -> {child}")
        if not nx.is_directed_acyclic_graph(self.to_networkx()):
            raise ValueError("Graph contains a cycle")

    @classmethod
    def from_edges(cls, n: int, edges: Iterable[Edge]) -> Self:
        return cls(n, frozenset((int(p), int(c)) for p, c in edges))

    @classmethod
    def from_adjacency(cls, adjacency: Array) -> Self:
        mat = np.asarray(adjacency, dtype=bool)
        children, parents = np.nonzero(mat)
        return cls.from_edges(mat.shape[0], zip(parents, children))

    @classmethod
    def empty(cls, n: int) -> Self:
        return cls(n)

    @classmethod
    def chain(cls, n: int) -> Self:
        return cls.from_edges(n, ((i, i + 1) for i in range(n - 1)))

    @functools.cached_property
    def adjacency(self) -> Array:
        mat = np.zeros((self.n, self.n), dtype=bool)
        for parent, child in self.edges:
            mat[child, parent] = True
        mat.flags.writeable = False
        return mat

    def to_networkx(self) -> nx.DiGraph:
        graph = nx.DiGraph()
        graph.add_nodes_from(range(self.n))
        graph.add_edges_from(self.edges)
        return graph

    def parents(self, i: int) -> tuple[int, ...]:
        return tuple(int(j) for j in np.flatnonzero(self.adjacency[i]))

    def children(self, i: int) -> tuple[int, ...]:
        return tuple(int(j) for j in np.flatnonzero(self.adjacency[:, i]))

    def ancestors(self, i: int) -> frozenset[int]:
        return frozenset(nx.ancestors(self.to_networkx(), i))

    def descendants(self, i: int) -> frozenset[int]:
        return frozenset(nx.descendants(self.to_networkx(), i))

    def causal_order(self) -> CausalOrder:
        """Smallest-label-first topological order"""
        return tuple(nx.lexicographical_topological_sort(self.to_networkx()))

    def is_causal_order(self, order: Sequence[int]) -> bool:
        if sorted(order) != list(range(self.n)):
            return False
        position = {node: k for k, node in enumerate(order)}
        return all(position[p] < position[c] for p, c in self.edges)

    def relabeled(self, mapping: Sequence[int]) -> Dag:
        """Returns the graph with node `i` renamed to `mapping[i]`"""
        return Dag.from_edges(
            self.n, ((mapping[p], mapping[c]) for p, c in self.edges)
        )

    def restricted(self, nodes: Sequence[int]) -> Dag:
        """Induced subgraph, with `nodes[k]` relabeled to `k`"""
        index = {node: k for k, node in enumerate(nodes)}
        return Dag.from_edges(
            len(nodes),
            (
                (index[p], index[c])
                for p, c in self.edges
                if p in index and c in index
            ),
        )

    def __str__(self) -> str:
        edges = ", ".join(f"{p}->{c}" for p, c in sorted(self.edges))
        return f"Dag(n={self.n}, edges={{{edges}}})"


def sample_erdos_renyi(
    n: int, density: float, rng: np.random.Generator
) -> Dag:
    """Samples a random DAG whose identity order is a valid causal order

    Edges are drawn independently with probability `density` among pairs
    ordered by a uniformly random node order; the result is then relabeled
    along that order.
    """
    if n < 1:
        raise ValueError(f"Invalid node count: {n}")
    if not 0 <= density <= 1:
        raise ValueError(f"Invalid density: {density}")
    order = rng.permutation(n)
    draws = rng.random((n, n)) < density
    edges = [
        (int(order[a]), int(order[b]))
        for b in range(n)
        for a in range(b)
        if draws[b, a]
    ]
    relabel = np.empty(n, dtype=int)
    relabel[order] = np.arange(n)
    dag = Dag.from_edges(n, edges).relabeled([int(k) for k in relabel])
    _logger.debug("Sampled graph. [n=%s, edges=%s]", n, len(dag.edges))
    return dag


def transitive_closure(g: Dag) -> Dag:
    closure = nx.transitive_closure_dag(g.to_networkx())
    return Dag.from_edges(g.n, closure.edges)


def transitive_reduction(g: Dag) -> Dag:
    reduction = nx.transitive_reduction(g.to_networkx())
    return Dag.from_edges(g.n, reduction.edges)


def surrounded_sets(
    g: Dag,
) -> tuple[tuple[frozenset[int], ...], frozenset[int]]:
    """Returns each node's surrounding nodes and the set of surrounded nodes

    Node `j` surrounds `i` when `j != i` and `Ch(i) | {i}` is a subset of
    `Ch(j)`.
    """
    children = [frozenset(g.children(i)) for i in range(g.n)]
    sur = tuple(
        frozenset(
            j
            for j in range(g.n)
            if j != i and (children[i] | {i}) <= children[j]
        )
        for i in range(g.n)
    )
    return sur, frozenset(i for i, s in enumerate(sur) if s)


@dataclasses.dataclass(frozen=True)
class RelationMatrices:
    """Binary parent, ancestor and surrounding-parent relations

    Entry `(i, j)` of each matrix is true iff `j` is respectively in
    `Pa(i) | {i}`, `An(i) | {i}` or `sur(i) | {i}`.
    """

    pa: Array
    an: Array
    sur: Array


def relation_matrices(g: Dag) -> RelationMatrices:
    eye = np.eye(g.n, dtype=bool)
    pa = g.adjacency | eye
    an = transitive_closure(g).adjacency | eye
    sur = eye.copy()
    for i, nodes in enumerate(surrounded_sets(g)[0]):
        sur[i, list(nodes)] = True
    return RelationMatrices(pa=pa, an=an, sur=sur)


MAX_ISOMORPHISM_NODES = 10


def isomorphic_under_permutation(g1: Dag, g2: Dag) -> CausalOrder | None:
    """Searches for a relabeling mapping `g2` onto `g1`

    The returned permutation `perm` satisfies
    `g1.adjacency[i, j] == g2.adjacency[perm[i], perm[j]]`.
    """
    if g1.n != g2.n:
        raise ValueError(f"Size mismatch: {g1.n} != {g2.n}")
    if g1.n > MAX_ISOMORPHISM_NODES:
        raise GraphSizeError(
            tagged("Graph too large for exhaustive search", n=g1.n)
        )
    adj1, adj2 = g1.adjacency, g2.adjacency
    degrees1 = _degrees(adj1)
    degrees2 = _degrees(adj2)
    if sorted(degrees1) != sorted(degrees2):
        return None
    candidates = [
        [j for j in range(g2.n) if degrees2[j] == degrees1[i]]
        for i in range(g1.n)
    ]
    perm = _search(adj1, adj2, candidates, [])
    return None if perm is None else tuple(perm)


def _degrees(adj: Array) -> list[tuple[int, int]]:
    return list(
        zip(adj.sum(axis=1).tolist(), adj.sum(axis=0).tolist(), strict=True)
    )


def _search(
    adj1: Array, adj2: Array, candidates: list[list[int]], prefix: list[int]
) -> list[int] | None:
    i = len(prefix)
    if i == len(candidates):
        return prefix
    for j in candidates[i]:
        if j in prefix:
            continue
        if all(
            adj1[i, k] == adj2[j, prefix[k]]
            and adj1[k, i] == adj2[prefix[k], j]
            for k in range(i)
        ):
            found = _search(adj1, adj2, candidates, [*prefix, j])
            if found is not None:
                return found
    return None
