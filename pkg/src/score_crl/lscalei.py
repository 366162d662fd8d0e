"""Causal representation learning under linear mixing

Stage L1 recovers one encoder row per interventional environment from the
column space of its score difference correlation matrix, stage L2 reads the
latent graph off the sparsity of pulled-back score differences, and stage L3
removes the residual mixing with parents using hard intervention data. A
variant for sufficiently nonlinear latent models replaces stages L2 and L3
with subspace intersection tests.
"""

from __future__ import annotations

from collections.abc import Sequence
import dataclasses
import enum
import logging

import networkx as nx
import numpy as np

from .common import (
    Array,
    AssumptionViolationError,
    UnreachableError,
    VacuousInterventionError,
    numerical_rank,
    pinv,
    tagged,
)
from .graph import CausalOrder, Dag
from .mixing import LinearEncoder, TanhGlmEncoder
from .scores import EnvPair, ScoreDiffDataset


_logger = logging.getLogger(__name__)


class LscaleMode(enum.StrEnum):
    SOFT = "soft"
    HARD = "hard"
    FULL_RANK = "full-rank"


@dataclasses.dataclass(frozen=True, eq=False)
class CrlEstimate:
    """Recovered encoder, latent graph and latent samples

    `basis` maps raw observations to the space the encoder acts on when
    dimensionality reduction was applied.
    """

    encoder: LinearEncoder | TanhGlmEncoder
    graph: Dag
    z_hat: Array
    mode: str
    basis: Array | None = None
    loss: float | None = None

    @property
    def matrix(self) -> Array:
        """Encoder expressed in raw observation coordinates"""
        if self.basis is None:
            return self.encoder.matrix
        return self.encoder.matrix @ self.basis.T


def compute_correlations(
    dataset: ScoreDiffDataset, pairs: Sequence[EnvPair]
) -> list[Array]:
    """Second moments `E[d d^T]` of each pair's score differences"""
    if not dataset.n_s:
        raise ValueError("Empty score difference dataset")
    correlations = []
    for a, b in pairs:
        diff = dataset.pair(a, b)
        corr = diff.T @ diff / dataset.n_s
        correlations.append((corr + corr.T) / 2)
    return correlations


def _top_eigenvector(mat: Array) -> tuple[float, Array]:
    eigvals, eigvecs = np.linalg.eigh(mat)
    vec = eigvecs[:, -1]
    return float(eigvals[-1]), vec * np.sign(vec[np.abs(vec).argmax()])


def stage_l1_encoder(correlations: Sequence[Array]) -> Array:
    """Stacks the unit top eigenvector of each correlation matrix"""
    rows = []
    scale = max(float(np.abs(c).max()) for c in correlations)
    for m, corr in enumerate(correlations):
        top, vec = _top_eigenvector(corr)
        if top <= 1e-12 * scale or top == 0:
            raise VacuousInterventionError(
                tagged("Score differences vanish", env=m)
            )
        rows.append(vec)
    return np.array(rows)


def partial_recover_node(corr: Array, rng: np.random.Generator) -> Array:
    """Random element `R y` of the column space, `y` uniform on the sphere"""
    y = rng.standard_normal(corr.shape[0])
    return corr @ (y / np.linalg.norm(y))


def mean_pulled_back(
    encoder: LinearEncoder | TanhGlmEncoder,
    dataset: ScoreDiffDataset,
    pairs: Sequence[EnvPair],
) -> Array:
    """`M[i, m] = E|s_Z_hat^a - s_Z_hat^b|_i` for the `m`-th pair `(a, b)`"""
    columns = [
        np.abs(encoder.pullback(dataset.pair(a, b), dataset.x)).mean(axis=0)
        for a, b in pairs
    ]
    return np.column_stack(columns)


def threshold_graph(means: Array, threshold: float) -> Dag:
    """Parents `{i != m : M[i, m] >= threshold}`, made acyclic

    Nodes are ordered by the number of ancestors they have in the transitive
    closure of the raw (possibly cyclic) graph, ties broken by index, and
    only edges agreeing with this order are kept.
    """
    n = means.shape[0]
    raw = (means >= threshold) & ~np.eye(n, dtype=bool)
    digraph = nx.DiGraph()
    digraph.add_nodes_from(range(n))
    digraph.add_edges_from((int(i), int(m)) for i, m in zip(*np.nonzero(raw)))
    closure = nx.transitive_closure(digraph, reflexive=False)
    counts = [closure.in_degree(m) for m in range(n)]
    order = sorted(range(n), key=lambda m: (counts[m], m))
    position = {m: k for k, m in enumerate(order)}
    edges = [(i, m) for i, m in digraph.edges if position[i] < position[m]]
    if len(edges) < digraph.number_of_edges():
        _logger.debug(
            "Dropped cyclic edges. [count=%s]",
            digraph.number_of_edges() - len(edges),
        )
    return Dag.from_edges(n, edges)


def stage_l2_graph(
    H: Array,
    dataset: ScoreDiffDataset,
    pairs: Sequence[EnvPair],
    threshold: float,
) -> Dag:
    means = mean_pulled_back(LinearEncoder(H), dataset, pairs)
    return threshold_graph(means, threshold)


def _ml_covariance(samples: Array) -> Array:
    centered = samples - samples.mean(axis=0)
    return centered.T @ centered / len(samples)


def stage_l3_unmix(
    H: Array,
    graph: Dag,
    env_samples: Sequence[Array],
    dataset: ScoreDiffDataset,
    pairs: Sequence[EnvPair],
    threshold: float,
) -> tuple[Array, Dag]:
    """Regresses each row on its estimated parents within its environment

    `env_samples[m]` holds the observations of the environment intervened
    for the `m`-th pair, in the same coordinates as `H`.
    """
    H = H.copy()
    for m in graph.causal_order():
        parents = list(graph.parents(m))
        if not parents:
            continue
        z_hat = env_samples[m] @ H.T
        cov = _ml_covariance(z_hat[:, [m, *parents]])
        parent_cov = cov[1:, 1:]
        if numerical_rank(parent_cov, 1e-8) < len(parents):
            raise AssumptionViolationError(
                tagged("Singular parent covariance", node=m, parents=parents)
            )
        coefs = cov[0, 1:] @ pinv(parent_cov)
        H[m] -= coefs @ H[parents]
    return H, stage_l2_graph(H, dataset, pairs, threshold)


def column_space_basis(corr: Array, threshold: float) -> Array:
    """Eigenvectors with eigenvalue above `threshold` times the largest"""
    eigvals, eigvecs = np.linalg.eigh(corr)
    keep = eigvals > threshold * eigvals[-1]
    return eigvecs[:, keep][:, ::-1]


def intersect_subspaces(
    basis1: Array, basis2: Array, threshold: float
) -> Array:
    """Orthonormal basis of the (numerical) intersection of two subspaces

    Directions are principal vectors whose principal angle cosine exceeds
    `1 - threshold`, sorted by decreasing cosine.
    """
    if not basis1.shape[1] or not basis2.shape[1]:
        return basis1[:, :0]
    u, sv, _vt = np.linalg.svd(basis1.T @ basis2)
    keep = sv > 1 - threshold
    return basis1 @ u[:, : len(sv)][:, keep]


def intersection_dimension(
    basis1: Array, basis2: Array, threshold: float
) -> int:
    return intersect_subspaces(basis1, basis2, threshold).shape[1]


def algorithm2_full_rank(
    correlations: Sequence[Array], order: CausalOrder, threshold: float
) -> tuple[Dag, Array]:
    """Graph and encoder from column space intersections"""
    n = len(correlations)
    bases = [column_space_basis(c, threshold) for c in correlations]
    parents: list[set[int]] = [set() for _ in range(n)]
    for u, k in enumerate(order):
        for t in order[:u]:
            dim = intersection_dimension(bases[t], bases[k], threshold)
            if dim > len(parents[t] & parents[k]):
                parents[k].add(t)
    graph = Dag.from_edges(n, ((p, k) for k in range(n) for p in parents[k]))

    rows = []
    for m in range(n):
        basis = bases[m]
        for k in graph.children(m):
            basis = intersect_subspaces(basis, bases[k], threshold)
        if not basis.shape[1]:
            raise AssumptionViolationError(
                tagged("Empty column space intersection", node=m)
            )
        vec = basis[:, 0]
        rows.append(vec * np.sign(vec[np.abs(vec).argmax()]))
    _logger.debug("Ran full-rank variant. [edges=%s]", len(graph.edges))
    return graph, np.array(rows)


def run(
    dataset: ScoreDiffDataset,
    pairs: Sequence[EnvPair],
    mode: LscaleMode,
    graph_threshold: float,
    rank_threshold: float = 0.01,
    env_samples: Sequence[Array] | None = None,
    basis: Array | None = None,
    subset: Sequence[int] | None = None,
) -> CrlEstimate:
    """Runs all stages for the given pairs, one latent node per pair

    With `subset`, only the listed pairs (and matching environment samples)
    are used. For an ancestrally closed set of targets this recovers the
    induced subgraph, with node `k` standing for pair `subset[k]`.
    """
    if subset is not None:
        if not subset or len(set(subset)) != len(subset):
            raise ValueError(f"Invalid environment subset: {subset}")
        pairs = [pairs[m] for m in subset]
        if env_samples is not None:
            env_samples = [env_samples[m] for m in subset]
    correlations = compute_correlations(dataset, pairs)
    H = stage_l1_encoder(correlations)
    graph = stage_l2_graph(H, dataset, pairs, graph_threshold)
    match mode:
        case LscaleMode.SOFT:
            pass
        case LscaleMode.HARD:
            if env_samples is None:
                raise ValueError("Hard mode requires environment samples")
            H, graph = stage_l3_unmix(
                H, graph, env_samples, dataset, pairs, graph_threshold
            )
        case LscaleMode.FULL_RANK:
            graph, H = algorithm2_full_rank(
                correlations, graph.causal_order(), rank_threshold
            )
        case _:
            raise UnreachableError()
    encoder = LinearEncoder(H)
    _logger.info(
        "Estimated latent graph. [mode=%s, nodes=%s, edges=%s]",
        mode,
        graph.n,
        len(graph.edges),
    )
    return CrlEstimate(
        encoder=encoder,
        graph=graph,
        z_hat=encoder.encode(dataset.x),
        mode=str(mode),
        basis=basis,
    )
