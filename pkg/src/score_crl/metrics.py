"""Evaluation metrics"""

from __future__ import annotations

from collections.abc import Sequence
import dataclasses
import logging

import numpy as np
from scipy.optimize import linear_sum_assignment

from .common import Array, tagged
from .graph import CausalOrder, Dag, relation_matrices, transitive_closure
from .records import MetricReport


_logger = logging.getLogger(__name__)


@dataclasses.dataclass(frozen=True)
class Matching:
    """Best assignment of estimated to true latents

    `permutation[i]` is the index of the estimated latent matched with the
    true latent `i`.
    """

    value: float
    permutation: CausalOrder


def correlation_matrix(z: Array, z_hat: Array) -> Array:
    """Absolute Pearson correlations between true and estimated columns"""
    if z.shape != z_hat.shape:
        raise ValueError(f"Shape mismatch: {z.shape} != {z_hat.shape}")
    if z.shape[0] < 2:
        raise ValueError("At least two samples are required")
    stds = np.concatenate([z.std(axis=0), z_hat.std(axis=0)])
    if np.any(stds == 0):
        raise ValueError("Constant latent column")
    n = z.shape[1]
    corr = np.corrcoef(z, z_hat, rowvar=False)
    return np.abs(corr[:n, n:])


def mcc(z: Array, z_hat: Array) -> Matching:
    """Mean correlation coefficient under the optimal matching"""
    corr = correlation_matrix(z, z_hat)
    rows, cols = linear_sum_assignment(corr, maximize=True)
    permutation = tuple(int(c) for _r, c in sorted(zip(rows, cols)))
    value = float(corr[rows, cols].mean())
    return Matching(value=value, permutation=permutation)


def _inverse(permutation: Sequence[int]) -> list[int]:
    inverse = [0] * len(permutation)
    for i, j in enumerate(permutation):
        inverse[j] = i
    return inverse


def align_graph(g_hat: Dag, permutation: Sequence[int]) -> Dag:
    """Renames estimated node `permutation[i]` to `i`"""
    if sorted(permutation) != list(range(g_hat.n)):
        raise ValueError(f"Invalid permutation: {permutation}")
    return g_hat.relabeled(_inverse(permutation))


def shd(g1: Dag, g2: Dag, permutation: Sequence[int] | None = None) -> int:
    """Structural Hamming distance, flips counting once

    When `permutation` is given, `g2` is first aligned onto `g1`'s labels.
    """
    if g1.n != g2.n:
        raise ValueError(f"Size mismatch: {g1.n} != {g2.n}")
    if permutation is not None:
        g2 = align_graph(g2, permutation)
    adj1 = g1.adjacency | g1.adjacency.T * 2
    adj2 = g2.adjacency | g2.adjacency.T * 2
    upper = np.triu_indices(g1.n, k=1)
    return int(np.sum(adj1[upper] != adj2[upper]))


def shd_closure(
    g1: Dag, g2: Dag, permutation: Sequence[int] | None = None
) -> int:
    """Distance between the transitive closures"""
    return shd(transitive_closure(g1), transitive_closure(g2), permutation)


@dataclasses.dataclass(frozen=True)
class TransformErrors:
    scale: float
    pa: float
    sur: float


def aligned_effective_transform(
    H: Array, G: Array, permutation: Sequence[int]
) -> Array:
    """Rows of `H G` matched to true latents, scaled to a unit diagonal"""
    effective = (H @ G)[list(permutation)]
    diag = np.diag(effective).copy()
    if np.any(diag == 0):
        _logger.warning("Effective transform has a zero diagonal entry.")
        diag[diag == 0] = 1
    return effective / diag[:, None]


def effective_transform_errors(
    H: Array, G: Array, dag: Dag, permutation: Sequence[int]
) -> TransformErrors:
    """Spectral norms of the residual mixing in `H G`

    The scale error measures any deviation from a scaled permutation; the
    parent and surrounding errors only count entries outside of the
    respective relations.
    """
    if H.shape[0] != dag.n or G.shape != (H.shape[1], dag.n):
        raise ValueError(
            tagged("Incompatible shapes", H=H.shape, G=G.shape, n=dag.n)
        )
    effective = aligned_effective_transform(H, G, permutation)
    relations = relation_matrices(dag)
    return TransformErrors(
        scale=float(np.linalg.norm(effective - np.eye(dag.n), 2)),
        pa=float(np.linalg.norm(effective * ~relations.pa, 2)),
        sur=float(np.linalg.norm(effective * ~relations.sur, 2)),
    )


def normalized_latent_error(
    z: Array, z_hat: Array, permutation: Sequence[int] | None = None
) -> float:
    """Relative error after permutation and least-squares scale alignment

    The permutation defaults to the one maximizing correlation.
    """
    norm = np.linalg.norm(z)
    if norm == 0:
        raise ValueError("Zero-norm latents")
    if permutation is None:
        permutation = mcc(z, z_hat).permutation
    aligned = z_hat[:, list(permutation)]
    energy = np.sum(aligned**2, axis=0)
    scales = np.divide(
        np.sum(z * aligned, axis=0),
        energy,
        out=np.zeros_like(energy),
        where=energy > 0,
    )
    return float(np.linalg.norm(z - aligned * scales) / norm)


def evaluate(
    z: Array,
    z_hat: Array,
    dag: Dag,
    dag_hat: Dag,
    encoder_matrix: Array,
    mixing_matrix: Array,
) -> MetricReport:
    """Computes all metrics, aligning estimates with the MCC matching"""
    matching = mcc(z, z_hat)
    perm = matching.permutation
    errors = effective_transform_errors(
        encoder_matrix, mixing_matrix, dag, perm
    )
    report = MetricReport(
        mcc=matching.value,
        shd=shd(dag, dag_hat, perm),
        shd_tc=shd_closure(dag, dag_hat, perm),
        l_scale=errors.scale,
        l_pa=errors.pa,
        l_sur=errors.sur,
        l_norm=normalized_latent_error(z, z_hat, perm),
        permutation=perm,
    )
    _logger.debug(
        "Evaluated estimate. [mcc=%.4f, shd=%s]", report.mcc, report.shd
    )
    return report
