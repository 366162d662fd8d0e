import itertools

import numpy as np
import pytest

from score_crl.graph import Dag, relation_matrices, surrounded_sets
from score_crl.metrics import (
    TransformErrors,
    effective_transform_errors,
    evaluate,
)
from score_crl.mixing import sample_mixing
from score_crl.scm import (
    InterventionKind,
    ScmFamily,
    build_environments,
    default_changes,
    sample_scm,
)
from score_crl.scores import OracleProvider, ScoreDiffDataset
import score_crl.lscalei as sut


_COMPLETE = Dag.from_edges(3, [(0, 1), (0, 2), (1, 2)])


class _Instance:
    def __init__(
        self,
        rng: np.random.Generator,
        kind: InterventionKind,
        family: ScmFamily = ScmFamily.LINEAR,
        dag: Dag | None = None,
        n_s: int = 2000,
    ) -> None:
        self.dag = dag or Dag.chain(3)
        n = self.dag.n
        scm = sample_scm(family, self.dag, rng)
        changes = default_changes(family, kind)
        self.env_set = build_environments(scm, changes[:1], rng)
        self.mix = sample_mixing(n, n + 2, rng)
        self.z = scm.sample(n_s, rng)
        x = self.mix.forward(self.z)
        provider = OracleProvider(self.env_set, self.mix, x)
        self.pairs = [(1 + m, 0) for m in range(n)]
        self.dataset = provider.dataset(self.pairs)
        self.env_samples = [
            self.mix.forward(self.env_set.envs[1 + m].sample(20_000, rng))
            for m in range(n)
        ]

    @property
    def targets(self) -> tuple[int, ...]:
        return self.env_set.oracle_targets()[0]

    @property
    def permutation(self) -> tuple[int, ...]:
        return tuple(self.targets.index(i) for i in range(self.dag.n))

    def errors(self, H: np.ndarray) -> TransformErrors:
        return effective_transform_errors(
            H, self.mix.matrix, self.dag, self.permutation
        )


class TestComputeCorrelations:
    def test_zero_diffs(self) -> None:
        dataset = ScoreDiffDataset(
            np.zeros((4, 2)), {(1, 0): np.zeros((4, 2))}
        )
        [corr] = sut.compute_correlations(dataset, [(1, 0)])
        np.testing.assert_array_equal(corr, np.zeros((2, 2)))

    def test_one_sparse_is_rank_one(self, rng) -> None:
        direction = rng.standard_normal(4)
        diffs = np.outer(rng.standard_normal(50), direction)
        dataset = ScoreDiffDataset(np.zeros((50, 4)), {(1, 0): diffs})
        [corr] = sut.compute_correlations(dataset, [(1, 0)])
        np.testing.assert_allclose(corr, corr.T)
        assert np.linalg.matrix_rank(corr, tol=1e-10) == 1


class TestStageL1:
    def test_unit_top_eigenvectors(self) -> None:
        corr = np.diag([1.0, 3.0])
        H = sut.stage_l1_encoder([corr, np.diag([2.0, 1.0])])
        np.testing.assert_allclose(H, [[0.0, 1.0], [1.0, 0.0]])

    def test_vacuous_intervention(self) -> None:
        with pytest.raises(sut.VacuousInterventionError):
            sut.stage_l1_encoder([np.eye(2), np.zeros((2, 2))])

    def test_root_target_recovers_encoder_row(self, rng) -> None:
        instance = _Instance(rng, InterventionKind.HARD)
        m = instance.targets.index(0)
        corr = sut.compute_correlations(
            instance.dataset, [instance.pairs[m]]
        )[0]
        [row] = sut.stage_l1_encoder([corr])
        effective = row @ instance.mix.matrix
        assert np.all(np.abs(effective[1:]) < 1e-8 * np.abs(effective[0]))

    def test_rows_supported_on_closed_parents(self, rng) -> None:
        instance = _Instance(rng, InterventionKind.HARD, dag=_COMPLETE)
        corrs = sut.compute_correlations(instance.dataset, instance.pairs)
        H = sut.stage_l1_encoder(corrs)
        assert instance.errors(H).pa < 1e-8


def test_partial_recover_node_is_in_column_space(rng) -> None:
    basis = np.linalg.qr(rng.standard_normal((5, 2)))[0]
    corr = basis @ np.diag([2.0, 1.0]) @ basis.T
    row = sut.partial_recover_node(corr, rng)
    np.testing.assert_allclose(basis @ basis.T @ row, row, atol=1e-12)


class TestThresholdGraph:
    def test_keeps_edges_above_threshold(self) -> None:
        means = np.array([[1.0, 0.5], [0.0, 1.0]])
        assert sut.threshold_graph(means, 0.1).edges == {(0, 1)}
        assert not sut.threshold_graph(means, 0.6).edges

    def test_breaks_cycles(self) -> None:
        means = np.array(
            [[1.0, 0.5, 0.5], [0.5, 1.0, 0.0], [0.0, 0.0, 1.0]]
        )
        # Ancestor counts tie, so the index order drops 1 -> 0
        dag = sut.threshold_graph(means, 0.1)
        assert dag.edges == {(0, 1), (0, 2)}

    def test_single_node(self) -> None:
        assert sut.threshold_graph(np.ones((1, 1)), 0.1) == Dag.empty(1)


class TestSubspaces:
    def test_independent_directions(self) -> None:
        e = np.eye(3)
        assert sut.intersection_dimension(e[:, :1], e[:, 1:2], 0.01) == 0

    def test_shared_direction(self) -> None:
        e = np.eye(3)
        basis = sut.intersect_subspaces(e[:, :2], e[:, 1:], 0.01)
        assert basis.shape == (3, 1)
        np.testing.assert_allclose(np.abs(basis[:, 0]), e[:, 1], atol=1e-12)

    def test_column_space_basis(self) -> None:
        corr = np.diag([1.0, 1e-6, 2.0])
        basis = sut.column_space_basis(corr, 0.01)
        np.testing.assert_allclose(np.abs(basis), np.eye(3)[:, [2, 0]])

    def test_full_rank_on_independent_nodes(self) -> None:
        corrs = [np.diag([1.0, 0.0]), np.diag([0.0, 1.0])]
        graph, H = sut.algorithm2_full_rank(corrs, (0, 1), 0.01)
        assert not graph.edges
        np.testing.assert_allclose(np.abs(H), np.eye(2))

    def test_intersection_dimensions_follow_graph(self, rng) -> None:
        instance = _Instance(
            rng,
            InterventionKind.SOFT,
            family=ScmFamily.QUADRATIC,
            dag=_COMPLETE,
        )
        corrs = sut.compute_correlations(instance.dataset, instance.pairs)
        perm = instance.permutation
        bases = [sut.column_space_basis(corrs[m], 1e-8) for m in perm]
        closed = relation_matrices(instance.dag).pa
        for t, k in itertools.combinations(range(3), 2):
            dim = sut.intersection_dimension(bases[t], bases[k], 1e-8)
            assert dim == np.sum(closed[t] & closed[k])
        sur, _surrounded = surrounded_sets(instance.dag)
        for i in range(3):
            basis = bases[i]
            for k in instance.dag.children(i):
                basis = sut.intersect_subspaces(basis, bases[k], 1e-8)
            assert basis.shape[1] == len(sur[i]) + 1


class TestRun:
    def test_soft_recovers_closure(self, rng) -> None:
        instance = _Instance(rng, InterventionKind.SOFT)
        estimate = sut.run(
            instance.dataset, instance.pairs, sut.LscaleMode.SOFT, 1e-4
        )
        assert estimate.mode == "soft"
        assert estimate.z_hat.shape == instance.z.shape
        report = evaluate(
            instance.z,
            estimate.z_hat,
            instance.dag,
            estimate.graph,
            estimate.matrix,
            instance.mix.matrix,
        )
        assert report.shd_tc == 0

    def test_hard_recovers_latents(self, rng) -> None:
        instance = _Instance(rng, InterventionKind.HARD)
        estimate = sut.run(
            instance.dataset,
            instance.pairs,
            sut.LscaleMode.HARD,
            1e-3,
            env_samples=instance.env_samples,
        )
        report = evaluate(
            instance.z,
            estimate.z_hat,
            instance.dag,
            estimate.graph,
            estimate.matrix,
            instance.mix.matrix,
        )
        assert report.mcc > 0.95
        assert report.l_scale < 0.1

    def test_hard_requires_samples(self, rng) -> None:
        instance = _Instance(rng, InterventionKind.HARD)
        with pytest.raises(ValueError):
            sut.run(
                instance.dataset, instance.pairs, sut.LscaleMode.HARD, 1e-3
            )

    def test_full_rank_returns_estimate(self, rng) -> None:
        instance = _Instance(
            rng, InterventionKind.SOFT, family=ScmFamily.QUADRATIC
        )
        estimate = sut.run(
            instance.dataset, instance.pairs, sut.LscaleMode.FULL_RANK, 1e-3
        )
        assert estimate.graph.n == 3
        assert np.linalg.matrix_rank(estimate.matrix) == 3

    def test_soft_parent_error(self, rng) -> None:
        instance = _Instance(rng, InterventionKind.SOFT)
        estimate = sut.run(
            instance.dataset, instance.pairs, sut.LscaleMode.SOFT, 1e-4
        )
        assert instance.errors(estimate.matrix).pa <= 1e-3

    def test_full_rank_rows_supported_on_surrounding(self, rng) -> None:
        instance = _Instance(
            rng, InterventionKind.SOFT, family=ScmFamily.QUADRATIC
        )
        estimate = sut.run(
            instance.dataset,
            instance.pairs,
            sut.LscaleMode.FULL_RANK,
            1e-3,
            rank_threshold=1e-8,
        )
        assert estimate.graph == instance.dag.relabeled(instance.permutation)
        assert instance.errors(estimate.matrix).sur < 1e-6

    def test_ancestral_subset(self, rng) -> None:
        instance = _Instance(rng, InterventionKind.SOFT)
        targets = instance.targets
        subset = [targets.index(0), targets.index(1)]
        estimate = sut.run(
            instance.dataset,
            instance.pairs,
            sut.LscaleMode.SOFT,
            1e-4,
            subset=subset,
        )
        assert estimate.graph == Dag.from_edges(2, [(0, 1)])

    def test_invalid_subset(self, rng) -> None:
        instance = _Instance(rng, InterventionKind.SOFT)
        with pytest.raises(ValueError):
            sut.run(
                instance.dataset,
                instance.pairs,
                sut.LscaleMode.SOFT,
                1e-4,
                subset=[0, 0],
            )

    def test_matrix_with_basis(self) -> None:
        encoder_matrix = np.array([[1.0, 2.0]])
        basis = np.array([[1.0, 0.0], [0.0, 1.0], [0.0, 0.0]])
        estimate = sut.CrlEstimate(
            encoder=sut.LinearEncoder(encoder_matrix),
            graph=Dag.empty(1),
            z_hat=np.zeros((1, 1)),
            mode="soft",
            basis=basis,
        )
        np.testing.assert_allclose(estimate.matrix, [[1.0, 2.0, 0.0]])
