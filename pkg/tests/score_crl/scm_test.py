import numpy as np
import pytest

from score_crl.graph import Dag
import score_crl.scm as sut


def _linear_chain() -> sut.LinearGaussianScm:
    weights = np.array([[0.0, 0.0], [0.8, 0.0]])
    return sut.LinearGaussianScm(
        dag=Dag.chain(2), noise_vars=(1.0, 0.5), weights=weights
    )


def _quadratic_chain() -> sut.QuadraticScm:
    forms = (np.zeros((0, 0)), np.array([[2.0]]))
    return sut.QuadraticScm(
        dag=Dag.chain(2), noise_vars=(1.0, 1.0), forms=forms
    )


class TestInterventionSpec:
    def test_hard_with_scale(self) -> None:
        with pytest.raises(ValueError):
            sut.InterventionSpec(0, sut.InterventionKind.HARD, 1.0, 0.5)

    def test_soft_without_scale(self) -> None:
        with pytest.raises(ValueError):
            sut.InterventionSpec(0, sut.InterventionKind.SOFT, 1.0)

    def test_negative_variance(self) -> None:
        with pytest.raises(ValueError):
            sut.InterventionSpec(0, sut.InterventionKind.HARD, -1.0)


class TestLinearGaussianScm:
    def test_sample_covariance(self, rng) -> None:
        scm = _linear_chain()
        z = scm.sample(200_000, rng)
        np.testing.assert_allclose(
            np.cov(z, rowvar=False), scm.covariance(), atol=0.02
        )

    def test_score_is_precision(self, rng) -> None:
        scm = _linear_chain()
        z = scm.sample(10, rng)
        np.testing.assert_allclose(scm.score(z), -z @ scm.precision())

    def test_single_row(self) -> None:
        scm = _linear_chain()
        point = np.array([0.5, -1.0])
        assert scm.score(point).shape == (2,)
        assert isinstance(scm.log_density(point), float)

    def test_weights_outside_graph(self) -> None:
        with pytest.raises(ValueError):
            sut.LinearGaussianScm(
                dag=Dag.empty(2),
                noise_vars=(1.0, 1.0),
                weights=np.ones((2, 2)),
            )

    def test_log_density_matches_gaussian(self) -> None:
        scm = _linear_chain()
        point = np.array([0.3, 0.1])
        cov = scm.covariance()
        want = -0.5 * (
            np.log(np.linalg.det(2 * np.pi * cov))
            + point @ np.linalg.solve(cov, point)
        )
        assert scm.log_density(point) == pytest.approx(want)


class TestQuadraticScm:
    def test_score(self) -> None:
        scm = _quadratic_chain()
        z = np.array([[1.0, 3.0]])
        # z1 = sqrt(2) |z0| + n1
        residual = 3.0 - np.sqrt(2.0)
        want = [-1.0 + residual * np.sqrt(2.0), -residual]
        np.testing.assert_allclose(scm.score(z)[0], want)

    def test_score_undefined_at_zero_parents(self) -> None:
        scm = _quadratic_chain()
        with pytest.raises(sut.DomainError):
            scm.score(np.array([0.0, 1.0]))

    def test_form_must_be_positive_definite(self) -> None:
        with pytest.raises(ValueError):
            sut.QuadraticScm(
                dag=Dag.chain(2),
                noise_vars=(1.0, 1.0),
                forms=(np.zeros((0, 0)), np.array([[-1.0]])),
            )


class TestApply:
    def test_hard_removes_parent_dependence(self, rng) -> None:
        scm = _linear_chain()
        spec = sut.InterventionSpec(1, sut.InterventionKind.HARD, 2.0)
        env = scm.apply(spec)
        assert env.interventions == (spec,)
        assert not scm.interventions
        z = env.sample(100_000, rng)
        assert abs(np.corrcoef(z, rowvar=False)[0, 1]) < 0.02

    def test_idempotent_per_target(self) -> None:
        scm = _linear_chain()
        first = sut.InterventionSpec(1, sut.InterventionKind.HARD, 2.0)
        second = sut.InterventionSpec(1, sut.InterventionKind.HARD, 3.0)
        env = scm.apply(first).apply(second)
        assert env.interventions == (second,)
        assert env.same_model(scm.apply(second))

    def test_invalid_target(self) -> None:
        spec = sut.InterventionSpec(5, sut.InterventionKind.HARD, 2.0)
        with pytest.raises(ValueError):
            _linear_chain().apply(spec)

    def test_double_intervention(self) -> None:
        scm = _linear_chain()
        first = sut.InterventionSpec(0, sut.InterventionKind.HARD, 2.0)
        second = sut.InterventionSpec(1, sut.InterventionKind.HARD, 3.0)
        env = sut.double_intervention(scm, first, second)
        assert {s.target for s in env.interventions} == {0, 1}
        with pytest.raises(ValueError):
            sut.double_intervention(scm, first, first)


class TestMechanismChange:
    def test_relative_variance(self) -> None:
        scm = _linear_chain()
        change = sut.MechanismChange(sut.InterventionKind.HARD, 0.25)
        spec = change.spec(scm, 1)
        assert spec.variance == pytest.approx(0.125)

    def test_soft_root_uses_root_factor(self) -> None:
        scm = _linear_chain()
        change = sut.MechanismChange(
            sut.InterventionKind.SOFT, 1.0, scale=0.5
        )
        assert change.spec(scm, 0).variance == pytest.approx(0.25)
        assert change.spec(scm, 1).variance == pytest.approx(0.5)


@pytest.mark.parametrize("family", list(sut.ScmFamily))
@pytest.mark.parametrize("kind", list(sut.InterventionKind))
def test_default_changes(family, kind) -> None:
    changes = sut.default_changes(family, kind)
    assert len(changes) == 2
    assert all(c.kind == kind for c in changes)
    assert changes[0].variance_factor != changes[1].variance_factor


class TestBuildEnvironments:
    @pytest.fixture
    def scm(self, rng) -> sut.Scm:
        dag = Dag.chain(3)
        return sut.sample_scm(sut.ScmFamily.LINEAR, dag, rng)

    def test_single_set(self, scm, rng) -> None:
        changes = sut.default_changes(scm.family, sut.InterventionKind.HARD)
        env_set = sut.build_environments(scm, changes[:1], rng)
        targets, alt_targets = env_set.oracle_targets()
        assert sorted(targets) == [0, 1, 2]
        assert alt_targets is None
        assert env_set.labels() == ("obs", "int-0", "int-1", "int-2")
        for m, t in enumerate(targets):
            env = env_set.envs[env_set.env_index(m)]
            assert [s.target for s in env.interventions] == [t]

    def test_coupled(self, scm, rng) -> None:
        changes = sut.default_changes(scm.family, sut.InterventionKind.HARD)
        env_set = sut.build_environments(scm, changes, rng)
        targets, alt_targets = env_set.oracle_targets()
        assert targets == alt_targets
        assert len(env_set.envs) == 7

    def test_uncoupled(self, scm, rng) -> None:
        changes = sut.default_changes(scm.family, sut.InterventionKind.HARD)
        env_set = sut.build_environments(
            scm, changes, rng, sut.Coupling.UNCOUPLED
        )
        _targets, alt_targets = env_set.oracle_targets()
        assert alt_targets is not None
        assert sorted(alt_targets) == [0, 1, 2]

    def test_invalid_count(self, scm, rng) -> None:
        with pytest.raises(ValueError):
            sut.build_environments(scm, [], rng)


class TestAssumptionChecks:
    def test_full_rank_hard(self, rng) -> None:
        scm = _linear_chain()
        changes = sut.default_changes(scm.family, sut.InterventionKind.HARD)
        env_set = sut.build_environments(scm, changes[:1], rng)
        for m in range(2):
            check = sut.check_assumption_full_rank(env_set, m, 2000, rng)
            assert check.passed, check

    def test_rank_two_violated_by_variance_only_change(self, rng) -> None:
        scm = _linear_chain()
        change = sut.MechanismChange(
            sut.InterventionKind.SOFT, 4.0, scale=1.0
        )
        env_set = sut.build_environments(scm, [change], rng)
        m = env_set.oracle_targets()[0].index(1)
        check = sut.check_assumption_rank_two(env_set, m, 500, rng)
        assert check.violations == (0,)
        assert not check.passed
