import numpy as np
import pytest

from score_crl.common import RankDeficiencyError
from score_crl.experiments import parse_config, run_graph
from score_crl.graph import Dag
from score_crl.lscalei import mean_pulled_back, threshold_graph
from score_crl.mixing import TanhGlmEncoder, sample_tanh_mixing
from score_crl.scm import (
    Coupling,
    InterventionKind,
    ScmFamily,
    build_environments,
    default_changes,
    sample_scm,
)
from score_crl.scores import OracleProvider
import score_crl.gscalei as sut


class _Instance:
    def __init__(
        self,
        rng: np.random.Generator,
        coupling: Coupling = Coupling.COUPLED,
        n_s: int = 100,
    ) -> None:
        self.dag = Dag.chain(2)
        scm = sample_scm(ScmFamily.QUADRATIC, self.dag, rng)
        changes = default_changes(scm.family, InterventionKind.HARD)
        self.env_set = build_environments(scm, changes, rng, coupling)
        z = scm.sample(n_s, rng)
        self.mix = sample_tanh_mixing(2, 4, rng, z)
        provider = OracleProvider(self.env_set, self.mix, self.mix.forward(z))
        self.pairs = [(1, 3), (2, 4)]
        self.obs_pairs = [(0, 1), (0, 2)]
        self.dataset = provider.dataset(
            [*self.pairs, *((m, 0) for m in range(1, 5))]
        )

    @property
    def targets(self) -> tuple[int, ...]:
        return self.env_set.oracle_targets()[0]

    def ideal(self) -> np.ndarray:
        return sut.ideal_encoder(
            self.mix.decoder_pinv, self.dataset, self.pairs, self.targets
        )


_FAST = sut.GscaleConfig(steps=20, trace_every=5)


class TestGscaleConfig:
    def test_step_count(self) -> None:
        assert sut.GscaleConfig().step_count(5) == 30_000
        assert sut.GscaleConfig().step_count(6) == 40_000
        assert sut.GscaleConfig(steps=7).step_count(6) == 7

    @pytest.mark.parametrize(
        "kwargs",
        [
            {"reconstruction_weight": 0.0},
            {"smoothing": 0.0},
            {"steps": 0},
            {"learning_rate": -1.0},
            {"decay": 1.0},
            {"patience": 0},
            {"workers": 0},
        ],
    )
    def test_invalid(self, kwargs) -> None:
        with pytest.raises(ValueError):
            sut.GscaleConfig(**kwargs)


def test_initial_encoder_whitens(rng) -> None:
    x = np.tanh(rng.standard_normal((200, 2)) @ rng.standard_normal((2, 4)))
    H = sut.initial_encoder(x, 2)
    z_hat = np.arctanh(x) @ H.T
    np.testing.assert_allclose(z_hat.T @ z_hat / 200, np.eye(2), atol=1e-8)


class TestLoss:
    def test_ideal_encoder_is_global_minimum(self, rng) -> None:
        instance = _Instance(rng)
        ideal = instance.ideal()
        changes = sut.compute_Dt(ideal, instance.dataset, instance.pairs)
        np.testing.assert_allclose(changes, np.eye(2), atol=1e-8)
        for norm in sut.LossNorm:
            config = sut.GscaleConfig(loss_norm=norm)
            loss = sut.loss_value(
                ideal, instance.dataset, instance.pairs, config
            )
            assert loss.total < 1e-10

    def test_gradient_matches_finite_differences(self, rng) -> None:
        instance = _Instance(rng, n_s=30)
        config = sut.GscaleConfig(smoothing=0.1)
        H = instance.ideal() + 0.1 * rng.standard_normal((2, 4))
        _value, grad = sut.loss_gradient(
            H, instance.dataset, instance.pairs, config
        )
        numeric = np.zeros_like(H)
        step = 1e-6
        for i in range(2):
            for j in range(4):
                delta = np.zeros_like(H)
                delta[i, j] = step
                upper, lower = (
                    sut.loss_value(
                        H + s * delta,
                        instance.dataset,
                        instance.pairs,
                        config,
                        exact=False,
                    ).total
                    for s in (1, -1)
                )
                numeric[i, j] = (upper - lower) / (2 * step)
        np.testing.assert_allclose(grad, numeric, rtol=1e-4, atol=1e-7)

    def test_rank_deficient_encoder(self, rng) -> None:
        instance = _Instance(rng)
        with pytest.raises(RankDeficiencyError):
            sut.compute_Dt(np.ones((2, 4)), instance.dataset, instance.pairs)


class TestFitCoupled:
    def test_short_run(self, rng) -> None:
        instance = _Instance(rng)
        estimate, result = sut.fit_coupled(
            instance.dataset, instance.pairs, _FAST, rng
        )
        assert estimate.mode == "gscalei"
        assert estimate.graph == Dag.empty(2)
        assert estimate.z_hat.shape == (100, 2)
        assert result.steps == 20
        assert [p.step for p in result.trace] == [5, 10, 15, 20]
        assert np.isfinite(result.loss.total)

    def test_ideal_start_stays_optimal(self, rng) -> None:
        instance = _Instance(rng)
        config = sut.GscaleConfig(steps=5, learning_rate=1e-9)
        estimate, result = sut.fit_coupled(
            instance.dataset, instance.pairs, config, rng, instance.ideal()
        )
        assert result.loss.total < 1e-6
        assert estimate.loss == result.loss.total


def test_stage_g2_graph_with_ideal_encoder(rng) -> None:
    instance = _Instance(rng)
    graph = sut.stage_g2_graph(
        instance.ideal(), instance.dataset, instance.obs_pairs, 1e-6
    )
    mapping = [instance.targets.index(t) for t in range(2)]
    assert graph == instance.dag.relabeled(mapping)


class TestCouplingConstraints:
    def test_consistent(self) -> None:
        changes = np.array([[1.0, 0.5], [0.0, 1.0]])
        alt = changes[:, [1, 0]]
        assert sut.coupling_constraints_hold(changes, alt, (1, 0), 0.1)
        assert not sut.coupling_constraints_hold(changes, alt, (0, 1), 0.1)

    def test_two_cycle(self) -> None:
        changes = np.array([[1.0, 0.5], [0.5, 1.0]])
        assert not sut.coupling_constraints_hold(changes, changes, (0, 1), 0.1)


class TestFitUncoupled:
    def test_too_many_nodes(self, rng) -> None:
        instance = _Instance(rng, Coupling.UNCOUPLED)
        with pytest.raises(ValueError):
            sut.fit_uncoupled(instance.dataset, 8, _FAST, 0.5, rng)

    def test_selects_feasible_coupling(self, monkeypatch, rng) -> None:
        instance = _Instance(rng, Coupling.UNCOUPLED)
        monkeypatch.setattr(
            sut,
            "coupling_constraints_hold",
            lambda _c, _a, coupling, _t: coupling == (1, 0),
        )
        estimate, coupling = sut.fit_uncoupled(
            instance.dataset, 2, _FAST, 0.5, rng
        )
        assert coupling == (1, 0)
        assert estimate.graph.n == 2

    def test_infeasible(self, monkeypatch, rng) -> None:
        instance = _Instance(rng, Coupling.UNCOUPLED)
        monkeypatch.setattr(
            sut, "coupling_constraints_hold", lambda *_args: False
        )
        with pytest.raises(sut.InfeasibleCouplingError) as info:
            sut.fit_uncoupled(instance.dataset, 2, _FAST, 0.5, rng)
        assert np.isfinite(info.value.best_loss)


def test_partial_identify_node(rng) -> None:
    instance = _Instance(rng)
    result = sut.partial_identify_node(
        instance.dataset,
        instance.pairs[0],
        2,
        0,
        _FAST,
        rng,
        mixing_matrix=instance.mix.matrix,
    )
    assert result.row.shape == (4,)
    assert result.support
    assert np.isfinite(result.loss)


def test_stage_g2_graph_matches_mean_pullback_off_ideal(rng) -> None:
    instance = _Instance(rng)
    H = instance.ideal() + 0.3 * rng.standard_normal((2, 4))
    changes = sut.compute_Dt(H, instance.dataset, instance.obs_pairs)
    encoder = TanhGlmEncoder(H)
    np.testing.assert_allclose(
        changes,
        mean_pulled_back(encoder, instance.dataset, instance.obs_pairs),
        rtol=1e-10,
        atol=1e-12,
    )
    threshold = float(np.median(changes))
    graph = sut.stage_g2_graph(
        H, instance.dataset, instance.obs_pairs, threshold
    )
    assert graph == threshold_graph(changes, threshold)


@pytest.mark.parametrize(
    "n,coupling",
    [
        (2, Coupling.COUPLED),
        (3, Coupling.COUPLED),
        (2, Coupling.UNCOUPLED),
    ],
)
def test_recovers_quadratic_latents(n, coupling) -> None:
    config = parse_config(
        {
            "n": n,
            "family": "quadratic",
            "algorithm": "gscalei",
            "interventions": {"environments": 2, "coupling": coupling.value},
            "n_graphs": 1,
        }
    )
    record = run_graph(config, 0).record
    assert record.report.mcc >= 0.98
    assert record.report.shd == 0
    if coupling == Coupling.UNCOUPLED:
        assert record.coupling_ok is True
    else:
        assert record.coupling_ok is None
