import numpy as np
import pytest

import score_crl.mixing as sut


@pytest.fixture
def z(rng) -> np.ndarray:
    return rng.standard_normal((40, 3))


class TestLinearMix:
    def test_round_trip(self, rng, z) -> None:
        mix = sut.sample_mixing(3, 6, rng)
        np.testing.assert_allclose(mix.inverse(mix.forward(z)), z)

    def test_single_row(self, rng, z) -> None:
        mix = sut.sample_mixing(3, 6, rng)
        assert mix.forward(z[0]).shape == (6,)

    def test_pushforward_pulls_back(self, rng, z) -> None:
        mix = sut.sample_mixing(3, 5, rng)
        latent = rng.standard_normal(z.shape)
        observed = sut.score_diff_pushforward(mix, latent, z)
        np.testing.assert_allclose(observed @ mix.matrix, latent, atol=1e-10)

    def test_rejects_wide_matrix(self) -> None:
        with pytest.raises(ValueError):
            sut.LinearMix(np.ones((2, 3)))

    def test_rejects_rank_deficient(self) -> None:
        with pytest.raises(sut.RankDeficiencyError):
            sut.LinearMix(np.ones((4, 2)))

    def test_matrix_is_read_only(self, rng) -> None:
        mix = sut.sample_mixing(2, 3, rng)
        with pytest.raises(ValueError):
            mix.matrix[0, 0] = 1

    def test_sample_invalid_dimension(self, rng) -> None:
        with pytest.raises(ValueError):
            sut.sample_mixing(3, 2, rng)


class TestTanhGlmMix:
    def test_round_trip(self, rng, z) -> None:
        mix = sut.sample_tanh_mixing(3, 5, rng, z)
        x = mix.forward(z)
        assert np.all(np.abs(x) < 1)
        np.testing.assert_allclose(mix.inverse(x), z, atol=1e-8)

    def test_calibration_limits_saturation(self, rng, z) -> None:
        matrix = 100 * rng.standard_normal((5, 3))
        mix = sut.TanhGlmMix.calibrated(matrix, z)
        levels = np.quantile(np.abs(z @ mix.matrix.T), 0.999, axis=0)
        assert np.all(levels <= np.arctanh(0.999) + 1e-9)

    def test_jacobian_matches_finite_differences(self, rng, z) -> None:
        mix = sut.sample_tanh_mixing(3, 4, rng, z)
        point = z[0]
        step = 1e-6
        numeric = np.column_stack(
            [
                (mix.forward(point + step * e) - mix.forward(point - step * e))
                / (2 * step)
                for e in np.eye(3)
            ]
        )
        np.testing.assert_allclose(mix.jacobian(point), numeric, atol=1e-6)
        assert mix.jacobian(z).shape == (40, 4, 3)

    def test_pushforward_pulls_back(self, rng, z) -> None:
        mix = sut.sample_tanh_mixing(3, 5, rng, z)
        latent = rng.standard_normal(z.shape)
        observed = mix.pushforward(latent, z)
        pulled = np.einsum("sd,sdi->si", observed, mix.jacobian(z))
        np.testing.assert_allclose(pulled, latent, atol=1e-6)

    def test_inverse_outside_domain(self, rng, z) -> None:
        mix = sut.sample_tanh_mixing(3, 5, rng, z)
        with pytest.raises(sut.DomainError):
            mix.inverse(np.ones(5))


class TestEncoders:
    def test_linear_true_encoder(self, rng, z) -> None:
        mix = sut.sample_mixing(3, 5, rng)
        encoder = sut.true_encoder(mix)
        assert isinstance(encoder, sut.LinearEncoder)
        x = mix.forward(z)
        np.testing.assert_allclose(encoder.encode(x), z, atol=1e-10)
        np.testing.assert_allclose(encoder.decode(z), x, atol=1e-10)

    def test_linear_pullback_inverts_pushforward(self, rng, z) -> None:
        mix = sut.sample_mixing(3, 5, rng)
        encoder = sut.true_encoder(mix)
        latent = rng.standard_normal(z.shape)
        observed = mix.pushforward(latent, z)
        pulled = sut.score_diff_pullback(encoder, observed, mix.forward(z))
        np.testing.assert_allclose(pulled, latent, atol=1e-10)

    def test_tanh_pullback_inverts_pushforward(self, rng, z) -> None:
        mix = sut.sample_tanh_mixing(3, 5, rng, z)
        encoder = sut.true_encoder(mix)
        assert isinstance(encoder, sut.TanhGlmEncoder)
        latent = rng.standard_normal(z.shape)
        x = mix.forward(z)
        pulled = encoder.pullback(mix.pushforward(latent, z), x)
        np.testing.assert_allclose(pulled, latent, atol=1e-6)

    def test_rank_deficient_encoder(self) -> None:
        encoder = sut.LinearEncoder(np.ones((2, 3)))
        with pytest.raises(sut.RankDeficiencyError):
            encoder.decode(np.zeros(2))

    def test_unsupported_mixing(self) -> None:
        with pytest.raises(TypeError):
            sut.true_encoder(object())
