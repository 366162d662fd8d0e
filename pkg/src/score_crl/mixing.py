"""Latent-to-observed transforms and encoders

All functions accept either a single vector or a matrix with one sample per
row, and return values of matching layout.
"""

from __future__ import annotations

from collections.abc import Callable
import dataclasses
import functools
import logging
from typing import Protocol, Self

import numpy as np

from .common import (
    Array,
    DomainError,
    RankDeficiencyError,
    check_full_column_rank,
    pinv,
    tagged,
)


_logger = logging.getLogger(__name__)


def _rowwise(fn: Callable[..., Array]) -> Callable[..., Array]:
    """Lifts 1D arguments to single-row matrices and back"""

    @functools.wraps(fn)
    def wrapper(self: object, *args: Array) -> Array:
        single = np.ndim(args[0]) == 1
        result = fn(self, *(np.atleast_2d(a) for a in args))
        return result[0] if single else result

    return wrapper


def _freeze_matrix(obj: object, *, tall: bool) -> None:
    """Validates and stores a read-only copy of `obj.matrix`

    Mixing matrices must be tall with full column rank, encoder matrices
    wide (their rank is checked lazily, when the decoder is needed).
    """
    mat = np.array(getattr(obj, "matrix"), dtype=float)
    rows, cols = mat.shape if mat.ndim == 2 else (0, 0)
    if mat.ndim != 2 or (rows < cols if tall else rows > cols):
        raise ValueError(f"Invalid matrix shape: {mat.shape}")
    if tall:
        check_full_column_rank(mat, "Mixing matrix")
    mat.flags.writeable = False
    object.__setattr__(obj, "matrix", mat)


class Mixing(Protocol):
    """Transform `g` from latent to observed space"""

    @property
    def matrix(self) -> Array: ...

    def forward(self, z: Array) -> Array: ...

    def inverse(self, x: Array) -> Array: ...

    def pushforward(self, latent_diff: Array, z: Array) -> Array: ...


class Encoder(Protocol):
    """Candidate inverse `h` of the mixing, carrying its own decoder"""

    @property
    def matrix(self) -> Array: ...

    def encode(self, x: Array) -> Array: ...

    def decode(self, z_hat: Array) -> Array: ...

    def pullback(self, observed_diff: Array, x: Array) -> Array: ...


@dataclasses.dataclass(frozen=True, eq=False)
class LinearMix:
    """Linear transform `X = G Z`"""

    matrix: Array

    def __post_init__(self) -> None:
        _freeze_matrix(self, tall=True)

    @functools.cached_property
    def decoder_pinv(self) -> Array:
        return pinv(self.matrix)

    @_rowwise
    def forward(self, z: Array) -> Array:
        return z @ self.matrix.T

    @_rowwise
    def inverse(self, x: Array) -> Array:
        return x @ self.decoder_pinv.T

    @_rowwise
    def pushforward(self, latent_diff: Array, z: Array) -> Array:
        """Observed score difference `[G^+]^T (s_a - s_b)`"""
        del z
        return latent_diff @ self.decoder_pinv


@dataclasses.dataclass(frozen=True, eq=False)
class TanhGlmMix:
    """Single-layer perceptron `X = tanh(G Z)`"""

    matrix: Array

    def __post_init__(self) -> None:
        _freeze_matrix(self, tall=True)

    @classmethod
    def calibrated(
        cls,
        matrix: Array,
        z: Array,
        saturation: float = 0.999,
        quantile: float = 0.999,
    ) -> Self:
        """Shrinks rows whose pre-activations saturate on typical latents

        Each row is rescaled so that the `quantile` of `|G_i z|` over the
        reference samples does not exceed `arctanh(saturation)`.
        """
        cap = np.arctanh(saturation)
        levels = np.quantile(np.abs(z @ matrix.T), quantile, axis=0)
        factors = np.minimum(1.0, cap / np.maximum(levels, 1e-300))
        if np.any(factors < 1):
            _logger.debug(
                "Rescaled saturating rows. [count=%s, min_factor=%.3g]",
                int(np.sum(factors < 1)),
                float(factors.min()),
            )
        return cls(matrix * factors[:, None])

    @functools.cached_property
    def decoder_pinv(self) -> Array:
        return pinv(self.matrix)

    @_rowwise
    def forward(self, z: Array) -> Array:
        return np.tanh(z @ self.matrix.T)

    @_rowwise
    def inverse(self, x: Array) -> Array:
        return checked_arctanh(x) @ self.decoder_pinv.T

    def jacobian(self, z: Array) -> Array:
        """`diag(1 - tanh^2(G z)) G`, stacked along the first axis for 2D z"""
        weights = 1 - np.tanh(np.atleast_2d(z) @ self.matrix.T) ** 2
        jac = weights[:, :, None] * self.matrix[None, :, :]
        return jac[0] if np.ndim(z) == 1 else jac

    @_rowwise
    def pushforward(self, latent_diff: Array, z: Array) -> Array:
        """Observed score difference `[J^+]^T (s_a - s_b)` with `J = W G`

        Since `J` has full column rank, `[J^+]^T = J (J^T J)^-1`.
        """
        weights = 1 - np.tanh(z @ self.matrix.T) ** 2
        gram = np.einsum(
            "sd,di,dj->sij", weights**2, self.matrix, self.matrix
        )
        eigvals = np.linalg.eigvalsh(gram)
        if np.any(eigvals[:, 0] <= 1e-20 * eigvals[:, -1]):
            raise RankDeficiencyError("Mixing Jacobian is rank-deficient")
        solved = np.linalg.solve(gram, latent_diff[:, :, None])[:, :, 0]
        return weights * (solved @ self.matrix.T)


def checked_arctanh(x: Array) -> Array:
    if np.any(np.abs(x) >= 1):
        raise DomainError("Observation outside of (-1, 1)")
    return np.arctanh(x)


def sample_mixing(
    n: int, d: int, rng: np.random.Generator, min_singular: float = 1e-6
) -> LinearMix:
    """Samples a standard normal `d x n` matrix with full column rank"""
    if d < n:
        raise ValueError(f"Observed dimension {d} below latent dimension {n}")
    while True:
        mat = rng.standard_normal((d, n))
        if np.linalg.svd(mat, compute_uv=False)[-1] > min_singular:
            return LinearMix(mat)
        _logger.debug("Resampling rank-deficient mixing. [n=%s, d=%s]", n, d)


def sample_tanh_mixing(
    n: int, d: int, rng: np.random.Generator, z_reference: Array
) -> TanhGlmMix:
    return TanhGlmMix.calibrated(sample_mixing(n, d, rng).matrix, z_reference)


@dataclasses.dataclass(frozen=True, eq=False)
class LinearEncoder:
    """Linear encoder `Z_hat = H X` with decoder `H^+`"""

    matrix: Array

    def __post_init__(self) -> None:
        _freeze_matrix(self, tall=False)

    @functools.cached_property
    def decoder_pinv(self) -> Array:
        check_full_column_rank(self.matrix.T, "Encoder")
        return pinv(self.matrix)

    @_rowwise
    def encode(self, x: Array) -> Array:
        return x @ self.matrix.T

    @_rowwise
    def decode(self, z_hat: Array) -> Array:
        return z_hat @ self.decoder_pinv.T

    @_rowwise
    def pullback(self, observed_diff: Array, x: Array) -> Array:
        """Latent score difference `[H^+]^T d` of `Z_hat`"""
        del x
        return observed_diff @ self.decoder_pinv


@dataclasses.dataclass(frozen=True, eq=False)
class TanhGlmEncoder:
    """Encoder `Z_hat = H arctanh(X)` with decoder `tanh(H^+ Z_hat)`"""

    matrix: Array

    def __post_init__(self) -> None:
        _freeze_matrix(self, tall=False)

    @functools.cached_property
    def decoder_pinv(self) -> Array:
        check_full_column_rank(self.matrix.T, "Encoder")
        return pinv(self.matrix)

    @_rowwise
    def encode(self, x: Array) -> Array:
        return checked_arctanh(x) @ self.matrix.T

    @_rowwise
    def decode(self, z_hat: Array) -> Array:
        return np.tanh(z_hat @ self.decoder_pinv.T)

    @_rowwise
    def pullback(self, observed_diff: Array, x: Array) -> Array:
        """`[J_dec(z_hat)]^T d` with `J_dec = diag(1 - x_hat^2) H^+`"""
        x_hat = self.decode(self.encode(x))
        return ((1 - x_hat**2) * observed_diff) @ self.decoder_pinv


def score_diff_pushforward(
    mix: Mixing, latent_diff: Array, z: Array
) -> Array:
    return mix.pushforward(latent_diff, z)


def score_diff_pullback(
    encoder: Encoder, observed_diff: Array, x: Array
) -> Array:
    return encoder.pullback(observed_diff, x)


def true_encoder(mix: Mixing) -> LinearEncoder | TanhGlmEncoder:
    """Exact inverse of the mixing, restricted to its image"""
    match mix:
        case LinearMix():
            return LinearEncoder(mix.decoder_pinv)
        case TanhGlmMix():
            return TanhGlmEncoder(mix.decoder_pinv)
        case _:
            raise TypeError(tagged("Unsupported mixing", type=type(mix)))
