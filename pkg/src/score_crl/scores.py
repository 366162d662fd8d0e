"""Observed-space score difference providers"""

from __future__ import annotations

from collections.abc import Iterable, Mapping, Sequence
import dataclasses
import enum
import logging
from pathlib import Path
from typing import Self

import numpy as np

from .common import Array, RankDeficiencyError, pinv, tagged
from .mixing import Mixing
from .records import DatasetManifest, PairFile, record_decoders, record_encoder
from .scm import EnvironmentSet


_logger = logging.getLogger(__name__)


type EnvPair = tuple[int, int]


class ScoreMode(enum.StrEnum):
    """Source of score differences"""

    ORACLE = "oracle"
    GAUSSIAN = "gaussian"
    NOISY = "noisy"


@dataclasses.dataclass(frozen=True, eq=False)
class ScoreDiffDataset:
    """Score differences `s^a - s^b` evaluated at observational samples"""

    x: Array
    diffs: Mapping[EnvPair, Array]
    labels: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        for pair, diff in self.diffs.items():
            if diff.shape[0] != self.x.shape[0]:
                raise ValueError(tagged("Row count mismatch", pair=pair))
            if not np.all(np.isfinite(diff)):
                raise ValueError(tagged("Non-finite differences", pair=pair))

    @property
    def n_s(self) -> int:
        return self.x.shape[0]

    def pair(self, a: int, b: int) -> Array:
        """Differences for `(a, b)`

        Missing pairs are derived from `(b, a)` or from both environments'
        differences against the observational environment `0`.
        """
        if (a, b) in self.diffs:
            return self.diffs[a, b]
        if (b, a) in self.diffs:
            return -self.diffs[b, a]
        if a == b:
            return np.zeros_like(self.x)
        if (a, 0) in self.diffs and (b, 0) in self.diffs:
            return self.diffs[a, 0] - self.diffs[b, 0]
        raise KeyError(f"Missing environment pair: {(a, b)}")

    def projected(self, basis: Array) -> ScoreDiffDataset:
        """Re-expresses samples and differences in an orthonormal basis"""
        return ScoreDiffDataset(
            x=self.x @ basis,
            diffs={p: d @ basis for p, d in self.diffs.items()},
            labels=self.labels,
        )

    def dump(self, folder: Path) -> Path:
        """Writes one binary file per pair plus a JSON manifest"""
        folder.mkdir(parents=True, exist_ok=True)
        _write_matrix(folder / "x.bin", self.x)
        files = []
        for (a, b), diff in sorted(self.diffs.items()):
            name = f"{a}-{b}.bin"
            _write_matrix(folder / name, diff)
            files.append(PairFile(a=a, b=b, path=name))
        manifest = DatasetManifest(
            labels=self.labels,
            n_s=self.n_s,
            d=self.x.shape[1],
            x_path="x.bin",
            pairs=tuple(files),
        )
        path = folder / "manifest.json"
        path.write_bytes(record_encoder().encode(manifest))
        _logger.debug("Dumped score differences. [path=%s]", folder)
        return path

    @classmethod
    def load(cls, folder: Path) -> Self:
        decoder = record_decoders()["DatasetManifest"]
        manifest = decoder.decode((folder / "manifest.json").read_bytes())
        shape = (manifest.n_s, manifest.d)
        return cls(
            x=_read_matrix(folder / manifest.x_path, shape, manifest.dtype),
            diffs={
                (p.a, p.b): _read_matrix(
                    folder / p.path, shape, manifest.dtype
                )
                for p in manifest.pairs
            },
            labels=manifest.labels,
        )


def _write_matrix(path: Path, mat: Array) -> None:
    np.ascontiguousarray(mat, dtype="<f8").tofile(path)


def _read_matrix(path: Path, shape: tuple[int, int], dtype: str) -> Array:
    return np.fromfile(path, dtype=dtype).reshape(shape)


class ScoreDiffProvider:
    """Evaluates observed score differences at the observational samples"""

    def __init__(self, x: Array, labels: Sequence[str] = ()) -> None:
        self.x = x
        self.labels = tuple(labels)

    def score_diff(self, a: int, b: int) -> Array:  # pragma: no cover
        raise NotImplementedError()

    def dataset(self, pairs: Iterable[EnvPair]) -> ScoreDiffDataset:
        diffs = {(a, b): self.score_diff(a, b) for a, b in pairs}
        return ScoreDiffDataset(self.x, diffs, self.labels)


class OracleProvider(ScoreDiffProvider):
    """Exact observed score differences from the ground truth model"""

    def __init__(
        self, env_set: EnvironmentSet, mix: Mixing, x: Array
    ) -> None:
        super().__init__(x, env_set.labels())
        self._env_set = env_set
        self._mix = mix
        self._z = mix.inverse(x)

    def observed_score(self, env: int) -> Array:
        latent = self._env_set.envs[env].score(self._z)
        return self._mix.pushforward(latent, self._z)

    def score_diff(self, a: int, b: int) -> Array:
        if a == b:
            return np.zeros_like(self.x)
        envs = self._env_set.envs
        latent = envs[a].score(self._z) - envs[b].score(self._z)
        return self._mix.pushforward(latent, self._z)


def oracle_score_diff(
    env_set: EnvironmentSet, mix: Mixing, pair: EnvPair, x: Array
) -> Array:
    return OracleProvider(env_set, mix, x).score_diff(*pair)


class NoisyOracleProvider(ScoreDiffProvider):
    """Oracle scores multiplied elementwise by `1 + xi`, `xi ~ N(0, var)`

    Noise is redrawn at every evaluation and differences are formed after
    perturbation. Signal and noise energies are accumulated for SNR reports.
    """

    def __init__(
        self, oracle: OracleProvider, variance: float, rng: np.random.Generator
    ) -> None:
        if variance < 0:
            raise ValueError(f"Invalid noise variance: {variance}")
        super().__init__(oracle.x, oracle.labels)
        self._oracle = oracle
        self._std = np.sqrt(variance)
        self._rng = rng
        self._signal = 0.0
        self._noise = 0.0

    def _perturbed(self, env: int) -> Array:
        score = self._oracle.observed_score(env)
        noise = score * self._rng.standard_normal(score.shape) * self._std
        self._signal += float(np.sum(score**2))
        self._noise += float(np.sum(noise**2))
        return score + noise

    def score_diff(self, a: int, b: int) -> Array:
        return self._perturbed(a) - self._perturbed(b)

    def snr_db(self) -> float:
        return snr_db(self._signal, self._noise)


def noisy_score_diff(
    scores_a: Array, scores_b: Array, variance: float, rng: np.random.Generator
) -> Array:
    """Perturbs two score evaluations independently, then differences them"""
    std = np.sqrt(variance)
    perturbed_a = scores_a * (1 + std * rng.standard_normal(scores_a.shape))
    perturbed_b = scores_b * (1 + std * rng.standard_normal(scores_b.shape))
    return perturbed_a - perturbed_b


def snr_db(signal: float, noise: float) -> float:
    """`10 log10(E|s|^2 / E|s xi|^2)`, infinite without noise"""
    if noise == 0:
        return float("inf")
    return float(10 * np.log10(signal / noise))


class GaussianProvider(ScoreDiffProvider):
    """Scores of Gaussian fits `-Theta_e x` to each environment's samples"""

    def __init__(
        self,
        x: Array,
        env_samples: Sequence[Array],
        labels: Sequence[str] = (),
    ) -> None:
        super().__init__(x, labels)
        dim = x.shape[1]
        precisions = []
        for env, samples in enumerate(env_samples):
            if samples.shape[0] <= dim:
                raise ValueError(
                    tagged("Too few samples", env=env, count=len(samples))
                )
            precisions.append(pinv(np.cov(samples, rowvar=False)))
        self._precisions = precisions

    def score_diff(self, a: int, b: int) -> Array:
        return -self.x @ (self._precisions[a] - self._precisions[b])


def gaussian_score_diff(
    pair: EnvPair, x: Array, env_samples: Sequence[Array]
) -> Array:
    return GaussianProvider(x, env_samples).score_diff(*pair)


@dataclasses.dataclass(frozen=True, eq=False)
class ReducedData:
    dataset: ScoreDiffDataset
    basis: Array

    def reduce(self, samples: Array) -> Array:
        return samples @ self.basis


def reduction_basis(x: Array, n: int) -> Array:
    """Orthonormal `d x n` basis of the top-`n` sample covariance space"""
    if x.shape[0] < n:
        raise ValueError(tagged("Too few samples", count=x.shape[0], n=n))
    eigvals, eigvecs = np.linalg.eigh(np.cov(x, rowvar=False, bias=True))
    order = np.argsort(eigvals)[::-1][:n]
    if eigvals[order[-1]] <= 1e-10 * eigvals[order[0]]:
        raise RankDeficiencyError(
            tagged("Sample covariance rank below latent dimension", n=n)
        )
    basis = eigvecs[:, order]
    signs = np.sign(basis[np.abs(basis).argmax(axis=0), np.arange(n)])
    return basis * signs


def reduce_dimension(dataset: ScoreDiffDataset, n: int) -> ReducedData:
    basis = reduction_basis(dataset.x, n)
    _logger.debug(
        "Reduced dimension. [d=%s, n=%s]", dataset.x.shape[1], basis.shape[1]
    )
    return ReducedData(dataset.projected(basis), basis)


def extrapolate_score_diff(d1: Array, d2: Array) -> Array:
    """Score difference of the joint intervention on both targets"""
    if d1.shape != d2.shape:
        raise ValueError(f"Shape mismatch: {d1.shape} != {d2.shape}")
    return d1 + d2
