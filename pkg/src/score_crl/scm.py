"""Latent structural causal models and interventional environments"""

from __future__ import annotations

from collections.abc import Sequence
import dataclasses
import enum
import logging
import math
from typing import Self

import numpy as np

from .common import (
    Array,
    DomainError,
    UnreachableError,
    random_permutation,
    tagged,
)
from .graph import Dag


_logger = logging.getLogger(__name__)


class ScmFamily(enum.StrEnum):
    """Supported latent mechanism families"""

    LINEAR = "linear"
    QUADRATIC = "quadratic"


class InterventionKind(enum.StrEnum):
    """Hard interventions drop parent dependence, soft ones keep it"""

    HARD = "hard"
    SOFT = "soft"


class Coupling(enum.StrEnum):
    """Whether the two interventional environment sets are paired"""

    COUPLED = "coupled"
    UNCOUPLED = "uncoupled"


@dataclasses.dataclass(frozen=True)
class InterventionSpec:
    """Atomic intervention replacing a single node's mechanism

    The node's mechanism becomes `scale * f(z_pa) + N` with `N` centered
    Gaussian of the given (absolute) variance. Hard interventions have a
    zero scale.
    """

    target: int
    kind: InterventionKind
    variance: float
    scale: float = 0.0

    def __post_init__(self) -> None:
        if self.variance <= 0:
            raise ValueError(f"Invalid noise variance: {self.variance}")
        if self.kind == InterventionKind.HARD and self.scale != 0:
            raise ValueError("Hard interventions cannot keep parents")
        if self.kind == InterventionKind.SOFT and self.scale == 0:
            raise ValueError("Soft interventions must keep parents")


@dataclasses.dataclass(frozen=True)
class Mechanism:
    """Per-node mechanism scaling and noise variance"""

    scale: float
    variance: float


@dataclasses.dataclass(frozen=True, eq=False, kw_only=True)
class Scm:
    """Additive Gaussian noise model `Z_i = c_i * f_i(Z_Pa(i)) + N_i`

    Subclasses provide the parent functions `f_i` and their gradients, this
    class handles ancestral sampling, densities, scores and interventions.
    """

    dag: Dag
    noise_vars: tuple[float, ...]
    mechanisms: tuple[Mechanism, ...] = ()
    interventions: tuple[InterventionSpec, ...] = ()

    def __post_init__(self) -> None:
        if len(self.noise_vars) != self.dag.n:
            raise ValueError("Noise variance count mismatch")
        if any(v <= 0 for v in self.noise_vars):
            raise ValueError("Noise variances must be positive")
        if not self.mechanisms:
            mechanisms = tuple(Mechanism(1.0, v) for v in self.noise_vars)
            object.__setattr__(self, "mechanisms", mechanisms)

    @property
    def n(self) -> int:
        return self.dag.n

    @property
    def family(self) -> ScmFamily:
        raise NotImplementedError()

    @property
    def scales(self) -> Array:
        return np.array([m.scale for m in self.mechanisms])

    @property
    def variances(self) -> Array:
        return np.array([m.variance for m in self.mechanisms])

    def parent_function(self, i: int, z: Array) -> Array:
        """Unscaled `f_i` evaluated on each row of `z`"""
        raise NotImplementedError()

    def parent_gradient(self, i: int, z: Array) -> Array:
        """Gradient of `f_i` w.r.t. `z_Pa(i)`, one row per sample"""
        raise NotImplementedError()

    def is_observational(self) -> bool:
        return not self.interventions

    def sample(self, n_s: int, rng: np.random.Generator) -> Array:
        """Ancestral sampling, returns an `n_s x n` matrix"""
        if n_s < 1:
            raise ValueError(f"Invalid sample count: {n_s}")
        z = np.zeros((n_s, self.n))
        noise = rng.standard_normal((n_s, self.n))
        for i in self.dag.causal_order():
            mech = self.mechanisms[i]
            z[:, i] = math.sqrt(mech.variance) * noise[:, i]
            if mech.scale and self.dag.parents(i):
                z[:, i] += mech.scale * self.parent_function(i, z)
        return z

    def noise(self, z: Array) -> Array:
        """Residuals `z_i - c_i * f_i(z_Pa(i))`"""
        z = np.atleast_2d(z)
        res = z.copy()
        for i, mech in enumerate(self.mechanisms):
            if mech.scale and self.dag.parents(i):
                res[:, i] -= mech.scale * self.parent_function(i, z)
        return res

    def score(self, z: Array) -> Array:
        """Exact score `grad_z log p(z)`, row-wise for 2D inputs"""
        single = np.ndim(z) == 1
        z = np.atleast_2d(np.asarray(z, dtype=float))
        residual = self.noise(z) / self.variances
        score = -residual
        for j, mech in enumerate(self.mechanisms):
            parents = self.dag.parents(j)
            if not mech.scale or not parents:
                continue
            grad = self.parent_gradient(j, z)
            score[:, list(parents)] += mech.scale * residual[:, [j]] * grad
        return score[0] if single else score

    def log_density(self, z: Array) -> Array | float:
        single = np.ndim(z) == 1
        z = np.atleast_2d(np.asarray(z, dtype=float))
        variances = self.variances
        self._check_domain(z)
        terms = -0.5 * (
            np.log(2 * np.pi * variances) + self.noise(z) ** 2 / variances
        )
        total = terms.sum(axis=1)
        return float(total[0]) if single else total

    def _check_domain(self, z: Array) -> None:
        pass

    def apply(self, spec: InterventionSpec) -> Self:
        if not 0 <= spec.target < self.n:
            raise ValueError(f"Invalid intervention target: {spec.target}")
        mechanisms = list(self.mechanisms)
        mechanisms[spec.target] = Mechanism(spec.scale, spec.variance)
        interventions = tuple(
            s for s in self.interventions if s.target != spec.target
        )
        return dataclasses.replace(
            self,
            mechanisms=tuple(mechanisms),
            interventions=(*interventions, spec),
        )

    def same_model(self, other: Scm) -> bool:
        return (
            type(self) is type(other)
            and self.dag == other.dag
            and self.mechanisms == other.mechanisms
            and self._parameters_equal(other)
        )

    def _parameters_equal(self, other: Scm) -> bool:
        raise NotImplementedError()


@dataclasses.dataclass(frozen=True, eq=False, kw_only=True)
class LinearGaussianScm(Scm):
    """Linear Gaussian model `Z = A Z + N`"""

    weights: Array = dataclasses.field(default_factory=lambda: np.zeros(0))

    def __post_init__(self) -> None:
        super().__post_init__()
        weights = np.asarray(self.weights, dtype=float)
        if weights.shape != (self.n, self.n):
            raise ValueError(f"Invalid weight shape: {weights.shape}")
        if np.any((weights != 0) & ~self.dag.adjacency):
            raise ValueError("Weights outside of the graph's edges")
        weights.flags.writeable = False
        object.__setattr__(self, "weights", weights)

    @property
    def family(self) -> ScmFamily:
        return ScmFamily.LINEAR

    def parent_function(self, i: int, z: Array) -> Array:
        parents = list(self.dag.parents(i))
        return z[:, parents] @ self.weights[i, parents]

    def parent_gradient(self, i: int, z: Array) -> Array:
        parents = list(self.dag.parents(i))
        shape = (len(z), len(parents))
        return np.broadcast_to(self.weights[i, parents], shape)

    def effective_weights(self) -> Array:
        return self.scales[:, None] * self.weights

    def covariance(self) -> Array:
        """`(I - A)^-1 diag(var) (I - A)^-T` for the current mechanisms"""
        inv = np.linalg.inv(np.eye(self.n) - self.effective_weights())
        return inv @ np.diag(self.variances) @ inv.T

    def precision(self) -> Array:
        unmix = np.eye(self.n) - self.effective_weights()
        return unmix.T @ np.diag(1 / self.variances) @ unmix

    def _parameters_equal(self, other: Scm) -> bool:
        assert isinstance(other, LinearGaussianScm)
        return bool(np.array_equal(self.weights, other.weights))


@dataclasses.dataclass(frozen=True, eq=False, kw_only=True)
class QuadraticScm(Scm):
    """Additive noise model `Z_i = sqrt(Z_Pa(i)^T Q_i Z_Pa(i)) + N_i`"""

    forms: tuple[Array, ...] = ()

    def __post_init__(self) -> None:
        super().__post_init__()
        if len(self.forms) != self.n:
            raise ValueError("Quadratic form count mismatch")
        forms = []
        for i, form in enumerate(self.forms):
            mat = np.asarray(form, dtype=float)
            size = len(self.dag.parents(i))
            if mat.shape != (size, size):
                raise ValueError(f"Invalid form shape for node {i}")
            if size and (
                not np.allclose(mat, mat.T)
                or np.linalg.eigvalsh(mat)[0] <= 0
            ):
                raise ValueError(f"Form of node {i} is not positive-definite")
            mat.flags.writeable = False
            forms.append(mat)
        object.__setattr__(self, "forms", tuple(forms))

    @property
    def family(self) -> ScmFamily:
        return ScmFamily.QUADRATIC

    def _quadratic(self, i: int, z: Array) -> tuple[Array, Array]:
        zpa = z[:, list(self.dag.parents(i))]
        return zpa, np.einsum("sa,ab,sb->s", zpa, self.forms[i], zpa)

    def parent_function(self, i: int, z: Array) -> Array:
        _zpa, quad = self._quadratic(i, z)
        return np.sqrt(np.maximum(quad, 0))

    def parent_gradient(self, i: int, z: Array) -> Array:
        zpa, quad = self._quadratic(i, z)
        if np.any(quad <= 0):
            raise DomainError(
                tagged("Score undefined at zero parent vector", node=i)
            )
        return (zpa @ self.forms[i]) / np.sqrt(quad)[:, None]

    def _check_domain(self, z: Array) -> None:
        for i, mech in enumerate(self.mechanisms):
            if mech.scale and self.dag.parents(i):
                self.parent_gradient(i, z)

    def _parameters_equal(self, other: Scm) -> bool:
        assert isinstance(other, QuadraticScm)
        return all(
            np.array_equal(a, b)
            for a, b in zip(self.forms, other.forms, strict=True)
        )


def _uniform_magnitude(
    rng: np.random.Generator, size: int | tuple[int, ...]
) -> Array:
    """Samples from Unif(+/-[0.5, 1.5])"""
    magnitude = rng.uniform(0.5, 1.5, size)
    return np.where(rng.random(size) < 0.5, -magnitude, magnitude)


def _sample_noise_vars(n: int, rng: np.random.Generator) -> tuple[float, ...]:
    return tuple(float(v) for v in rng.uniform(0.5, 1.5, n))


def sample_linear_scm(dag: Dag, rng: np.random.Generator) -> LinearGaussianScm:
    weights = np.where(
        dag.adjacency, _uniform_magnitude(rng, (dag.n, dag.n)), 0.0
    )
    return LinearGaussianScm(
        dag=dag, noise_vars=_sample_noise_vars(dag.n, rng), weights=weights
    )


def sample_quadratic_scm(dag: Dag, rng: np.random.Generator) -> QuadraticScm:
    forms = []
    for i in range(dag.n):
        size = len(dag.parents(i))
        root = _uniform_magnitude(rng, (size, size))
        forms.append(root @ root.T + 0.1 * np.eye(size))
    return QuadraticScm(
        dag=dag, noise_vars=_sample_noise_vars(dag.n, rng), forms=tuple(forms)
    )


def sample_scm(
    family: ScmFamily, dag: Dag, rng: np.random.Generator
) -> LinearGaussianScm | QuadraticScm:
    match family:
        case ScmFamily.LINEAR:
            return sample_linear_scm(dag, rng)
        case ScmFamily.QUADRATIC:
            return sample_quadratic_scm(dag, rng)
        case _:
            raise UnreachableError()


def apply_intervention[T: Scm](scm: T, spec: InterventionSpec) -> T:
    return scm.apply(spec)


@dataclasses.dataclass(frozen=True)
class MechanismChange:
    """Intervention recipe relative to a node's observational variance

    Parentless nodes have nothing to rescale, so soft interventions on them
    use `root_variance_factor` instead of `variance_factor`.
    """

    kind: InterventionKind
    variance_factor: float
    scale: float = 0.0
    root_variance_factor: float = 0.25

    def spec(self, scm: Scm, target: int) -> InterventionSpec:
        factor = self.variance_factor
        if self.kind == InterventionKind.SOFT and not scm.dag.parents(target):
            factor = self.root_variance_factor
        return InterventionSpec(
            target=target,
            kind=self.kind,
            variance=factor * scm.noise_vars[target],
            scale=self.scale,
        )


def default_changes(
    family: ScmFamily, kind: InterventionKind
) -> tuple[MechanismChange, MechanismChange]:
    """Interventions used for the first and (optional) second environments"""
    match (family, kind):
        case (ScmFamily.LINEAR, InterventionKind.HARD):
            return (
                MechanismChange(kind, 0.25),
                MechanismChange(kind, 4.0),
            )
        case (ScmFamily.LINEAR, InterventionKind.SOFT):
            return (
                MechanismChange(kind, 1.0, scale=0.5),
                MechanismChange(kind, 4.0, scale=0.25),
            )
        case (ScmFamily.QUADRATIC, InterventionKind.HARD):
            return (
                MechanismChange(kind, 5.0),
                MechanismChange(kind, 0.25),
            )
        case (ScmFamily.QUADRATIC, InterventionKind.SOFT):
            return (
                MechanismChange(kind, 5.0, scale=0.5),
                MechanismChange(kind, 0.25, scale=0.25),
            )
        case _:
            raise UnreachableError()


@dataclasses.dataclass(frozen=True, eq=False)
class EnvironmentSet:
    """Observational environment plus atomic interventional environments

    Environment `0` is observational, `1 + m` is the `m`-th environment of
    the first interventional set and `1 + n + m` the `m`-th one of the
    optional second set. Targets are hidden from the algorithms and only
    exposed through `oracle_targets`.
    """

    scm: Scm
    envs: tuple[Scm, ...]
    coupling: Coupling
    _targets: tuple[int, ...]
    _alt_targets: tuple[int, ...] | None = None

    def __post_init__(self) -> None:
        n = self.scm.n
        sets = [self._targets]
        if self._alt_targets is not None:
            sets.append(self._alt_targets)
        for targets in sets:
            if sorted(targets) != list(range(n)):
                raise ValueError("Targets must cover every node once")
        if len(self.envs) != 1 + n * len(sets):
            raise ValueError("Environment count mismatch")

    @property
    def n(self) -> int:
        return self.scm.n

    @property
    def has_second_set(self) -> bool:
        return self._alt_targets is not None

    def env_index(self, m: int) -> int:
        return 1 + m

    def alt_env_index(self, m: int) -> int:
        assert self.has_second_set
        return 1 + self.n + m

    def labels(self) -> tuple[str, ...]:
        first = [f"int-{m}" for m in range(self.n)]
        second = (
            [f"alt-{m}" for m in range(self.n)] if self.has_second_set else []
        )
        return ("obs", *first, *second)

    def oracle_targets(
        self,
    ) -> tuple[tuple[int, ...], tuple[int, ...] | None]:
        """Hidden intervention targets, for evaluation only"""
        return self._targets, self._alt_targets


def build_environments(
    scm: Scm,
    changes: Sequence[MechanismChange],
    rng: np.random.Generator,
    coupling: Coupling = Coupling.COUPLED,
) -> EnvironmentSet:
    """Builds one or two interventional environments per node

    Targets of the first set are a random permutation; the second set reuses
    it when coupled and draws an independent one otherwise.
    """
    if not 1 <= len(changes) <= 2:
        raise ValueError(f"Invalid environment count: {len(changes)}")
    targets = random_permutation(scm.n, rng)
    envs: list[Scm] = [scm]
    envs.extend(scm.apply(changes[0].spec(scm, t)) for t in targets)
    alt_targets = None
    if len(changes) == 2:
        alt_targets = (
            targets
            if coupling == Coupling.COUPLED
            else random_permutation(scm.n, rng)
        )
        envs.extend(scm.apply(changes[1].spec(scm, t)) for t in alt_targets)
    _logger.debug(
        "Built environments. [n=%s, sets=%s, coupling=%s]",
        scm.n,
        len(changes),
        coupling,
    )
    return EnvironmentSet(
        scm=scm,
        envs=tuple(envs),
        coupling=coupling,
        _targets=targets,
        _alt_targets=alt_targets,
    )


def double_intervention(
    scm: Scm, first: InterventionSpec, second: InterventionSpec
) -> Scm:
    """Model with two nodes intervened at once"""
    if first.target == second.target:
        raise ValueError("Double intervention needs two distinct targets")
    return scm.apply(first).apply(second)


def latent_score_differences(
    env_set: EnvironmentSet, a: int, b: int, z: Array
) -> Array:
    return env_set.envs[a].score(z) - env_set.envs[b].score(z)


@dataclasses.dataclass(frozen=True)
class FullRankCheck:
    rank: int
    expected: int
    passed: bool


def _eigenvalue_rank(mat: Array, threshold: float) -> int:
    eigvals = np.linalg.eigvalsh(mat)
    top = eigvals[-1]
    if top <= 0:
        return 0
    return int(np.sum(eigvals > threshold * top))


def check_assumption_full_rank(
    env_set: EnvironmentSet,
    m: int,
    n_s: int,
    rng: np.random.Generator,
    threshold: float = 0.01,
) -> FullRankCheck:
    """Compares the rank of the latent correlation matrix to `|Pa+(I^m)|`"""
    target = env_set.oracle_targets()[0][m]
    z = env_set.scm.sample(n_s, rng)
    diffs = latent_score_differences(env_set, env_set.env_index(m), 0, z)
    rank = _eigenvalue_rank(diffs.T @ diffs / n_s, threshold)
    expected = 1 + len(env_set.scm.dag.parents(target))
    return FullRankCheck(rank=rank, expected=expected, passed=rank == expected)


@dataclasses.dataclass(frozen=True)
class RankTwoCheck:
    violations: tuple[int, ...]

    @property
    def passed(self) -> bool:
        return not self.violations


def check_assumption_rank_two(
    env_set: EnvironmentSet,
    m: int,
    n_s: int,
    rng: np.random.Generator,
    threshold: float = 0.01,
) -> RankTwoCheck:
    """Checks that score changes of each parent are not proportional

    For every parent `k` of the target `i`, the ratio of the latent score
    differences on coordinates `k` and `i` must not be constant. Returns
    the parents for which it is.
    """
    target = env_set.oracle_targets()[0][m]
    z = env_set.scm.sample(n_s, rng)
    diffs = latent_score_differences(env_set, env_set.env_index(m), 0, z)
    violations = []
    for k in env_set.scm.dag.parents(target):
        pair = diffs[:, [target, k]]
        if _eigenvalue_rank(pair.T @ pair / n_s, threshold) < 2:
            violations.append(k)
    if violations:
        _logger.info(
            "Rank-two condition violated. [target=%s, parents=%s]",
            target,
            violations,
        )
    return RankTwoCheck(tuple(violations))
