"""Randomized invariant checks

Each registered case draws a fresh random instance per seed and raises
`PropertyViolation` when the invariant does not hold. Cases are exposed
both to the test suite and to the `proptest` CLI command.
"""

from __future__ import annotations

from collections.abc import Callable, Iterator
import concurrent.futures
import dataclasses
import itertools
import logging
import math
import re

import numpy as np

from .common import Array, ScoreCrlError, pinv, tagged
from .graph import (
    Dag,
    relation_matrices,
    sample_erdos_renyi,
    transitive_closure,
    transitive_reduction,
)
from .gscalei import (
    GscaleConfig,
    LossNorm,
    compute_Dt,
    ideal_encoder,
    loss_gradient,
    loss_value,
)
from .lscalei import partial_recover_node
from .metrics import mcc, shd
from .mixing import (
    TanhGlmMix,
    sample_mixing,
    sample_tanh_mixing,
    true_encoder,
)
from .scm import (
    Coupling,
    InterventionKind,
    LinearGaussianScm,
    MechanismChange,
    Scm,
    ScmFamily,
    build_environments,
    check_assumption_rank_two,
    default_changes,
    latent_score_differences,
    sample_scm,
)
from .scores import OracleProvider


_logger = logging.getLogger(__name__)


class PropertyViolation(ScoreCrlError):
    """A randomized invariant check failed"""


type CheckFn = Callable[[np.random.Generator, float], None]


@dataclasses.dataclass(frozen=True)
class PropertyCase:
    name: str
    claim: str
    check: CheckFn
    tolerance: float


_cases: dict[str, PropertyCase] = {}


def property_case(
    name: str, claim: str, tolerance: float = 1e-8
) -> Callable[[CheckFn], CheckFn]:
    """Registers a check under a unique name"""

    def register(fn: CheckFn) -> CheckFn:
        if name in _cases:
            raise ValueError(f"Duplicate property case: {name}")
        _cases[name] = PropertyCase(name, claim, fn, tolerance)
        return fn

    return register


def property_cases(pattern: str | None = None) -> list[PropertyCase]:
    """Registered cases whose name matches `pattern`, sorted by name"""
    regex = re.compile(pattern or "")
    return [_cases[k] for k in sorted(_cases) if regex.search(k)]


def _require(condition: bool, text: str, **tags) -> None:
    if not condition:
        raise PropertyViolation(tagged(text, **tags))


def _random_dag(rng: np.random.Generator, low: int = 2, high: int = 5) -> Dag:
    n = int(rng.integers(low, high + 1))
    return sample_erdos_renyi(n, 0.5, rng)


def _random_family(rng: np.random.Generator) -> ScmFamily:
    return ScmFamily.LINEAR if rng.random() < 0.5 else ScmFamily.QUADRATIC


def _random_scm(rng: np.random.Generator, **kwargs) -> Scm:
    return sample_scm(_random_family(rng), _random_dag(rng, **kwargs), rng)


def _intervened(
    scm: Scm, kind: InterventionKind, target: int, index: int = 0
) -> Scm:
    change = default_changes(scm.family, kind)[index]
    return scm.apply(change.spec(scm, target))


def _support(diffs: Array) -> frozenset[int]:
    return frozenset(np.flatnonzero(np.abs(diffs).mean(axis=0)).tolist())


def _closed_parents(dag: Dag, *targets: int) -> frozenset[int]:
    return frozenset(targets).union(*(dag.parents(t) for t in targets))


def _check_support(
    observed: frozenset[int], expected: frozenset[int], **tags
) -> None:
    _require(
        observed == expected,
        "Score change support mismatch",
        observed=sorted(observed),
        expected=sorted(expected),
        **tags,
    )


@property_case(
    "score-changes-hard",
    "Hard interventions change exactly the scores of the target and parents",
)
def _score_changes_hard(rng: np.random.Generator, _tolerance: float) -> None:
    scm = _random_scm(rng)
    target = int(rng.integers(scm.n))
    z = scm.sample(200, rng)
    env = _intervened(scm, InterventionKind.HARD, target)
    diffs = scm.score(z) - env.score(z)
    _check_support(
        _support(diffs), _closed_parents(scm.dag, target), target=target
    )


@property_case(
    "score-changes-soft",
    "Soft interventions on additive noise models change exactly the scores"
    " of the target and its parents",
)
def _score_changes_soft(rng: np.random.Generator, _tolerance: float) -> None:
    scm = _random_scm(rng)
    target = int(rng.integers(scm.n))
    z = scm.sample(200, rng)
    env = _intervened(scm, InterventionKind.SOFT, target)
    diffs = scm.score(z) - env.score(z)
    _check_support(
        _support(diffs), _closed_parents(scm.dag, target), target=target
    )


@property_case(
    "score-changes-coupled",
    "Two hard interventions on the same node only differ at that node",
)
def _score_changes_coupled(
    rng: np.random.Generator, _tolerance: float
) -> None:
    scm = _random_scm(rng)
    target = int(rng.integers(scm.n))
    z = scm.sample(200, rng)
    first = _intervened(scm, InterventionKind.HARD, target, 0)
    second = _intervened(scm, InterventionKind.HARD, target, 1)
    diffs = first.score(z) - second.score(z)
    _check_support(_support(diffs), frozenset([target]), target=target)


@property_case(
    "score-changes-uncoupled",
    "Hard interventions on two nodes differ at both closed parent sets",
)
def _score_changes_uncoupled(
    rng: np.random.Generator, _tolerance: float
) -> None:
    scm = _random_scm(rng)
    first, second = (int(t) for t in rng.choice(scm.n, 2, replace=False))
    z = scm.sample(200, rng)
    env1 = _intervened(scm, InterventionKind.HARD, first, 0)
    env2 = _intervened(scm, InterventionKind.HARD, second, 1)
    diffs = env1.score(z) - env2.score(z)
    _check_support(
        _support(diffs),
        _closed_parents(scm.dag, first, second),
        targets=(first, second),
    )


@property_case(
    "score-changes-hard-additive",
    "Hard interventions on additive noise models change exactly the scores"
    " of the target and its parents, without proportional parent changes",
)
def _score_changes_hard_additive(
    rng: np.random.Generator, _tolerance: float
) -> None:
    scm = _random_scm(rng)
    changes = default_changes(scm.family, InterventionKind.HARD)
    env_set = build_environments(scm, changes, rng)
    targets, _alt = env_set.oracle_targets()
    z = scm.sample(500, rng)
    for m, target in enumerate(targets):
        expected = _closed_parents(scm.dag, target)
        for env in (env_set.env_index(m), env_set.alt_env_index(m)):
            diffs = latent_score_differences(env_set, env, 0, z)
            _check_support(_support(diffs), expected, target=target, env=env)
        check = check_assumption_rank_two(
            env_set, m, 500, rng, threshold=1e-9
        )
        _require(
            check.passed,
            "Proportional parent score changes",
            target=target,
            violations=check.violations,
        )


def _random_latent_diff(
    rng: np.random.Generator, n_s: int
) -> tuple[Scm, Array, Array]:
    scm = _random_scm(rng)
    target = int(rng.integers(scm.n))
    z = scm.sample(n_s, rng)
    env = _intervened(scm, InterventionKind.HARD, target)
    return scm, z, env.score(z) - scm.score(z)


def _unsaturated_tanh_mixing(
    n: int, d: int, rng: np.random.Generator, z: Array
) -> TanhGlmMix:
    """Tanh mixing whose outputs on `z` stay within `[-0.9, 0.9]`"""
    mat = sample_mixing(n, d, rng).matrix
    return TanhGlmMix.calibrated(mat, z, saturation=0.9, quantile=1.0)


@property_case(
    "score-diff-transform",
    "Observed score differences pull back to latent ones through the"
    " transform's Jacobian",
)
def _score_diff_transform(rng: np.random.Generator, tolerance: float) -> None:
    scm, z, latent = _random_latent_diff(rng, 50)
    d = scm.n + int(rng.integers(2, 5))
    linear = sample_mixing(scm.n, d, rng)
    observed = linear.pushforward(latent, z)
    scale = np.abs(latent).max()
    _require(
        np.allclose(observed @ linear.matrix, latent, atol=tolerance * scale),
        "Linear pull-back mismatch",
    )
    tanh = _unsaturated_tanh_mixing(scm.n, d, rng, z)
    observed = tanh.pushforward(latent, z)
    pulled = np.einsum("sd,sdi->si", observed, tanh.jacobian(z))
    _require(
        np.allclose(pulled, latent, atol=tolerance * scale),
        "Nonlinear pull-back mismatch",
    )


@property_case(
    "tanh-jacobian",
    "The tanh mixing Jacobian matches central finite differences",
    tolerance=1e-6,
)
def _tanh_jacobian(rng: np.random.Generator, tolerance: float) -> None:
    scm = _random_scm(rng)
    z = scm.sample(20, rng)
    mix = sample_tanh_mixing(scm.n, scm.n + 2, rng, z)
    point = z[0]
    step = 1e-6
    columns = []
    for i in range(scm.n):
        delta = np.zeros(scm.n)
        delta[i] = step
        columns.append(
            (mix.forward(point + delta) - mix.forward(point - delta))
            / (2 * step)
        )
    numeric = np.column_stack(columns)
    _require(
        np.allclose(mix.jacobian(point), numeric, atol=tolerance),
        "Jacobian mismatch",
    )


@property_case(
    "encoder-round-trip",
    "The true encoder inverts the transform on its image",
    tolerance=1e-9,
)
def _encoder_round_trip(rng: np.random.Generator, tolerance: float) -> None:
    scm = _random_scm(rng)
    z = scm.sample(1000, rng)
    d = scm.n + int(rng.integers(0, 4))
    mixings = (
        sample_mixing(scm.n, d, rng),
        _unsaturated_tanh_mixing(scm.n, d, rng, z),
    )
    scale = max(1.0, float(np.abs(z).max()))
    for mix in mixings:
        encoder = true_encoder(mix)
        x = mix.forward(z)
        errors = np.linalg.norm(encoder.encode(x) - z, axis=1)
        _require(
            bool(np.all(errors < tolerance * scale)),
            "Encoder does not invert the transform",
            mixing=type(mix).__name__,
            error=f"{errors.max():.3g}",
        )
        _require(
            np.allclose(encoder.decode(encoder.encode(x)), x, atol=tolerance),
            "Decoder does not reproduce observations",
            mixing=type(mix).__name__,
        )


@property_case(
    "correlation-column-space",
    "Score difference correlations lie in the span of the true encoder rows"
    " of the target and its parents",
)
def _correlation_column_space(
    rng: np.random.Generator, tolerance: float
) -> None:
    scm = _random_scm(rng)
    target = int(rng.integers(scm.n))
    z = scm.sample(100, rng)
    env = _intervened(scm, _random_kind(rng), target)
    mix = sample_mixing(scm.n, scm.n + 3, rng)
    observed = mix.pushforward(env.score(z) - scm.score(z), z)
    corr = observed.T @ observed / len(z)
    rows = sorted(_closed_parents(scm.dag, target))
    basis = mix.decoder_pinv[rows].T
    residual = corr - basis @ pinv(basis) @ corr
    _require(
        np.linalg.norm(residual) <= tolerance * np.linalg.norm(corr),
        "Column space escapes the closed parent rows",
        target=target,
    )
    row = partial_recover_node(corr, rng)
    _require(
        np.linalg.norm(row - basis @ pinv(basis) @ row)
        <= tolerance * np.linalg.norm(corr),
        "Recovered row escapes the closed parent rows",
        target=target,
    )


def _random_kind(rng: np.random.Generator) -> InterventionKind:
    if rng.random() < 0.5:
        return InterventionKind.HARD
    return InterventionKind.SOFT


def _random_supported(
    rng: np.random.Generator, support: Array
) -> Array:
    magnitude = rng.uniform(0.5, 1.5, support.shape)
    signs = np.where(rng.random(support.shape) < 0.5, -1, 1)
    return np.where(support, magnitude * signs, 0.0)


def _check_inverse_support(mat: Array, allowed: Array) -> None:
    inverse = np.linalg.inv(mat)
    nonzero = np.abs(inverse) > 1e-9 * np.abs(inverse).max()
    _require(
        bool(np.all(np.diag(nonzero))),
        "Inverse has a vanishing diagonal entry",
    )
    _require(
        not np.any(nonzero & ~allowed),
        "Inverse support exceeds the allowed relation",
    )


@property_case(
    "binary-inverse-parents",
    "Inverses of matrices supported on closed parents are supported on"
    " closed ancestors",
)
def _binary_inverse_parents(
    rng: np.random.Generator, _tolerance: float
) -> None:
    dag = _random_dag(rng, 2, 7)
    relations = relation_matrices(dag)
    mask = relations.pa & (rng.random((dag.n, dag.n)) < 0.8)
    mask |= np.eye(dag.n, dtype=bool)
    _check_inverse_support(_random_supported(rng, mask), relations.an)


@property_case(
    "binary-inverse-surrounding",
    "Inverses of matrices supported on surrounding nodes keep that support",
)
def _binary_inverse_surrounding(
    rng: np.random.Generator, _tolerance: float
) -> None:
    dag = sample_erdos_renyi(int(rng.integers(2, 8)), 0.8, rng)
    relations = relation_matrices(dag)
    _check_inverse_support(
        _random_supported(rng, relations.sur), relations.sur
    )


@property_case(
    "hard-intervention-independence",
    "A hard-intervened node is uncorrelated with its non-descendants",
)
def _hard_intervention_independence(
    rng: np.random.Generator, _tolerance: float
) -> None:
    scm = _random_scm(rng)
    target = int(rng.integers(scm.n))
    env = _intervened(scm, InterventionKind.HARD, target)
    others = [
        j
        for j in range(scm.n)
        if j != target and j not in scm.dag.descendants(target)
    ]
    if not others:
        return
    # The 3-sigma bound at `n_s` sits above ten standard deviations of the
    # correlation estimated from `draws` samples.
    n_s = 2_000
    draws = 12 * n_s
    z = env.sample(draws, rng)
    corr = np.corrcoef(z[:, [target, *others]], rowvar=False)[0, 1:]
    bound = 3 / math.sqrt(n_s)
    _require(
        bool(np.all(np.abs(corr) <= bound)),
        "Correlated non-descendant",
        target=target,
        max_corr=f"{np.abs(corr).max():.4f}",
    )


@property_case(
    "score-finite-difference",
    "Scores match central finite differences of the log-density",
    tolerance=1e-5,
)
def _score_finite_difference(
    rng: np.random.Generator, tolerance: float
) -> None:
    scm = _random_scm(rng)
    if rng.random() < 0.5:
        target = int(rng.integers(scm.n))
        scm = _intervened(scm, _random_kind(rng), target)
    point = scm.sample(1, rng)[0]
    step = 1e-5
    numeric = np.zeros(scm.n)
    for i in range(scm.n):
        delta = np.zeros(scm.n)
        delta[i] = step
        upper = float(scm.log_density(point + delta))
        lower = float(scm.log_density(point - delta))
        numeric[i] = (upper - lower) / (2 * step)
    score = scm.score(point)
    _require(
        np.allclose(score, numeric, rtol=tolerance, atol=tolerance),
        "Score mismatch",
        error=f"{np.abs(score - numeric).max():.3g}",
    )


@property_case(
    "rank-two-soft-linear",
    "Linear soft interventions keeping parent weights violate the rank-two"
    " condition, weight changes satisfy it",
)
def _rank_two_soft_linear(rng: np.random.Generator, _tolerance: float) -> None:
    dag = Dag.chain(2)
    scm = sample_scm(ScmFamily.LINEAR, dag, rng)
    assert isinstance(scm, LinearGaussianScm)
    for scale, violated in ((1.0, True), (0.5, False)):
        change = MechanismChange(InterventionKind.SOFT, 4.0, scale=scale)
        env_set = build_environments(scm, [change], rng)
        m = env_set.oracle_targets()[0].index(1)
        check = check_assumption_rank_two(
            env_set, m, 500, rng, threshold=1e-9
        )
        _require(
            check.passed != violated,
            "Unexpected rank-two check outcome",
            scale=scale,
            violations=check.violations,
        )


def _coupled_instance(
    rng: np.random.Generator, n_s: int = 100
) -> tuple[OracleProvider, list[tuple[int, int]], tuple[int, ...], Array]:
    scm = _random_scm(rng, low=2, high=3)
    changes = default_changes(scm.family, InterventionKind.HARD)
    env_set = build_environments(scm, changes, rng, Coupling.COUPLED)
    z = scm.sample(n_s, rng)
    mix = sample_tanh_mixing(scm.n, scm.n + 2, rng, z)
    provider = OracleProvider(env_set, mix, mix.forward(z))
    pairs = [(1 + m, 1 + scm.n + m) for m in range(scm.n)]
    return provider, pairs, env_set.oracle_targets()[0], mix.decoder_pinv


@property_case(
    "score-change-equivariance",
    "Permuting and scaling the encoder permutes and inversely scales the"
    " score change matrix",
)
def _score_change_equivariance(
    rng: np.random.Generator, tolerance: float
) -> None:
    provider, pairs, _targets, H = _coupled_instance(rng)
    dataset = provider.dataset(pairs)
    n = H.shape[0]
    changes = compute_Dt(H, dataset, pairs)
    perm = rng.permutation(n)
    scales = rng.uniform(0.5, 2.0, n)
    transformed = compute_Dt(scales[:, None] * H[perm], dataset, pairs)
    expected = changes[perm] / scales[:, None]
    _require(
        np.allclose(transformed, expected, rtol=1e3 * tolerance),
        "Score change matrix is not equivariant",
    )
    cutoff = 1e-6 * changes.max()
    _require(
        np.array_equal(transformed > cutoff, (changes > cutoff)[perm]),
        "Score change indicators are not permuted",
    )


_SMOOTH_CONFIG = GscaleConfig(smoothing=0.1, reconstruction_weight=0.5)


@property_case(
    "gscale-gradient",
    "The analytic gradient of the smoothed loss matches central finite"
    " differences",
    tolerance=1e-5,
)
def _gscale_gradient(rng: np.random.Generator, tolerance: float) -> None:
    provider, pairs, _targets, H0 = _coupled_instance(rng, n_s=40)
    dataset = provider.dataset(pairs)
    H = H0 + 0.3 * np.abs(H0).mean() * rng.standard_normal(H0.shape)
    step = 1e-6
    for norm in LossNorm:
        config = GscaleConfig(
            smoothing=_SMOOTH_CONFIG.smoothing,
            reconstruction_weight=_SMOOTH_CONFIG.reconstruction_weight,
            loss_norm=norm,
        )
        _value, grad = loss_gradient(H, dataset, pairs, config)
        numeric = np.zeros_like(H)
        for idx in itertools.product(*map(range, H.shape)):
            delta = np.zeros_like(H)
            delta[idx] = step
            upper = loss_value(H + delta, dataset, pairs, config, exact=False)
            lower = loss_value(H - delta, dataset, pairs, config, exact=False)
            numeric[idx] = (upper.total - lower.total) / (2 * step)
        error = np.linalg.norm(grad - numeric) / np.linalg.norm(numeric)
        _require(
            error <= tolerance,
            "Gradient mismatch",
            norm=norm,
            error=f"{error:.3g}",
        )


@property_case(
    "gscale-global-minimum",
    "The scaled and permuted true encoder attains a zero loss",
    tolerance=1e-10,
)
def _gscale_global_minimum(
    rng: np.random.Generator, tolerance: float
) -> None:
    provider, pairs, targets, H = _coupled_instance(rng)
    dataset = provider.dataset(pairs)
    ideal = ideal_encoder(H, dataset, pairs, targets)
    for norm in LossNorm:
        loss = loss_value(ideal, dataset, pairs, GscaleConfig(loss_norm=norm))
        _require(
            loss.total <= tolerance,
            "Nonzero loss at the ideal encoder",
            norm=norm,
            loss=f"{loss.total:.3g}",
        )


@property_case(
    "extrapolation-identity",
    "Summing single-node score changes yields the double intervention's",
)
def _extrapolation_identity(
    rng: np.random.Generator, tolerance: float
) -> None:
    dag = _random_dag(rng, 2, 5)
    scm = sample_scm(ScmFamily.LINEAR, dag, rng)
    kind = _random_kind(rng)
    change = default_changes(scm.family, kind)[0]
    first, second = (int(t) for t in rng.choice(scm.n, 2, replace=False))
    specs = [change.spec(scm, t) for t in (first, second)]
    z = scm.sample(100, rng)
    mix = sample_mixing(scm.n, scm.n + 3, rng)

    def observed(model: Scm) -> Array:
        return mix.pushforward(model.score(z) - scm.score(z), z)

    extrapolated = sum(observed(scm.apply(s)) for s in specs)
    direct = observed(scm.apply(specs[0]).apply(specs[1]))
    residual = float(np.abs(extrapolated - direct).max())
    _require(
        residual < tolerance,
        "Extrapolation residual",
        residual=f"{residual:.3g}",
    )


@property_case(
    "mcc-assignment",
    "The assignment solver matches exhaustive permutation search",
    tolerance=1e-12,
)
def _mcc_assignment(rng: np.random.Generator, tolerance: float) -> None:
    n = int(rng.integers(1, 7))
    z = rng.standard_normal((50, n))
    z_hat = z @ rng.standard_normal((n, n)) + 0.5 * rng.standard_normal(
        (50, n)
    )
    corr = np.abs(np.corrcoef(z, z_hat, rowvar=False)[:n, n:])
    best = max(
        np.mean([corr[i, p[i]] for i in range(n)])
        for p in itertools.permutations(range(n))
    )
    _require(
        abs(mcc(z, z_hat).value - best) <= tolerance,
        "Suboptimal assignment",
    )


@property_case(
    "graph-distances",
    "Distances are symmetric and closures survive transitive reduction",
)
def _graph_distances(rng: np.random.Generator, _tolerance: float) -> None:
    g1 = _random_dag(rng, 2, 7)
    g2 = sample_erdos_renyi(g1.n, 0.5, rng)
    _require(shd(g1, g2) == shd(g2, g1), "Asymmetric distance")
    _require(
        transitive_closure(transitive_reduction(g1)) == transitive_closure(g1),
        "Reduction changed the closure",
    )


@dataclasses.dataclass(frozen=True)
class CaseResult:
    name: str
    claim: str
    instances: int
    failing_seeds: tuple[int, ...] = ()
    messages: tuple[str, ...] = ()

    @property
    def passed(self) -> bool:
        return not self.failing_seeds


@dataclasses.dataclass(frozen=True)
class SuiteReport:
    results: tuple[CaseResult, ...]

    @property
    def passed(self) -> bool:
        return all(r.passed for r in self.results)

    @property
    def failures(self) -> list[CaseResult]:
        return [r for r in self.results if not r.passed]

    def __str__(self) -> str:
        return "\n".join(_report_lines(self.results))


def _report_lines(results: tuple[CaseResult, ...]) -> Iterator[str]:
    for result in results:
        if result.passed:
            yield f"PASS {result.name} [instances={result.instances}]"
        else:
            seeds = ",".join(str(s) for s in result.failing_seeds)
            yield f"FAIL {result.name} [seeds={seeds}] {result.messages[0]}"


def run_case(case: PropertyCase, instances: int, seed: int) -> CaseResult:
    """Runs a case on `instances` seeds starting at `seed`"""
    failing = []
    messages = []
    for k in range(instances):
        instance_seed = seed + k
        rng = np.random.default_rng(instance_seed)
        try:
            case.check(rng, case.tolerance)
        except Exception as exc:  # noqa: BLE001
            failing.append(instance_seed)
            messages.append(str(exc) or type(exc).__name__)
    if failing:
        _logger.info(
            "Property case failed. [name=%s, seeds=%s]", case.name, failing
        )
    return CaseResult(
        name=case.name,
        claim=case.claim,
        instances=instances,
        failing_seeds=tuple(failing),
        messages=tuple(messages),
    )


def run_property_suite(
    pattern: str | None = None,
    *,
    instances: int = 20,
    seed: int = 0,
    workers: int = 4,
) -> SuiteReport:
    """Runs all matching cases, in parallel across cases"""
    if instances < 1:
        raise ValueError(f"Invalid instance count: {instances}")
    cases = property_cases(pattern)
    if not cases:
        raise ValueError(f"No property case matches {pattern!r}")
    with concurrent.futures.ThreadPoolExecutor(workers) as executor:
        results = executor.map(lambda c: run_case(c, instances, seed), cases)
        return SuiteReport(tuple(results))
