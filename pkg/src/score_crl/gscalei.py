"""Causal representation learning under tanh-GLM mixing

Encoders are parameterized as `h(x) = H arctanh(x)` with decoder
`tanh(H^+ z)`. The encoder is fit by driving the matrix of expected score
changes between coupled environments to the identity, while keeping the
decoder faithful to the observations.
"""

from __future__ import annotations

from collections.abc import Sequence
import concurrent.futures
import dataclasses
import enum
import itertools
import logging
import math

import msgspec
import numpy as np

from .common import (
    Array,
    DomainError,
    InfeasibleCouplingError,
    UnreachableError,
    check_full_column_rank,
    spawn_generators,
    tagged,
)
from .graph import Dag
from .lscalei import CrlEstimate, threshold_graph
from .mixing import TanhGlmEncoder, checked_arctanh
from .scores import EnvPair, ScoreDiffDataset


_logger = logging.getLogger(__name__)


class LossNorm(enum.StrEnum):
    FROBENIUS = "frobenius"
    L1 = "l1"


class GscaleConfig(
    msgspec.Struct, frozen=True, kw_only=True, forbid_unknown_fields=True
):
    """Optimization settings

    Steps default to 30000 for up to five latent nodes and 40000 above.
    """

    reconstruction_weight: float = 1.0
    smoothing: float = 1e-6
    steps: int | None = None
    learning_rate: float = 1e-3
    decay: float = 0.99
    rms_epsilon: float = 1e-8
    patience: int = 500
    min_improvement: float = 1e-9
    loss_norm: LossNorm = LossNorm.FROBENIUS
    trace_every: int = 0
    workers: int = 1

    def __post_init__(self) -> None:
        if self.reconstruction_weight <= 0:
            raise ValueError("Reconstruction weight must be positive")
        if self.smoothing <= 0:
            raise ValueError("Smoothing constant must be positive")
        if self.steps is not None and self.steps < 1:
            raise ValueError("Step count must be positive")
        if self.learning_rate <= 0 or not 0 < self.decay < 1:
            raise ValueError("Invalid optimizer parameters")
        if self.patience < 1 or self.workers < 1 or self.trace_every < 0:
            raise ValueError("Invalid optimizer schedule")

    def step_count(self, n: int) -> int:
        if self.steps is not None:
            return self.steps
        return 30_000 if n <= 5 else 40_000


@dataclasses.dataclass(frozen=True)
class TracePoint:
    step: int
    loss: float
    recon_loss: float
    deviation: float


@dataclasses.dataclass(frozen=True)
class LossTerms:
    score: float
    recon: float

    @property
    def total(self) -> float:
        return self.score + self.recon


class _Objective:
    """Smoothed loss and its analytic gradient w.r.t. `H`

    With `P = H^+`, `K = (H H^T)^-1` and `Pi = P H`, pulled-back differences
    are `E_m = (W * Delta_m) P` where `W = 1 - X_hat^2` is the decoder's tanh
    derivative at the decoded observations `X_hat = tanh(arctanh(X) Pi)`.
    Perturbing `H` moves `P` by `-P dH P + (I - Pi) dH^T K` and `Pi` by
    `P dH (I - Pi) + (I - Pi) dH^T P^T`, which gives the chain rule below.
    """

    def __init__(
        self,
        x: Array,
        diffs: Sequence[Array],
        target: Array,
        config: GscaleConfig,
    ) -> None:
        self._x = x
        self._y = checked_arctanh(x)
        self._diffs = list(diffs)
        self._target = target
        self._config = config
        self._n_s = x.shape[0]

    def _projections(self, H: Array) -> tuple[Array, Array, Array]:
        gram = H @ H.T
        if np.linalg.cond(gram) > 1e16:
            raise DomainError("Encoder lost full row rank")
        K = np.linalg.inv(gram)
        P = H.T @ K
        return K, P, P @ H

    def _decoded(self, Pi: Array) -> Array:
        return np.tanh(self._y @ Pi)

    def score_changes(self, H: Array, smoothing: float) -> Array:
        """`D[i, m] = E phi(E_m[:, i])`, `phi` the smoothed absolute value"""
        _K, P, Pi = self._projections(H)
        weights = 1 - self._decoded(Pi) ** 2
        return self._changes(P, weights, smoothing)[0]

    def _changes(
        self, P: Array, weights: Array, smoothing: float
    ) -> tuple[Array, list[Array]]:
        latent = [(weights * d) @ P for d in self._diffs]
        changes = np.column_stack(
            [np.sqrt(e**2 + smoothing**2).mean(axis=0) for e in latent]
        )
        return changes, latent

    def _score_loss(
        self, changes: Array, smoothing: float
    ) -> tuple[float, Array]:
        dev = changes - self._target
        match self._config.loss_norm:
            case LossNorm.FROBENIUS:
                return float(np.sum(dev**2)), 2 * dev
            case LossNorm.L1:
                if not smoothing:
                    return float(np.abs(dev).sum()), np.sign(dev)
                smooth = np.sqrt(dev**2 + smoothing**2)
                return float(smooth.sum()), dev / smooth
            case _:
                raise UnreachableError()

    def _recon(self, fitted: Array) -> tuple[float, Array]:
        """Reconstruction loss and its gradient w.r.t. `fitted`"""
        residual = fitted - self._x
        weight = self._config.reconstruction_weight
        loss = weight * float(np.sum(residual**2)) / self._n_s
        return loss, 2 * weight / self._n_s * residual

    def evaluate(self, H: Array, *, exact: bool = False) -> LossTerms:
        smoothing = 0.0 if exact else self._config.smoothing
        _K, P, Pi = self._projections(H)
        fitted = self._decoded(Pi)
        changes, _latent = self._changes(P, 1 - fitted**2, smoothing)
        score, _ = self._score_loss(changes, smoothing)
        recon, _ = self._recon(fitted)
        return LossTerms(score, recon)

    def gradient(self, H: Array) -> tuple[LossTerms, Array]:
        eps = self._config.smoothing
        K, P, Pi = self._projections(H)
        fitted = self._decoded(Pi)
        weights = 1 - fitted**2
        changes, latent = self._changes(P, weights, eps)
        score, grad_changes = self._score_loss(changes, eps)
        grad_P = np.zeros_like(P)
        grad_weights = np.zeros_like(fitted)
        for m, (e, d) in enumerate(zip(latent, self._diffs, strict=True)):
            slope = e / np.sqrt(e**2 + eps**2)
            coef = grad_changes[:, m] / self._n_s * slope
            grad_P += (weights * d).T @ coef
            grad_weights += (coef @ P.T) * d
        recon, grad_fitted = self._recon(fitted)
        grad_fitted = grad_fitted - 2 * fitted * grad_weights
        grad_Pi = self._y.T @ (grad_fitted * weights)
        residual = np.eye(Pi.shape[0]) - Pi
        grad = -P.T @ grad_P @ P.T + K @ grad_P.T @ residual
        grad += P.T @ (grad_Pi + grad_Pi.T) @ residual
        return LossTerms(score, recon), grad


def initial_encoder(x: Array, n: int) -> Array:
    """Whitening projection on the top principal directions of arctanh(X)"""
    y = checked_arctanh(x)
    _u, sv, vt = np.linalg.svd(y, full_matrices=False)
    return (math.sqrt(len(y)) / sv[:n])[:, None] * vt[:n]


@dataclasses.dataclass(frozen=True, eq=False)
class FitResult:
    matrix: Array
    loss: LossTerms
    steps: int
    trace: tuple[TracePoint, ...] = ()


def _minimize(
    objective: _Objective,
    H0: Array,
    config: GscaleConfig,
    steps: int,
) -> FitResult:
    """RMSprop descent with early stopping on stalled improvement"""
    H = H0.copy()
    second_moment = np.zeros_like(H)
    checkpoint = math.inf
    trace = []
    step = 0
    for step in range(1, steps + 1):
        terms, grad = objective.gradient(H)
        loss = terms.total
        if not math.isfinite(loss) or not np.all(np.isfinite(grad)):
            raise DomainError(tagged("Non-finite loss", step=step))
        if config.trace_every and step % config.trace_every == 0:
            trace.append(TracePoint(step, loss, terms.recon, terms.score))
        if step % config.patience == 0:
            if checkpoint - loss < config.min_improvement:
                break
            checkpoint = loss
        second_moment = (
            config.decay * second_moment + (1 - config.decay) * grad**2
        )
        H -= (
            config.learning_rate
            * grad
            / (np.sqrt(second_moment) + config.rms_epsilon)
        )
    return FitResult(
        matrix=H,
        loss=objective.evaluate(H, exact=True),
        steps=step,
        trace=tuple(trace),
    )


def _fit(
    x: Array,
    diffs: Sequence[Array],
    target: Array,
    config: GscaleConfig,
    rng: np.random.Generator,
    H0: Array | None = None,
) -> FitResult:
    n = target.shape[0]
    objective = _Objective(x, diffs, target, config)
    start = initial_encoder(x, n) if H0 is None else H0
    steps = config.step_count(n)
    try:
        return _minimize(objective, start, config, steps)
    except DomainError:
        if H0 is not None:
            raise
        _logger.warning("Fit diverged, restarting from perturbed start.")
        noise = rng.standard_normal(start.shape)
        start = start + 0.1 * np.abs(start).mean() * noise
        return _minimize(objective, start, config, steps)


def compute_Dt(
    H: Array,
    dataset: ScoreDiffDataset,
    pairs: Sequence[EnvPair],
    smoothing: float = 0.0,
) -> Array:
    """Expected absolute pulled-back score changes, one column per pair

    A zero `smoothing` reports exact absolute values.
    """
    check_full_column_rank(H.T, "Encoder")
    diffs = [dataset.pair(a, b) for a, b in pairs]
    objective = _Objective(
        dataset.x, diffs, np.eye(H.shape[0], len(pairs)), GscaleConfig()
    )
    return objective.score_changes(H, smoothing)


def loss_value(
    H: Array,
    dataset: ScoreDiffDataset,
    pairs: Sequence[EnvPair],
    config: GscaleConfig,
    *,
    exact: bool = True,
) -> LossTerms:
    diffs = [dataset.pair(a, b) for a, b in pairs]
    objective = _Objective(dataset.x, diffs, np.eye(len(pairs)), config)
    return objective.evaluate(H, exact=exact)


def loss_gradient(
    H: Array,
    dataset: ScoreDiffDataset,
    pairs: Sequence[EnvPair],
    config: GscaleConfig,
) -> tuple[float, Array]:
    """Smoothed loss and its gradient"""
    diffs = [dataset.pair(a, b) for a, b in pairs]
    objective = _Objective(dataset.x, diffs, np.eye(len(pairs)), config)
    terms, grad = objective.gradient(H)
    return terms.total, grad


def fit_coupled(
    dataset: ScoreDiffDataset,
    pairs: Sequence[EnvPair],
    config: GscaleConfig,
    rng: np.random.Generator,
    H0: Array | None = None,
) -> tuple[CrlEstimate, FitResult]:
    """Minimizes the coupled objective, pairs given as `(E^m, E~^m)`

    The returned estimate has an empty graph, see `stage_g2_graph`.
    """
    n = len(pairs)
    diffs = [dataset.pair(a, b) for a, b in pairs]
    result = _fit(dataset.x, diffs, np.eye(n), config, rng, H0)
    encoder = TanhGlmEncoder(result.matrix)
    _logger.info(
        "Fitted coupled encoder. [loss=%.3g, recon=%.3g, steps=%s]",
        result.loss.total,
        result.loss.recon,
        result.steps,
    )
    estimate = CrlEstimate(
        encoder=encoder,
        graph=Dag.empty(n),
        z_hat=encoder.encode(dataset.x),
        mode="gscalei",
        loss=result.loss.total,
    )
    return estimate, result


def stage_g2_graph(
    H: Array,
    dataset: ScoreDiffDataset,
    obs_pairs: Sequence[EnvPair],
    threshold: float,
) -> Dag:
    """Graph from observational-vs-interventional score changes"""
    return threshold_graph(compute_Dt(H, dataset, obs_pairs), threshold)


def ideal_encoder(
    decoder_pinv: Array,
    dataset: ScoreDiffDataset,
    pairs: Sequence[EnvPair],
    targets: Sequence[int],
) -> Array:
    """Scaled and permuted true encoder at which the coupled loss vanishes

    Row `m` is the true encoder row of node `targets[m]`, scaled by the
    expected absolute score change of that node across the `m`-th pair.
    """
    changes = compute_Dt(decoder_pinv, dataset, pairs)
    return np.array(
        [changes[t, m] * decoder_pinv[t] for m, t in enumerate(targets)]
    )


def _indicator(mat: Array, threshold: float) -> Array:
    return mat >= threshold


def coupling_constraints_hold(
    changes: Array,
    alt_changes: Array,
    coupling: Sequence[int],
    threshold: float,
) -> bool:
    """Checks both indicator constraints of a candidate coupling

    Column `m` of the first set's change indicators must equal column
    `coupling[m]` of the second set's, and the first set's indicators may
    not contain both directions of any pair (the diagonal must be set).
    """
    ind = _indicator(changes, threshold)
    alt = _indicator(alt_changes, threshold)
    if not np.array_equal(ind, alt[:, list(coupling)]):
        return False
    return bool(np.array_equal(ind & ind.T, np.eye(len(ind), dtype=bool)))


@dataclasses.dataclass(frozen=True, eq=False)
class CouplingCandidate:
    coupling: tuple[int, ...]
    fit: FitResult
    feasible: bool


def _evaluate_coupling(
    dataset: ScoreDiffDataset,
    n: int,
    coupling: tuple[int, ...],
    config: GscaleConfig,
    threshold: float,
    rng: np.random.Generator,
) -> CouplingCandidate:
    pairs = [(1 + m, 1 + n + k) for m, k in enumerate(coupling)]
    diffs = [dataset.pair(a, b) for a, b in pairs]
    result = _fit(dataset.x, diffs, np.eye(n), config, rng)
    changes = compute_Dt(
        result.matrix, dataset, [(1 + m, 0) for m in range(n)]
    )
    alt_changes = compute_Dt(
        result.matrix, dataset, [(1 + n + k, 0) for k in range(n)]
    )
    feasible = coupling_constraints_hold(
        changes, alt_changes, coupling, threshold
    )
    _logger.debug(
        "Evaluated coupling. [coupling=%s, loss=%.3g, feasible=%s]",
        coupling,
        result.loss.total,
        feasible,
    )
    return CouplingCandidate(coupling, result, feasible)


MAX_COUPLING_NODES = 7


def fit_uncoupled(
    dataset: ScoreDiffDataset,
    n: int,
    config: GscaleConfig,
    graph_threshold: float,
    rng: np.random.Generator,
) -> tuple[CrlEstimate, tuple[int, ...]]:
    """Searches all couplings between the two interventional sets

    The dataset must provide differences of environments `1..n` and
    `n+1..2n` against environment `0`. The returned coupling maps the
    `m`-th environment of the first set to the `coupling[m]`-th of the
    second.
    """
    if n > MAX_COUPLING_NODES:
        raise ValueError(tagged("Too many nodes for coupling search", n=n))
    couplings = [tuple(p) for p in itertools.permutations(range(n))]
    rngs = spawn_generators(
        np.random.SeedSequence(int(rng.integers(2**63))), len(couplings)
    )
    with concurrent.futures.ThreadPoolExecutor(config.workers) as executor:
        candidates = list(
            executor.map(
                lambda args: _evaluate_coupling(
                    dataset, n, args[0], config, graph_threshold, args[1]
                ),
                zip(couplings, rngs, strict=True),
            )
        )
    feasible = [c for c in candidates if c.feasible]
    if not feasible:
        best = min(c.fit.loss.total for c in candidates)
        raise InfeasibleCouplingError(
            tagged("No feasible coupling", best_loss=f"{best:.3g}"), best
        )
    chosen = min(feasible, key=lambda c: c.fit.loss.total)
    encoder = TanhGlmEncoder(chosen.fit.matrix)
    graph = stage_g2_graph(
        chosen.fit.matrix,
        dataset,
        [(0, 1 + m) for m in range(n)],
        graph_threshold,
    )
    _logger.info(
        "Selected coupling. [coupling=%s, loss=%.3g, feasible=%s]",
        chosen.coupling,
        chosen.fit.loss.total,
        len(feasible),
    )
    estimate = CrlEstimate(
        encoder=encoder,
        graph=graph,
        z_hat=encoder.encode(dataset.x),
        mode="gscalei",
        loss=chosen.fit.loss.total,
    )
    return estimate, chosen.coupling


@dataclasses.dataclass(frozen=True, eq=False)
class PartialIdentification:
    row: Array
    loss: float
    support: tuple[int, ...] | None = None


def partial_identify_node(
    dataset: ScoreDiffDataset,
    pair: EnvPair,
    n: int,
    m: int,
    config: GscaleConfig,
    rng: np.random.Generator,
    mixing_matrix: Array | None = None,
    support_tolerance: float = 0.05,
) -> PartialIdentification:
    """Recovers a single latent coordinate from one coupled hard pair

    Only column `m` of the score change matrix is driven to `e_m`. When the
    true mixing matrix is supplied, the support of the effective row of
    `H G` (entries above `support_tolerance` relative to the largest) is
    reported for diagnostics.
    """
    target = np.eye(n)[:, [m]]
    result = _fit(dataset.x, [dataset.pair(*pair)], target, config, rng)
    row = result.matrix[m]
    support = None
    if mixing_matrix is not None:
        effective = np.abs(row @ mixing_matrix)
        support = tuple(
            int(i)
            for i in np.flatnonzero(
                effective > support_tolerance * effective.max()
            )
        )
    return PartialIdentification(
        row=row, loss=result.loss.total, support=support
    )
