"""Configuration-driven experiment runs"""

from __future__ import annotations

from collections.abc import Iterator, Mapping, Sequence
import concurrent.futures
import csv
import dataclasses
from datetime import datetime
import enum
import hashlib
import logging
import math
from pathlib import Path
import time
from typing import Any

import jinja2
import msgspec
import numpy as np

from .common import (
    PROGRAM,
    Array,
    ConfigError,
    UnreachableError,
    child_sequence,
    package_root,
    program_version,
    tagged,
)
from .graph import Dag, sample_erdos_renyi
from .gscalei import (
    MAX_COUPLING_NODES,
    GscaleConfig,
    TracePoint,
    fit_coupled,
    fit_uncoupled,
    stage_g2_graph,
)
from .lscalei import CrlEstimate, LscaleMode
from .lscalei import run as run_lscalei
from .metrics import evaluate
from .mixing import LinearMix, TanhGlmMix, sample_mixing, sample_tanh_mixing
from .progress import Progress
from .records import MetricReport, RunManifest, RunRecord, record_encoder
from .scm import (
    Coupling,
    EnvironmentSet,
    InterventionKind,
    ScmFamily,
    build_environments,
    default_changes,
    double_intervention,
    sample_scm,
)
from .scores import (
    GaussianProvider,
    NoisyOracleProvider,
    OracleProvider,
    ScoreDiffProvider,
    ScoreMode,
    extrapolate_score_diff,
    noisy_score_diff,
    reduce_dimension,
    reduction_basis,
)


_logger = logging.getLogger(__name__)


class Algorithm(enum.StrEnum):
    LSCALEI = "lscalei"
    LSCALEI_FULL_RANK = "lscalei-fullrank"
    GSCALEI = "gscalei"


class SweepAxis(enum.StrEnum):
    N_S = "n_s"
    VARIANCE = "variance"
    D = "d"
    DENSITY = "density"


class ScoreConfig(
    msgspec.Struct, frozen=True, kw_only=True, forbid_unknown_fields=True
):
    mode: ScoreMode = ScoreMode.ORACLE
    variance: float = 0.0

    def __post_init__(self) -> None:
        if self.variance < 0:
            raise ValueError("Noise variance must be nonnegative")
        if self.variance and self.mode != ScoreMode.NOISY:
            raise ValueError("Noise variance requires noisy scores")


class ThresholdConfig(
    msgspec.Struct, frozen=True, kw_only=True, forbid_unknown_fields=True
):
    """Graph and eigenvalue thresholds

    The graph threshold defaults to a value depending on the algorithm,
    model family, intervention type and score mode.
    """

    graph: float | None = None
    eigenvalue: float = 0.01

    def __post_init__(self) -> None:
        if self.graph is not None and self.graph <= 0:
            raise ValueError("Graph threshold must be positive")
        if not 0 < self.eigenvalue < 1:
            raise ValueError("Eigenvalue threshold must be in (0, 1)")


class InterventionConfig(
    msgspec.Struct, frozen=True, kw_only=True, forbid_unknown_fields=True
):
    kind: InterventionKind = InterventionKind.HARD
    environments: int = 1
    coupling: Coupling = Coupling.COUPLED

    def __post_init__(self) -> None:
        if self.environments not in (1, 2):
            raise ValueError("One or two environments per node are supported")
        if self.coupling == Coupling.UNCOUPLED and self.environments != 2:
            raise ValueError("Uncoupled environments require two sets")


class SweepConfig(
    msgspec.Struct, frozen=True, kw_only=True, forbid_unknown_fields=True
):
    axis: SweepAxis
    values: tuple[float, ...]

    def __post_init__(self) -> None:
        if not self.values:
            raise ValueError("Sweep values must not be empty")


class ExperimentConfig(
    msgspec.Struct, frozen=True, kw_only=True, forbid_unknown_fields=True
):
    """Full description of a batch of runs

    Runs are reproducible from the config alone: each graph derives its
    random streams from `seed` and its index.
    """

    n: int = 5
    d: int = 100
    n_s: int = 10_000
    density: float = 0.5
    family: ScmFamily = ScmFamily.LINEAR
    algorithm: Algorithm = Algorithm.LSCALEI
    interventions: InterventionConfig = msgspec.field(
        default_factory=InterventionConfig
    )
    score: ScoreConfig = msgspec.field(default_factory=ScoreConfig)
    thresholds: ThresholdConfig = msgspec.field(
        default_factory=ThresholdConfig
    )
    gscale: GscaleConfig = msgspec.field(default_factory=GscaleConfig)
    sweep: SweepConfig | None = None
    n_graphs: int = 10
    seed: int = 0

    def __post_init__(self) -> None:
        if self.n < 1 or self.n_graphs < 1 or self.seed < 0:
            raise ValueError("Counts and seed must be positive")
        if self.d < self.n:
            raise ValueError("Observed dimension below latent dimension")
        if self.n_s < 2:
            raise ValueError("At least two samples are required")
        if not 0 <= self.density <= 1:
            raise ValueError("Density must be in [0, 1]")
        envs = self.interventions.environments
        match self.algorithm:
            case Algorithm.LSCALEI | Algorithm.LSCALEI_FULL_RANK:
                if envs != 1:
                    raise ValueError("Linear mixing uses one set")
            case Algorithm.GSCALEI:
                if envs != 2:
                    raise ValueError("General mixing needs two sets")
                if self.interventions.kind != InterventionKind.HARD:
                    raise ValueError("General mixing needs hard interventions")
                if self.score.mode == ScoreMode.GAUSSIAN:
                    raise ValueError("Gaussian scores require linear mixing")
                if (
                    self.interventions.coupling == Coupling.UNCOUPLED
                    and self.n > MAX_COUPLING_NODES
                ):
                    raise ValueError("Too many nodes for coupling search")
            case _:
                raise UnreachableError()
        if (
            self.score.mode == ScoreMode.GAUSSIAN
            and self.family != ScmFamily.LINEAR
        ):
            raise ValueError("Gaussian scores require a linear model")

    @property
    def graph_threshold(self) -> float:
        if self.thresholds.graph is not None:
            return self.thresholds.graph
        perfect = self.score.mode == ScoreMode.ORACLE
        match (self.algorithm, self.family, self.interventions.kind):
            case (Algorithm.GSCALEI, _, _):
                return 0.01 if perfect else 0.5
            case (Algorithm.LSCALEI, ScmFamily.LINEAR, InterventionKind.SOFT):
                return 1e-4 if perfect else 1e-3
            case _:
                return 1e-3 if perfect else 0.1


def _decode_error(exc: msgspec.MsgspecError) -> ConfigError:
    return ConfigError(f"Invalid config: {exc}")


def load_config(path: Path) -> ExperimentConfig:
    try:
        return msgspec.toml.decode(path.read_bytes(), type=ExperimentConfig)
    except (msgspec.ValidationError, msgspec.DecodeError) as exc:
        raise _decode_error(exc) from exc


def parse_config(data: Mapping[str, Any]) -> ExperimentConfig:
    try:
        return msgspec.convert(data, type=ExperimentConfig)
    except msgspec.ValidationError as exc:
        raise _decode_error(exc) from exc


def updated_config(config: ExperimentConfig, **changes) -> ExperimentConfig:
    """Returns a copy of the config with validated changes"""
    return parse_config({**msgspec.to_builtins(config), **changes})


def config_hash(config: ExperimentConfig) -> str:
    """SHA-256 of the config's canonical JSON encoding"""
    return hashlib.sha256(record_encoder().encode(config)).hexdigest()


@dataclasses.dataclass(frozen=True)
class _Streams:
    graph: np.random.Generator
    scm: np.random.Generator
    mixing: np.random.Generator
    targets: np.random.Generator
    noise: np.random.Generator
    fit: np.random.Generator
    environments: np.random.SeedSequence

    @classmethod
    def for_graph(cls, seed: int, index: int) -> _Streams:
        seq = np.random.SeedSequence(seed, spawn_key=(index,))
        env_seq, *children = seq.spawn(len(dataclasses.fields(cls)))
        rngs = [np.random.default_rng(c) for c in children]
        return cls(*rngs, environments=env_seq)

    def samples(self, env: int) -> np.random.Generator:
        """Sampling stream of environment `env`, `0` being observational"""
        return np.random.default_rng(child_sequence(self.environments, env))


def graph_seed(seed: int, index: int) -> int:
    """Per-graph seed reported in run records"""
    seq = np.random.SeedSequence(seed, spawn_key=(index,))
    return int(seq.generate_state(1, dtype=np.uint64)[0])


@dataclasses.dataclass(frozen=True, eq=False)
class Instance:
    """Ground truth of a single graph's run"""

    dag: Dag
    env_set: EnvironmentSet
    mix: LinearMix | TanhGlmMix
    z: Array
    x: Array


def build_instance(config: ExperimentConfig, streams: _Streams) -> Instance:
    dag = sample_erdos_renyi(config.n, config.density, streams.graph)
    scm = sample_scm(config.family, dag, streams.scm)
    changes = default_changes(config.family, config.interventions.kind)
    env_set = build_environments(
        scm,
        changes[: config.interventions.environments],
        streams.targets,
        config.interventions.coupling,
    )
    z = scm.sample(config.n_s, streams.samples(0))
    mix: LinearMix | TanhGlmMix
    if config.algorithm == Algorithm.GSCALEI:
        mix = sample_tanh_mixing(config.n, config.d, streams.mixing, z)
    else:
        mix = sample_mixing(config.n, config.d, streams.mixing)
    return Instance(dag=dag, env_set=env_set, mix=mix, z=z, x=mix.forward(z))


def _env_observations(
    config: ExperimentConfig, instance: Instance, streams: _Streams
) -> list[Array]:
    return [
        instance.mix.forward(env.sample(config.n_s, streams.samples(e)))
        for e, env in enumerate(instance.env_set.envs)
    ]


@dataclasses.dataclass(frozen=True, eq=False)
class GraphOutcome:
    record: RunRecord
    trace: tuple[TracePoint, ...] = ()


def _run_lscalei(
    config: ExperimentConfig,
    instance: Instance,
    streams: _Streams,
    dump: Path | None,
) -> tuple[CrlEstimate, float | None]:
    n = config.n
    pairs = [(1 + m, 0) for m in range(n)]
    hard = config.interventions.kind == InterventionKind.HARD
    mode = (
        LscaleMode.FULL_RANK
        if config.algorithm == Algorithm.LSCALEI_FULL_RANK
        else LscaleMode.HARD if hard else LscaleMode.SOFT
    )
    needs_envs = config.score.mode == ScoreMode.GAUSSIAN or (
        mode == LscaleMode.HARD
    )
    env_x = _env_observations(config, instance, streams) if needs_envs else []

    snr = None
    provider: ScoreDiffProvider
    match config.score.mode:
        case ScoreMode.GAUSSIAN:
            basis = reduction_basis(instance.x, n)
            provider = GaussianProvider(
                instance.x @ basis,
                [e @ basis for e in env_x],
                instance.env_set.labels(),
            )
            dataset = provider.dataset(pairs)
        case ScoreMode.ORACLE | ScoreMode.NOISY:
            provider = _oracle_provider(config, instance, streams)
            raw = provider.dataset(pairs)
            if dump is not None:
                raw.dump(dump)
            reduced = reduce_dimension(raw, n)
            dataset, basis = reduced.dataset, reduced.basis
            if isinstance(provider, NoisyOracleProvider):
                snr = provider.snr_db()
        case _:
            raise UnreachableError()
    if dump is not None and config.score.mode == ScoreMode.GAUSSIAN:
        dataset.dump(dump)

    env_samples = (
        [env_x[1 + m] @ basis for m in range(n)]
        if mode == LscaleMode.HARD
        else None
    )
    estimate = run_lscalei(
        dataset,
        pairs,
        mode,
        config.graph_threshold,
        rank_threshold=config.thresholds.eigenvalue,
        env_samples=env_samples,
        basis=basis,
    )
    return estimate, snr


def _oracle_provider(
    config: ExperimentConfig, instance: Instance, streams: _Streams
) -> OracleProvider | NoisyOracleProvider:
    oracle = OracleProvider(instance.env_set, instance.mix, instance.x)
    if config.score.mode == ScoreMode.NOISY:
        variance = config.score.variance
        return NoisyOracleProvider(oracle, variance, streams.noise)
    return oracle


def _run_gscalei(
    config: ExperimentConfig,
    instance: Instance,
    streams: _Streams,
    dump: Path | None,
) -> tuple[CrlEstimate, bool | None, tuple[TracePoint, ...], float | None]:
    n = config.n
    provider = _oracle_provider(config, instance, streams)
    obs_pairs = [(e, 0) for e in range(1, 2 * n + 1)]
    coupling_ok = None
    trace: tuple[TracePoint, ...] = ()
    match config.interventions.coupling:
        case Coupling.COUPLED:
            coupled = [(1 + m, 1 + n + m) for m in range(n)]
            dataset = provider.dataset([*coupled, *obs_pairs[:n]])
            estimate, fit = fit_coupled(
                dataset, coupled, config.gscale, streams.fit
            )
            graph = stage_g2_graph(
                fit.matrix,
                dataset,
                [(0, 1 + m) for m in range(n)],
                config.graph_threshold,
            )
            estimate = dataclasses.replace(estimate, graph=graph)
            trace = fit.trace
        case Coupling.UNCOUPLED:
            dataset = provider.dataset(obs_pairs)
            estimate, coupling = fit_uncoupled(
                dataset, n, config.gscale, config.graph_threshold, streams.fit
            )
            targets, alt_targets = instance.env_set.oracle_targets()
            assert alt_targets is not None
            coupling_ok = all(
                alt_targets[k] == targets[m] for m, k in enumerate(coupling)
            )
        case _:
            raise UnreachableError()
    if dump is not None:
        dataset.dump(dump)
    snr = (
        provider.snr_db()
        if isinstance(provider, NoisyOracleProvider)
        else None
    )
    return estimate, coupling_ok, trace, snr


def run_graph(
    config: ExperimentConfig, index: int, dump_folder: Path | None = None
) -> GraphOutcome:
    """Generates, solves and evaluates a single graph's instance"""
    start = time.perf_counter()
    streams = _Streams.for_graph(config.seed, index)
    instance = build_instance(config, streams)
    dump = None if dump_folder is None else dump_folder / f"scores-{index}"
    coupling_ok = None
    trace: tuple[TracePoint, ...] = ()
    match config.algorithm:
        case Algorithm.LSCALEI | Algorithm.LSCALEI_FULL_RANK:
            estimate, snr = _run_lscalei(config, instance, streams, dump)
        case Algorithm.GSCALEI:
            estimate, coupling_ok, trace, snr = _run_gscalei(
                config, instance, streams, dump
            )
        case _:
            raise UnreachableError()
    report = evaluate(
        instance.z,
        estimate.z_hat,
        instance.dag,
        estimate.graph,
        estimate.matrix,
        instance.mix.matrix,
    )
    record = RunRecord(
        config_hash=config_hash(config),
        graph_index=index,
        seed=graph_seed(config.seed, index),
        report=report,
        coupling_ok=coupling_ok,
        snr_db=snr,
        wall_time=time.perf_counter() - start,
    )
    _logger.info(
        "Ran graph. [index=%s, mcc=%.4f, shd=%s]",
        index,
        report.mcc,
        report.shd,
    )
    return GraphOutcome(record=record, trace=trace)


def _run_graph_task(
    args: tuple[ExperimentConfig, int, Path | None],
) -> GraphOutcome:
    return run_graph(*args)


def _outcomes(
    config: ExperimentConfig, workers: int, dump_folder: Path | None
) -> Iterator[GraphOutcome]:
    tasks = [(config, i, dump_folder) for i in range(config.n_graphs)]
    if workers <= 1:
        yield from map(_run_graph_task, tasks)
        return
    with concurrent.futures.ProcessPoolExecutor(workers) as executor:
        yield from executor.map(_run_graph_task, tasks)


METRIC_NAMES = ("mcc", "shd", "shd_tc", "l_scale", "l_pa", "l_sur", "l_norm")


RUN_COLUMNS = (
    "config_hash",
    "graph_index",
    "seed",
    *METRIC_NAMES,
    "permutation",
    "coupling_ok",
)


def _run_row(record: RunRecord) -> list[str]:
    report = record.report
    coupling = "" if record.coupling_ok is None else str(record.coupling_ok)
    return [
        record.config_hash,
        str(record.graph_index),
        str(record.seed),
        *(repr(getattr(report, name)) for name in METRIC_NAMES),
        " ".join(str(i) for i in report.permutation),
        coupling.lower(),
    ]


@dataclasses.dataclass(frozen=True)
class AggregateRow:
    metric: str
    mean: float
    stderr: float

    def __str__(self) -> str:
        return f"{self.mean:.2f} ± {self.stderr:.2f}"


def _mean_stderr(values: Sequence[float]) -> tuple[float, float]:
    arr = np.asarray(values, dtype=float)
    if len(arr) < 2:
        return float(arr.mean()), 0.0
    return float(arr.mean()), float(arr.std(ddof=1) / math.sqrt(len(arr)))


def aggregate(records: Sequence[RunRecord]) -> list[AggregateRow]:
    """Mean and standard error of every metric over graphs"""
    if not records:
        raise ValueError("No records to aggregate")
    rows = []
    for name in METRIC_NAMES:
        values = [float(getattr(r.report, name)) for r in records]
        rows.append(AggregateRow(name, *_mean_stderr(values)))
    snrs = [r.snr_db for r in records if r.snr_db is not None]
    if snrs:
        rows.append(AggregateRow("snr_db", *_mean_stderr(snrs)))
    couplings = [r.coupling_ok for r in records if r.coupling_ok is not None]
    if couplings:
        rates = [float(c) for c in couplings]
        rows.append(AggregateRow("coupling_ok", *_mean_stderr(rates)))
    return rows


def _write_csv(
    path: Path, header: Sequence[str], rows: Sequence[Sequence[Any]]
) -> None:
    with path.open("w", newline="") as writer:
        out = csv.writer(writer, lineterminator="\n")
        out.writerow(header)
        out.writerows(rows)


def _jinja_environment() -> jinja2.Environment:
    return jinja2.Environment(
        auto_reload=False,
        autoescape=False,
        keep_trailing_newline=True,
        loader=jinja2.FileSystemLoader(package_root / "templates"),
        trim_blocks=True,
        lstrip_blocks=True,
        undefined=jinja2.StrictUndefined,
    )


def render_report(
    config: ExperimentConfig, rows: Sequence[AggregateRow]
) -> str:
    template = _jinja_environment().get_template("report.md.jinja")
    return template.render(
        program=PROGRAM,
        config=msgspec.to_builtins(config),
        config_hash=config_hash(config),
        threshold=config.graph_threshold,
        rows=rows,
    )


@dataclasses.dataclass(frozen=True, eq=False)
class ExperimentSummary:
    records: tuple[RunRecord, ...]
    aggregate: tuple[AggregateRow, ...]
    folder: Path


def run_experiment(
    config: ExperimentConfig,
    out: Path,
    *,
    workers: int = 1,
    dump_scores: bool = False,
    progress: Progress | None = None,
    command: str = "run",
) -> ExperimentSummary:
    """Runs all graphs and writes CSV outputs, a report and a manifest

    Outputs only depend on the config, not on the number of workers.
    """
    progress = progress or Progress.static()
    out.mkdir(parents=True, exist_ok=True)
    started_at = datetime.now().isoformat(timespec="seconds")
    dump_folder = out if dump_scores else None
    records = []
    outputs = ["runs.csv", "aggregate.csv", "report.md"]
    with progress.tracker("Running graphs.", config.n_graphs) as tracker:
        for outcome in _outcomes(config, workers, dump_folder):
            records.append(outcome.record)
            tracker.advance(
                "Ran graph.",
                index=outcome.record.graph_index,
                mcc=f"{outcome.record.report.mcc:.3f}",
            )
            if outcome.trace:
                name = f"trace-{outcome.record.graph_index}.csv"
                _write_csv(
                    out / name,
                    ("step", "loss", "recon_loss", "deviation"),
                    [dataclasses.astuple(p) for p in outcome.trace],
                )
                outputs.append(name)

    _write_csv(out / "runs.csv", RUN_COLUMNS, [_run_row(r) for r in records])
    rows = aggregate(records)
    _write_csv(
        out / "aggregate.csv",
        ("metric", "mean", "stderr"),
        [(r.metric, repr(r.mean), repr(r.stderr)) for r in rows],
    )
    (out / "report.md").write_text(render_report(config, rows))
    manifest = RunManifest(
        program=PROGRAM,
        version=program_version(),
        command=command,
        config_hash=config_hash(config),
        master_seed=config.seed,
        n_graphs=config.n_graphs,
        workers=workers,
        started_at=started_at,
        wall_times=tuple(r.wall_time for r in records),
        outputs=tuple(outputs),
    )
    (out / "manifest.json").write_bytes(record_encoder().encode(manifest))
    _logger.info("Wrote experiment outputs. [folder=%s]", out)
    return ExperimentSummary(tuple(records), tuple(rows), out)


def _axis_changes(axis: SweepAxis, value: float) -> dict[str, Any]:
    match axis:
        case SweepAxis.N_S | SweepAxis.D:
            if value != int(value):
                raise ConfigError(tagged("Non-integer value", axis=axis))
            return {str(axis): int(value)}
        case SweepAxis.DENSITY:
            return {"density": value}
        case SweepAxis.VARIANCE:
            return {"score": {"mode": "noisy", "variance": value}}
        case _:
            raise UnreachableError()


SWEEP_COLUMNS = ("axis", "value", "metric", "mean", "stderr")


def run_sweep(
    config: ExperimentConfig,
    out: Path,
    axis: SweepAxis | None = None,
    values: Sequence[float] | None = None,
    *,
    workers: int = 1,
    progress: Progress | None = None,
) -> list[tuple[float, ExperimentSummary]]:
    """Runs the experiment once per value of a single parameter

    The axis and values default to the config's `sweep` table. Results are
    collected in a long-format `sweep.csv`, one row per value and metric;
    noise variance sweeps include the signal-to-noise ratio as a metric.
    """
    if axis is None or values is None:
        if config.sweep is None:
            raise ConfigError("Missing sweep axis")
        axis = axis or config.sweep.axis
        values = values if values is not None else config.sweep.values
    if not values:
        raise ConfigError(tagged("Empty sweep values", axis=axis))
    progress = progress or Progress.static()
    out.mkdir(parents=True, exist_ok=True)
    results = []
    rows = []
    for value in values:
        swept = updated_config(config, **_axis_changes(axis, value))
        progress.report("Sweeping.", axis=axis, value=value)
        summary = run_experiment(
            swept,
            out / f"{axis}={value:g}",
            workers=workers,
            progress=progress,
            command="sweep",
        )
        results.append((value, summary))
        rows.extend(
            (str(axis), f"{value:g}", r.metric, repr(r.mean), repr(r.stderr))
            for r in summary.aggregate
        )
    _write_csv(out / "sweep.csv", SWEEP_COLUMNS, rows)
    return results


@dataclasses.dataclass(frozen=True)
class ExtrapolationResidual:
    graph_index: int
    targets: tuple[int, int]
    max_residual: float
    mean_residual: float


def extrapolation_residual(
    config: ExperimentConfig, index: int
) -> ExtrapolationResidual:
    """Compares extrapolated and direct double-intervention score changes"""
    if config.n < 2:
        raise ConfigError("Extrapolation needs at least two nodes")
    streams = _Streams.for_graph(config.seed, index)
    dag = sample_erdos_renyi(config.n, config.density, streams.graph)
    scm = sample_scm(config.family, dag, streams.scm)
    change = default_changes(config.family, config.interventions.kind)[0]
    first, second = (
        int(t) for t in streams.targets.choice(config.n, 2, replace=False)
    )
    single = [scm.apply(change.spec(scm, t)) for t in (first, second)]
    double = double_intervention(
        scm, change.spec(scm, first), change.spec(scm, second)
    )
    mix = sample_mixing(config.n, config.d, streams.mixing)
    z = scm.sample(config.n_s, streams.samples(0))

    def observed(model: Any) -> Array:
        return mix.pushforward(model.score(z), z)

    base = observed(scm)
    variance = config.score.variance

    def diff(model: Any) -> Array:
        if config.score.mode == ScoreMode.NOISY:
            return noisy_score_diff(
                observed(model), base, variance, streams.noise
            )
        return observed(model) - base

    d1, d2 = (diff(m) for m in single)
    residual = np.abs(extrapolate_score_diff(d1, d2) - diff(double))
    return ExtrapolationResidual(
        graph_index=index,
        targets=(first, second),
        max_residual=float(residual.max()),
        mean_residual=float(residual.mean()),
    )


EXTRAPOLATION_COLUMNS = (
    "graph_index",
    "first",
    "second",
    "max_residual",
    "mean_residual",
)


def run_extrapolation(
    config: ExperimentConfig, out: Path | None = None
) -> list[ExtrapolationResidual]:
    if config.family != ScmFamily.LINEAR:
        raise ConfigError("Extrapolation requires a linear model")
    if config.score.mode == ScoreMode.GAUSSIAN:
        raise ConfigError("Extrapolation requires oracle or noisy scores")
    results = [
        extrapolation_residual(config, i) for i in range(config.n_graphs)
    ]
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        _write_csv(
            out / "extrapolate.csv",
            EXTRAPOLATION_COLUMNS,
            [
                (
                    r.graph_index,
                    *r.targets,
                    repr(r.max_residual),
                    repr(r.mean_residual),
                )
                for r in results
            ],
        )
    return results


def load_records(path: Path) -> list[MetricReport]:
    """Reads metric reports back from a `runs.csv` file"""
    with path.open(newline="") as reader:
        return [
            MetricReport(
                mcc=float(row["mcc"]),
                shd=int(row["shd"]),
                shd_tc=int(row["shd_tc"]),
                l_scale=float(row["l_scale"]),
                l_pa=float(row["l_pa"]),
                l_sur=float(row["l_sur"]),
                l_norm=float(row["l_norm"]),
                permutation=tuple(int(i) for i in row["permutation"].split()),
            )
            for row in csv.DictReader(reader)
        ]
