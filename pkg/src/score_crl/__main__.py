"""CLI entry point"""

from __future__ import annotations

from collections.abc import Sequence
import logging
from pathlib import Path
import sys

import docopt

from .common import (
    PROGRAM,
    ConfigError,
    UnreachableError,
    ensure_state_home,
    program_version,
)
from .experiments import (
    ExperimentConfig,
    SweepAxis,
    config_hash,
    load_config,
    run_experiment,
    run_extrapolation,
    run_sweep,
    updated_config,
)
from .progress import Progress
from .properties import run_property_suite


_logger = logging.getLogger(__name__)


_USAGE = f"""Score-based causal representation learning experiments

Usage:
  {PROGRAM} [options] run --config=PATH [--out=DIR] [--dump-scores]
  {PROGRAM} [options] sweep --config=PATH [--out=DIR] [--axis=NAME]
                  [--values=LIST]
  {PROGRAM} [options] extrapolate --config=PATH [--out=DIR]
  {PROGRAM} [options] validate-config --config=PATH
  {PROGRAM} [options] proptest [--filter=PATTERN] [--instances=COUNT]
  {PROGRAM} --log-path
  {PROGRAM} (-h | --help)
  {PROGRAM} --version

Options:
  --axis=NAME           Sweep parameter: n_s, variance, d or density.
  --batch               Disable interactive progress.
  --config=PATH         Experiment configuration TOML file.
  --dump-scores         Also write score difference matrices.
  --filter=PATTERN      Only run property cases matching this pattern.
  --instances=COUNT     Random instances per property case [default: 20].
  --log-level=LEVEL     Logging level [default: INFO].
  --log-path            Show log path and exit.
  --out=DIR             Output folder [default: out].
  --seed-override=SEED  Replace the configured master seed.
  --values=LIST         Comma-separated sweep values.
  --workers=COUNT       Parallel graph workers [default: 1].
"""


def _parse_args(args: Sequence[str] | None) -> docopt.ParsedOptions:
    try:
        return docopt.docopt(
            _USAGE,
            list(args) if args is not None else None,
            version=program_version(),
        )
    except docopt.DocoptExit as exc:
        raise ValueError(f"Invalid arguments\n{exc}") from exc


def _load(opts: docopt.ParsedOptions) -> ExperimentConfig:
    config = load_config(Path(opts["--config"]))
    if (seed := opts["--seed-override"]) is not None:
        config = updated_config(config, seed=int(seed))
    return config


def _sweep_values(raw: str | None) -> list[float] | None:
    if raw is None:
        return None
    values = [float(v) for v in raw.split(",") if v.strip()]
    if not values:
        raise ConfigError("Empty sweep values")
    return values


def run(args: Sequence[str] | None = None) -> None:
    opts = _parse_args(args)

    log_path = ensure_state_home() / "log"
    if opts["--log-path"]:
        print(log_path)
        return
    logging.basicConfig(
        level=opts["--log-level"].upper(),
        filename=str(log_path),
        format="%(asctime)s %(name)-12s %(levelname)-8s %(message)s",
        datefmt="%m-%d %H:%M",
    )

    progress = (
        Progress.dynamic()
        if sys.stdout.isatty() and not opts["--batch"]
        else Progress.static()
    )
    workers = int(opts["--workers"])
    out = Path(opts["--out"])
    if opts["run"]:
        summary = run_experiment(
            _load(opts),
            out,
            workers=workers,
            dump_scores=opts["--dump-scores"],
            progress=progress,
        )
        for row in summary.aggregate:
            print(f"{row.metric}\t{row}")
    elif opts["sweep"]:
        axis = opts["--axis"]
        run_sweep(
            _load(opts),
            out,
            SweepAxis(axis) if axis else None,
            _sweep_values(opts["--values"]),
            workers=workers,
            progress=progress,
        )
        print(out / "sweep.csv")
    elif opts["extrapolate"]:
        for result in run_extrapolation(_load(opts), out):
            print(
                f"{result.graph_index}\t{result.max_residual:.3e}"
                f"\t{result.mean_residual:.3e}"
            )
    elif opts["validate-config"]:
        print(config_hash(_load(opts)))
    elif opts["proptest"]:
        report = run_property_suite(
            opts["--filter"], instances=int(opts["--instances"])
        )
        print(report)
        if not report.passed:
            count = len(report.failures)
            raise RuntimeError(f"{count} property case(s) failed")
    else:
        raise UnreachableError()


def main() -> None:
    try:
        run()
    except Exception as err:
        _logger.exception("Program failed.")
        message = str(err) or "See logs for more information"
        print(f"Error: {message}", file=sys.stderr)
        sys.exit(1)


if __name__ == "__main__":
    main()
