"""Miscellaneous utilities"""

from __future__ import annotations

import importlib.metadata
import itertools
from pathlib import Path
import textwrap

import numpy as np
import xdg_base_dirs


PROGRAM = "score-crl"


type Array = np.ndarray


package_root = Path(__file__).parent


def program_version() -> str:
    try:
        return importlib.metadata.version("score_crl")
    except importlib.metadata.PackageNotFoundError:
        return "0.0.0"


def ensure_state_home() -> Path:
    path = xdg_base_dirs.xdg_state_home() / PROGRAM
    path.mkdir(parents=True, exist_ok=True)
    return path


class ScoreCrlError(Exception):
    """Base class for all domain errors raised by this package"""


class GraphSizeError(ScoreCrlError):
    """A graph is too large for an exhaustive search"""


class DomainError(ScoreCrlError):
    """A function was evaluated outside of its domain"""


class RankDeficiencyError(ScoreCrlError):
    """A matrix expected to have full rank is numerically rank-deficient"""


class VacuousInterventionError(ScoreCrlError):
    """An intervention left the score function unchanged"""


class AssumptionViolationError(ScoreCrlError):
    """The data is inconsistent with an identifiability assumption"""


class InfeasibleCouplingError(ScoreCrlError):
    """No candidate coupling satisfies the coupling constraints"""

    def __init__(self, message: str, best_loss: float) -> None:
        super().__init__(message)
        self.best_loss = best_loss


class ConfigError(ScoreCrlError):
    """An experiment configuration is invalid"""


class UnreachableError(RuntimeError):
    """Indicates unreachable code was unexpectedly executed"""


PINV_RCOND = 1e-10


def pinv(mat: Array) -> Array:
    """Moore-Penrose pseudo-inverse with a relative singular value cutoff"""
    return np.linalg.pinv(mat, rcond=PINV_RCOND)


def numerical_rank(mat: Array, rtol: float = PINV_RCOND) -> int:
    """Number of singular values above `rtol` times the largest one"""
    sv = np.linalg.svd(np.atleast_2d(mat), compute_uv=False)
    if not sv.size or sv[0] == 0:
        return 0
    return int(np.sum(sv > rtol * sv[0]))


def check_full_column_rank(mat: Array, what: str) -> None:
    rank = numerical_rank(mat)
    if rank < mat.shape[1]:
        raise RankDeficiencyError(
            tagged(f"{what} is rank-deficient", rank=rank, shape=mat.shape)
        )


def spawn_generators(
    seed: np.random.SeedSequence, count: int
) -> list[np.random.Generator]:
    """Independent child streams of a seed sequence"""
    return [np.random.default_rng(s) for s in seed.spawn(count)]


def child_sequence(
    seed: np.random.SeedSequence, key: int
) -> np.random.SeedSequence:
    """The `key`-th child of `seed`, as `seed.spawn` would produce it"""
    if key < 0:
        raise ValueError(f"Invalid child key: {key}")
    return np.random.SeedSequence(
        seed.entropy, spawn_key=(*seed.spawn_key, key)
    )


def random_permutation(n: int, rng: np.random.Generator) -> tuple[int, ...]:
    return tuple(int(i) for i in rng.permutation(n))


def reindent(s: str, prefix: str = "", width: int = 0) -> str:
    """Reindents text by dedenting and optionally wrapping paragraphs"""
    paragraphs = (
        " ".join(textwrap.dedent("\n".join(g)).splitlines())
        for b, g in itertools.groupby(s.splitlines(), bool)
        if b
    )
    if width and prefix:
        width -= len(prefix) + 1
        assert width > 0
    wrapped = "\n\n".join(
        textwrap.fill(p, width=width) if width else p for p in paragraphs
    )
    if not prefix:
        return wrapped
    return "\n".join(
        f"{prefix} {t}" if t else prefix for t in wrapped.splitlines()
    )


def tagged(text: str, /, **kwargs) -> str:
    if kwargs:
        tags = [
            f"{key}={val}" for key, val in kwargs.items() if val is not None
        ]
        text = f"{text} [{', '.join(tags)}]" if tags else text
    return reindent(text)
