"""Serializable run records and manifests"""

import collections
from collections.abc import Mapping
import types
from typing import Any, dataclass_transform

import msgspec


all_records = types.SimpleNamespace()


# https://discuss.python.org/t/cannot-inherit-non-frozen-dataclass-from-a-frozen-one/79273
@dataclass_transform(field_specifiers=(msgspec.field,), frozen_default=True)
class RecordStruct(msgspec.Struct, frozen=True):
    """Base immutable structure for all persisted records"""

    def __init_subclass__(cls, *args: Any, **kwargs) -> None:
        super().__init_subclass__(*args, **kwargs)
        setattr(all_records, cls.__name__, cls)


class MetricReport(RecordStruct):
    """Evaluation metrics of a single run

    `permutation[i]` is the index of the estimated latent matched with the
    true latent `i`.
    """

    mcc: float
    shd: int
    shd_tc: int
    l_scale: float
    l_pa: float
    l_sur: float
    l_norm: float
    permutation: tuple[int, ...]


class RunRecord(RecordStruct):
    """Outcome of one graph's run"""

    config_hash: str
    graph_index: int
    seed: int
    report: MetricReport
    coupling_ok: bool | None = None
    snr_db: float | None = None
    wall_time: float = 0.0


class RunManifest(RecordStruct):
    """Summary written alongside a run directory's CSV files"""

    program: str
    version: str
    command: str
    config_hash: str
    master_seed: int
    n_graphs: int
    workers: int
    started_at: str
    wall_times: tuple[float, ...] = ()
    outputs: tuple[str, ...] = ()


class PairFile(RecordStruct):
    a: int
    b: int
    path: str


class DatasetManifest(RecordStruct):
    """Layout of a score difference dump

    All matrices are stored row-major as little-endian 64-bit floats.
    """

    labels: tuple[str, ...]
    n_s: int
    d: int
    x_path: str
    pairs: tuple[PairFile, ...]
    dtype: str = "<f8"


def record_encoder() -> msgspec.json.Encoder:
    """Returns a JSON encoder for record instances"""
    return msgspec.json.Encoder(order="deterministic")


def record_decoders() -> Mapping[str, msgspec.json.Decoder]:
    """Returns JSON decoders keyed by record class name"""
    return _Decoders()


class _Decoders(collections.defaultdict[str, msgspec.json.Decoder]):
    def __missing__(self, key: str) -> msgspec.json.Decoder:
        record_class = getattr(all_records, key)
        decoder = msgspec.json.Decoder(type=record_class)
        self[key] = decoder
        return decoder
