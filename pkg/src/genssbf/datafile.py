"""Binary channel-dataset files.

Layout (little-endian)::

    header   "GSBF" | u16 version | u32 N | f64 spacing | f64 carrier GHz
             | u32 num_samples | u8 scenario id | u64 seed | u16 max paths
    record   f32 x, f32 y | u8 split tag | u16 path count
             | max_paths x (f32 theta, f32 gain re, f32 gain im)
             | N x f32 Re h | N x f32 Im h

Records have a fixed size; unused path slots are zero. A JSON copy of the
header is written next to the file as ``<path>.meta.json``.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from ._io import atomic_write
from .sitechannel import ArrayConfig, ChannelDataset, ChannelSample, ScenarioId

MAGIC = b"GSBF"
VERSION = 1
_HEADER = struct.Struct("<4sHIddIBQH")


class DatasetFormatError(ValueError):
    pass


class InvalidFormatError(DatasetFormatError):
    pass


class VersionMismatchError(DatasetFormatError):
    pass


class TruncatedError(DatasetFormatError):
    def __init__(self, message: str, record: int | None = None):
        super().__init__(message)
        self.record = record


def record_dtype(num_antennas: int, max_paths: int) -> np.dtype:
    return np.dtype([
        ("pos", "<f4", (2,)),
        ("split", "u1"),
        ("npaths", "<u2"),
        ("paths", "<f4", (max_paths, 3)),
        ("h", "<f4", (2 * num_antennas,)),
    ])


def header_dict(dataset: ChannelDataset) -> dict:
    return {
        "magic": MAGIC.decode(),
        "version": VERSION,
        "num_antennas": dataset.array.num_antennas,
        "element_spacing": dataset.array.element_spacing,
        "carrier_freq_ghz": dataset.array.carrier_freq_ghz,
        "num_samples": len(dataset),
        "scenario_id": dataset.scenario_id.name,
        "seed": dataset.seed,
        "max_paths": max((s.num_paths for s in dataset.samples), default=0),
    }


def write_dataset(path, dataset: ChannelDataset) -> None:
    path = Path(path)
    meta = header_dict(dataset)
    n, p = dataset.array.num_antennas, meta["max_paths"]
    recs = np.zeros(len(dataset), dtype=record_dtype(n, p))
    for i, s in enumerate(dataset.samples):
        recs[i]["pos"] = s.ue_position
        recs[i]["split"] = dataset.split_tags[i]
        recs[i]["npaths"] = s.num_paths
        recs[i]["paths"][:s.num_paths] = np.stack([s.thetas, s.gains.real, s.gains.imag], axis=1)
        recs[i]["h"] = np.concatenate([s.h.real, s.h.imag])
    with atomic_write(path) as fh:
        fh.write(_HEADER.pack(MAGIC, VERSION, n, dataset.array.element_spacing,
                              dataset.array.carrier_freq_ghz, len(dataset),
                              int(dataset.scenario_id), dataset.seed, p))
        fh.write(recs.tobytes())
    with atomic_write(str(path) + ".meta.json", "w") as fh:
        json.dump(meta, fh, indent=2)
        fh.write("\n")


def read_dataset(path) -> ChannelDataset:
    raw = Path(path).read_bytes()
    if raw[:4] != MAGIC:
        raise InvalidFormatError(f"invalid format: {path} does not start with {MAGIC!r}")
    if len(raw) < _HEADER.size:
        raise TruncatedError(f"truncated header in {path}")
    _, version, n, spacing, carrier, count, sid, seed, p = _HEADER.unpack_from(raw)
    if version != VERSION:
        raise VersionMismatchError(f"{path}: file version {version}, reader supports {VERSION}")
    dt = record_dtype(n, p)
    body = raw[_HEADER.size:]
    complete = len(body) // dt.itemsize
    if complete < count:
        raise TruncatedError(f"{path}: truncated at record {complete} of {count}", complete)
    recs = np.frombuffer(body, dtype=dt, count=count)
    samples = []
    for r in recs:
        k = int(r["npaths"])
        paths = r["paths"][:k].astype(np.float64)
        h = r["h"].astype(np.float64)
        samples.append(ChannelSample(r["pos"].astype(np.float64), paths[:, 0],
                                     paths[:, 1] + 1j * paths[:, 2], h[:n] + 1j * h[n:]))
    return ChannelDataset(ArrayConfig(n, spacing, carrier), ScenarioId(sid), seed, samples,
                          recs["split"].astype(np.uint8))
