"""The "PREC" training-record container.

Layout (little-endian)::

    b"PREC"  u32 version(=1)  u32 count  u32 channels  u32 size
    count x [u64 point_id, u8 split, f32 features (C*S*S), f32 labels (5*S*S)]
"""

from __future__ import annotations

import os
import struct
from typing import Sequence

import numpy as np

from ricemap.errors import BadMagicError, DataError, MissingFileError, TruncatedError, VersionMismatchError
from ricemap.stratify import CLASSES, SampleRecord

MAGIC = b"PREC"
VERSION = 1
HEADER = struct.Struct("<4sIIII")


def record_dtype(channels: int, size: int) -> np.dtype:
    return np.dtype([
        ("point_id", "<u8"),
        ("split", "u1"),
        ("features", "<f4", (channels, size, size)),
        ("labels", "<f4", (len(CLASSES), size, size)),
    ])


def encode_records(records: Sequence[SampleRecord]) -> bytes:
    if not records:
        return HEADER.pack(MAGIC, VERSION, 0, 0, 0)
    c, s = records[0].features.shape[0], records[0].size
    dt = record_dtype(c, s)
    arr = np.zeros(len(records), dtype=dt)
    for i, r in enumerate(records):
        if r.features.shape != (c, s, s) or r.labels.shape != (len(CLASSES), s, s):
            raise DataError("channel count and patch size must be uniform within a record file")
        arr[i]["point_id"] = r.point_id
        arr[i]["split"] = r.split
        arr[i]["features"] = r.features
        arr[i]["labels"] = r.labels
    return HEADER.pack(MAGIC, VERSION, len(records), c, s) + arr.tobytes()


def decode_records(buf: bytes) -> list[SampleRecord]:
    if len(buf) < HEADER.size:
        raise TruncatedError("record file shorter than its header")
    magic, version, count, c, s = HEADER.unpack_from(buf)
    if magic != MAGIC:
        raise BadMagicError("not a PREC record file (bad magic)")
    if version != VERSION:
        raise VersionMismatchError(f"record version {version}, expected {VERSION}")
    if count == 0:
        if len(buf) != HEADER.size:
            raise TruncatedError("declared 0 records but payload present")
        return []
    dt = record_dtype(c, s)
    expected = HEADER.size + count * dt.itemsize
    if len(buf) != expected:
        raise TruncatedError(f"declared {count} records need {expected} bytes, file has {len(buf)}")
    arr = np.frombuffer(buf, dtype=dt, offset=HEADER.size)
    return [
        SampleRecord(
            features=np.array(a["features"], dtype=np.float32),
            labels=np.array(a["labels"], dtype=np.float32),
            point_id=int(a["point_id"]),
            split=int(a["split"]),
        )
        for a in arr
    ]


def write_records(records: Sequence[SampleRecord], path: str | os.PathLike) -> None:
    with open(path, "wb") as fh:
        fh.write(encode_records(records))


def read_records(path: str | os.PathLike) -> list[SampleRecord]:
    if not os.path.exists(path):
        raise MissingFileError(f"no such record file: {path}")
    with open(path, "rb") as fh:
        return decode_records(fh.read())
