"""The "PWTS" checkpoint container.

Layout (little-endian)::

    b"PWTS"  u32 version(=1)
    u32 len + UTF-8 JSON model spec
    u64 adam_step  u32 epoch  f64 lr  f64 beta1  f64 beta2  f64 epsilon
    u32 tensor_count
    per tensor (sorted by name): u16 len + UTF-8 name, u8 ndim, u32 dims...,
        f32 value, f32 adam_m, f32 adam_v
"""

from __future__ import annotations

import json
import os
import struct

import numpy as np

from ricemap.errors import BadMagicError, DataError, MissingFileError, TruncatedError, VersionMismatchError
from ricemap.nn.models import Model, ModelSpec
from ricemap.nn.train import ModelWeights

MAGIC = b"PWTS"
VERSION = 1


def encode_weights(w: ModelWeights) -> bytes:
    spec_json = json.dumps(w.spec.to_dict(), sort_keys=True).encode("utf-8")
    out = [MAGIC, struct.pack("<I", VERSION), struct.pack("<I", len(spec_json)), spec_json,
           struct.pack("<QIdddd", w.step, w.epoch, w.learning_rate, w.beta1, w.beta2, w.epsilon),
           struct.pack("<I", len(w.params))]
    for name in sorted(w.params):
        p = np.asarray(w.params[name])
        raw = name.encode("utf-8")
        out.append(struct.pack("<H", len(raw)) + raw)
        out.append(struct.pack("<B", p.ndim) + struct.pack(f"<{p.ndim}I", *p.shape))
        m = w.adam_m.get(name, np.zeros_like(p))
        v = w.adam_v.get(name, np.zeros_like(p))
        for arr in (p, m, v):
            out.append(np.asarray(arr, dtype="<f4").tobytes())
    return b"".join(out)


class _Cursor:
    def __init__(self, buf: bytes):
        self.buf, self.pos = buf, 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.buf):
            raise TruncatedError(f"checkpoint truncated at byte {self.pos}")
        b = self.buf[self.pos:self.pos + n]
        self.pos += n
        return b

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def decode_weights(buf: bytes) -> ModelWeights:
    c = _Cursor(buf)
    if c.take(4) != MAGIC:
        raise BadMagicError("not a PWTS checkpoint (bad magic)")
    (version,) = c.unpack("<I")
    if version != VERSION:
        raise VersionMismatchError(f"checkpoint version {version}, expected {VERSION}")
    (n,) = c.unpack("<I")
    spec = ModelSpec.from_dict(json.loads(c.take(n).decode("utf-8")))
    step, epoch, lr, b1, b2, eps = c.unpack("<QIdddd")
    (count,) = c.unpack("<I")
    params, ms, vs = {}, {}, {}
    for _ in range(count):
        (ln,) = c.unpack("<H")
        name = c.take(ln).decode("utf-8")
        (ndim,) = c.unpack("<B")
        shape = c.unpack(f"<{ndim}I")
        size = int(np.prod(shape)) if ndim else 1
        arrs = [np.frombuffer(c.take(4 * size), dtype="<f4").astype(np.float32).reshape(shape)
                for _ in range(3)]
        params[name], ms[name], vs[name] = arrs
    if c.pos != len(buf):
        raise TruncatedError(f"{len(buf) - c.pos} trailing bytes in checkpoint")
    return ModelWeights(spec, params, ms, vs, step, epoch, lr, b1, b2, eps)


def save_weights(weights: ModelWeights, path: str | os.PathLike) -> None:
    with open(path, "wb") as fh:
        fh.write(encode_weights(weights))


def load_weights(path: str | os.PathLike, model: Model | None = None) -> ModelWeights:
    """Read a checkpoint; when ``model`` is given, check its spec and load the parameters into it."""
    if not os.path.exists(path):
        raise MissingFileError(f"no such checkpoint: {path}")
    with open(path, "rb") as fh:
        w = decode_weights(fh.read())
    if model is not None:
        if model.spec != w.spec:
            raise DataError(f"checkpoint spec {w.spec} does not match model spec {model.spec}")
        model.load_parameters(w.params)
    return w
