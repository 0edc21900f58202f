"""Binary weight files.

Layout (little-endian throughout)::

    b"HARN"  uint32 version  uint32 count
    count x { uint32 name_len, utf-8 name, uint32 rank, rank x uint32 dim,
              prod(dims) x float32 }
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .errors import FormatError, IoError
from .params import NetParams

MAGIC = b"HARN"
VERSION = 1


def encode_weights(params: NetParams) -> bytes:
    parts = [MAGIC, struct.pack("<II", VERSION, len(params))]
    for name, t in params.items():
        raw = name.encode("utf-8")
        parts.append(struct.pack("<I", len(raw)) + raw)
        parts.append(struct.pack(f"<I{t.data.ndim}I", t.data.ndim, *t.data.shape))
        parts.append(np.ascontiguousarray(t.data, dtype="<f4").tobytes())
    return b"".join(parts)


class _Reader:
    def __init__(self, buf: bytes):
        self.buf, self.pos = buf, 0

    def take(self, n: int, what: str) -> bytes:
        if self.pos + n > len(self.buf):
            raise FormatError(f"truncated weight file while reading {what}", self.pos)
        out = self.buf[self.pos:self.pos + n]
        self.pos += n
        return out

    def u32(self, what: str) -> int:
        return struct.unpack("<I", self.take(4, what))[0]


def decode_weights(buf: bytes) -> NetParams:
    r = _Reader(buf)
    if r.take(4, "magic") != MAGIC:
        raise FormatError("bad magic, not a weight file", 0)
    version = r.u32("version")
    if version != VERSION:
        raise FormatError(f"unsupported weight format version {version}", 4)
    params = NetParams()
    for _ in range(r.u32("parameter count")):
        start = r.pos
        try:
            name = r.take(r.u32("name length"), "name").decode("utf-8")
        except UnicodeDecodeError:
            raise FormatError("parameter name is not UTF-8", start) from None
        dims = tuple(r.u32("dims") for _ in range(r.u32("rank")))
        count = int(np.prod(dims, dtype=np.int64))
        data = np.frombuffer(r.take(4 * count, f"values of {name!r}"), dtype="<f4").reshape(dims)
        if name in params:
            raise FormatError(f"duplicate parameter {name!r}", start)
        params.add(name, data.astype(np.float32))
    if r.pos != len(buf):
        raise FormatError("trailing bytes after last parameter", r.pos)
    return params


def save_weights(path, params: NetParams) -> None:
    try:
        Path(path).write_bytes(encode_weights(params))
    except OSError as exc:
        raise IoError(f"cannot write weights to {path}: {exc}") from None


def load_weights(path) -> NetParams:
    try:
        buf = Path(path).read_bytes()
    except OSError as exc:
        raise IoError(f"cannot read weights from {path}: {exc}") from None
    return decode_weights(buf)
