"""OPDS: a small self-describing binary container.

Layout::

    8 bytes   magic, b"OPDSET" followed by a two-digit version ("01")
    8 bytes   header length in bytes, unsigned little-endian
    n bytes   UTF-8 header, one ``key=value`` per line, keys sorted
    ...       raw float64 little-endian arrays, order fixed by ``kind``

For ``kind=dataset`` the payload is the sensor grid ``(m, d_x)``, then the
shared queries ``(P, d_y)`` when ``shared_queries=1``, then for every sample
``u (m, d_u)``, ``y (P, d_y)`` (only when queries are not shared),
``s (P, d_s)`` and ``tag (tag_dim,)``. Model checkpoints use the same
framing with ``kind=checkpoint``.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from ..errors import FormatError
from .types import OperatorDataset

MAGIC_PREFIX = b"OPDSET"
VERSION = b"01"
MAGIC = MAGIC_PREFIX + VERSION
_LE_F64 = np.dtype("<f8")


def encode_header(fields: dict[str, object]) -> bytes:
    lines = []
    for key in sorted(fields):
        value = fields[key]
        if isinstance(value, float):
            value = repr(value)
        text = f"{key}={value}"
        if "\n" in text or "=" in key:
            raise ValueError(f"header entry {key!r} cannot be encoded")
        lines.append(text)
    return ("\n".join(lines) + "\n").encode("utf-8")


def write_container(path, fields: dict[str, object], arrays) -> None:
    header = encode_header(fields)
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<Q", len(header)))
        fh.write(header)
        for a in arrays:
            fh.write(np.ascontiguousarray(a, dtype=_LE_F64).tobytes())


class Payload:
    """Sequential reader over the array section with byte-offset diagnostics."""

    def __init__(self, buf: bytes, offset: int):
        self.buf = buf
        self.pos = offset

    def take(self, shape) -> np.ndarray:
        count = int(np.prod(shape, dtype=np.int64))
        end = self.pos + 8 * count
        if end > len(self.buf):
            raise FormatError(
                f"file truncated: need {8 * count} bytes for array {tuple(shape)}, "
                f"{len(self.buf) - self.pos} available", self.pos)
        arr = np.frombuffer(self.buf, dtype=_LE_F64, count=count, offset=self.pos)
        self.pos = end
        return arr.astype(np.float64).reshape(shape)

    def finish(self) -> None:
        if self.pos != len(self.buf):
            raise FormatError(f"{len(self.buf) - self.pos} trailing bytes after payload", self.pos)


def read_container(path) -> tuple[dict[str, str], Payload]:
    buf = Path(path).read_bytes()
    if len(buf) < 16:
        raise FormatError("file too short for magic and header length", len(buf))
    magic = buf[:8]
    if magic[:6] != MAGIC_PREFIX:
        raise FormatError(f"bad magic {magic!r}", 0)
    if magic[6:] != VERSION:
        raise FormatError(f"unsupported version {magic[6:]!r}, expected {VERSION!r}", 6)
    (hlen,) = struct.unpack("<Q", buf[8:16])
    if 16 + hlen > len(buf):
        raise FormatError(f"header of {hlen} bytes runs past end of file", 16)
    try:
        text = buf[16:16 + hlen].decode("utf-8")
    except UnicodeDecodeError as exc:
        raise FormatError(f"header is not UTF-8: {exc.reason}", 16 + exc.start) from None
    fields: dict[str, str] = {}
    pos = 16
    for line in text.splitlines(keepends=True):
        body = line.rstrip("\n")
        if body:
            key, sep, value = body.partition("=")
            if not sep or not key:
                raise FormatError(f"malformed header line {body!r}", pos)
            if key in fields:
                raise FormatError(f"duplicate header key {key!r}", pos)
            fields[key] = value
        pos += len(line.encode("utf-8"))
    return fields, Payload(buf, 16 + hlen)


def _int_field(fields, key, minimum=0):
    try:
        value = int(fields[key])
    except KeyError:
        raise FormatError(f"header lacks required key {key!r}", 16) from None
    except ValueError:
        raise FormatError(f"header key {key!r} is not an integer: {fields[key]!r}", 16) from None
    if value < minimum:
        raise FormatError(f"header key {key!r}={value} below minimum {minimum}", 16)
    return value


def write_dataset(ds: OperatorDataset, path) -> None:
    """Write ``ds`` to ``path``. Empty or non-finite datasets are refused."""
    if ds.n_samples < 1:
        raise ValueError("refusing to write a dataset with no samples")
    if not ds.all_finite():
        raise ValueError("refusing to write a dataset containing NaN or Inf")
    fields: dict[str, object] = {
        "kind": "dataset",
        "benchmark_id": ds.benchmark_id,
        "N": ds.n_samples, "m": ds.m, "P": ds.n_queries,
        "d_u": ds.d_u, "d_s": ds.d_s, "d_x": ds.d_x, "d_y": ds.d_y,
        "tag_dim": ds.tags.shape[1],
        "shared_queries": int(ds.shared_queries),
        "seed": ds.seed,
        "cell_weight": float(ds.cell_weight),
    }
    for key, value in ds.config.items():
        fields[f"config.{key}"] = value

    def arrays():
        yield ds.sensors
        if ds.shared_queries:
            yield ds.y
        for i in range(ds.n_samples):
            yield ds.u[i]
            if not ds.shared_queries:
                yield ds.y[i]
            yield ds.s[i]
            yield ds.tags[i]

    write_container(path, fields, arrays())


def read_dataset(path) -> OperatorDataset:
    fields, payload = read_container(path)
    if fields.get("kind") != "dataset":
        raise FormatError(f"expected kind=dataset, found {fields.get('kind')!r}", 16)
    n = _int_field(fields, "N", 1)
    m = _int_field(fields, "m", 1)
    p = _int_field(fields, "P", 1)
    d_u, d_s, d_x, d_y = (_int_field(fields, k, 1) for k in ("d_u", "d_s", "d_x", "d_y"))
    tag_dim = _int_field(fields, "tag_dim")
    shared = _int_field(fields, "shared_queries") == 1
    sensors = payload.take((m, d_x))
    y = payload.take((p, d_y)) if shared else np.empty((n, p, d_y))
    u = np.empty((n, m, d_u))
    s = np.empty((n, p, d_s))
    tags = np.empty((n, tag_dim))
    for i in range(n):
        u[i] = payload.take((m, d_u))
        if not shared:
            y[i] = payload.take((p, d_y))
        s[i] = payload.take((p, d_s))
        tags[i] = payload.take((tag_dim,))
    payload.finish()
    config = {k[len("config."):]: v for k, v in fields.items() if k.startswith("config.")}
    try:
        return OperatorDataset(
            fields["benchmark_id"], sensors, u, y, s, tags,
            seed=int(fields["seed"]), cell_weight=float(fields["cell_weight"]), config=config,
        )
    except (KeyError, ValueError) as exc:
        raise FormatError(f"inconsistent header: {exc}", 16) from None
