"""Weight manifest: a JSON header followed by one little-endian float32 blob.

File layout::

    magic      8 bytes   b"TBNNWMF\\0"
    version    uint32 LE
    hdr_len    uint64 LE
    header     hdr_len bytes of UTF-8 JSON
    padding    zero bytes up to a multiple of 4
    blob       little-endian float32 values

The header is ``{"format_version", "metadata", "tensors": [{"name", "shape",
"offset", "count"}]}`` with ``offset`` in bytes from the start of the blob.
"""

from __future__ import annotations

import hashlib
import json
import struct
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..errors import (DataError, MissingTensorError, ShapeMismatchError, UnusedTensorError,
                      VersionMismatchError)
from .module import DTYPE

MAGIC = b"TBNNWMF\0"
FORMAT_VERSION = 1
_PREFIX = struct.Struct("<8sIQ")


@dataclass
class TensorEntry:
    shape: tuple
    offset: int

    @property
    def count(self):
        return int(np.prod(self.shape, dtype=np.int64))


@dataclass
class WeightManifest:
    entries: dict = field(default_factory=dict)
    blob: bytes = b""
    metadata: dict = field(default_factory=dict)
    format_version: int = FORMAT_VERSION

    @classmethod
    def from_arrays(cls, arrays, metadata=None):
        entries, chunks, offset = {}, [], 0
        for name, arr in arrays.items():
            a = np.ascontiguousarray(arr, dtype="<f4")
            entries[name] = TensorEntry(tuple(a.shape), offset)
            chunks.append(a.tobytes())
            offset += a.nbytes
        return cls(entries, b"".join(chunks), dict(metadata or {}))

    def array(self, name):
        e = self.entries[name]
        a = np.frombuffer(self.blob, dtype="<f4", count=e.count, offset=e.offset)
        return a.reshape(e.shape).astype(DTYPE)

    def arrays(self):
        return {name: self.array(name) for name in self.entries}

    @property
    def num_values(self):
        return sum(e.count for e in self.entries.values())

    def digest(self):
        return hashlib.sha256(self.blob).hexdigest()[:16]

    def bind(self, specs, allow_unused=False):
        """Resolve every ``ParamSpec`` to an array; all problems are reported at once."""
        specs = list(specs)
        missing = [s.name for s in specs if s.name not in self.entries]
        bad = {s.name: (s.shape, self.entries[s.name].shape) for s in specs
               if s.name in self.entries and tuple(self.entries[s.name].shape) != tuple(s.shape)}
        if missing:
            err = MissingTensorError(missing)
            if bad:
                err.args = (f"{err}; {ShapeMismatchError(bad)}",)
            raise err
        if bad:
            raise ShapeMismatchError(bad)
        wanted = {s.name for s in specs}
        unused = [n for n in self.entries if n not in wanted]
        if unused and not allow_unused:
            raise UnusedTensorError(unused)
        return {s.name: self.array(s.name) for s in specs}

    def to_bytes(self):
        header = {
            "format_version": self.format_version,
            "metadata": self.metadata,
            "tensors": [{"name": n, "shape": list(e.shape), "offset": e.offset, "count": e.count}
                        for n, e in self.entries.items()],
        }
        hdr = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
        pad = (-(_PREFIX.size + len(hdr))) % 4
        return _PREFIX.pack(MAGIC, self.format_version, len(hdr)) + hdr + b"\0" * pad + self.blob

    def save(self, path):
        Path(path).write_bytes(self.to_bytes())

    @classmethod
    def from_bytes(cls, raw):
        if len(raw) < _PREFIX.size:
            raise DataError("weight file too short")
        magic, version, hdr_len = _PREFIX.unpack_from(raw)
        if magic != MAGIC:
            raise DataError("not a weight manifest (bad magic)")
        if version != FORMAT_VERSION:
            raise VersionMismatchError(
                f"weight manifest version {version} unsupported (expected {FORMAT_VERSION})")
        start = _PREFIX.size
        try:
            header = json.loads(raw[start:start + hdr_len].decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise DataError(f"corrupt manifest header: {exc}") from None
        if header.get("format_version") != version:
            raise VersionMismatchError("header and prefix versions disagree")
        blob_start = start + hdr_len + (-(start + hdr_len)) % 4
        blob = bytes(raw[blob_start:])
        entries = {}
        for t in header["tensors"]:
            e = TensorEntry(tuple(t["shape"]), int(t["offset"]))
            if e.offset % 4 or e.offset + 4 * e.count > len(blob):
                raise DataError(f"tensor {t['name']} lies outside the blob")
            entries[t["name"]] = e
        return cls(entries, blob, header.get("metadata", {}), version)


def load_manifest(path):
    try:
        raw = Path(path).read_bytes()
    except OSError as exc:
        raise DataError(f"cannot read weights {path}: {exc}") from None
    return WeightManifest.from_bytes(raw)


def _tensor_rng(seed, name):
    return np.random.default_rng([int(seed), zlib.crc32(name.encode("utf-8"))])


def init_tensor(spec, seed):
    """Deterministic initial value for one parameter.

    ``uniform`` draws from U(-1/sqrt(fan_in), 1/sqrt(fan_in)) using a PCG64
    stream keyed by (seed, crc32(name)), so values do not depend on the order
    in which parameters are visited.
    """
    if spec.init == "zeros":
        return np.zeros(spec.shape, DTYPE)
    if spec.init == "ones":
        return np.ones(spec.shape, DTYPE)
    if spec.init == "prelu":
        return np.full(spec.shape, 0.25, DTYPE)
    bound = 1.0 / np.sqrt(spec.fan_in)
    return _tensor_rng(seed, spec.name).uniform(-bound, bound, spec.shape).astype(DTYPE)


def seed_init(graph, seed, metadata=None):
    """Fill every parameter of ``graph`` (a Module or list of ParamSpec) deterministically."""
    specs = graph.param_specs() if hasattr(graph, "param_specs") else list(graph)
    meta = {"init": "uniform-fan-in", "seed": int(seed)}
    meta.update(metadata or {})
    return WeightManifest.from_arrays({s.name: init_tensor(s, seed) for s in specs}, meta)
