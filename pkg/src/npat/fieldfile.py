"""FieldFile binary container and 16-bit PGM renderings.

Layout (all little-endian):

    magic  b"NPAT"
    u16    version
    u16    kind          0 field, 1 trace, 2 mask
    u16    ndim
    u32    dims[ndim]
    u16    dtype         1 = float64
    -- kind 1 only --
    f64    dt
    i16    interval      +1 for I+, -1 for I-
    i32    nodes[dims[1]][2]
    -- payload --
    f64    values, row-major
    u32    CRC32 of every preceding byte
"""
from __future__ import annotations

import io
import struct
import zlib
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Tuple, Union

import numpy as np
from PIL import Image

from .config import DTYPE_F64LE, FIELD_MAGIC, FIELD_VERSION, KIND_FIELD, KIND_MASK, KIND_TRACE, PGM_MAXVAL
from .errors import FieldFileError
from .wavesolver import Interval, MeasurementTrace

PathLike = Union[str, Path]

_HEAD = struct.Struct("<4sHHH")


@dataclass(frozen=True, eq=False)
class FieldFile:
    kind: int
    values: np.ndarray
    dt: Optional[float] = None
    interval: Optional[int] = None
    nodes: Optional[np.ndarray] = None

    @classmethod
    def field(cls, values: np.ndarray) -> "FieldFile":
        return cls(KIND_FIELD, np.asarray(values, dtype=np.float64))

    @classmethod
    def mask(cls, mask: np.ndarray) -> "FieldFile":
        return cls(KIND_MASK, np.asarray(mask, dtype=np.float64))

    @classmethod
    def trace(cls, trace: MeasurementTrace) -> "FieldFile":
        return cls(KIND_TRACE, np.asarray(trace.values, dtype=np.float64), trace.dt,
                   trace.interval.value, np.asarray(trace.nodes))

    def to_trace(self) -> MeasurementTrace:
        if self.kind != KIND_TRACE:
            raise FieldFileError(f"file holds kind {self.kind}, not a trace")
        return MeasurementTrace(self.values, self.dt, self.nodes, Interval(self.interval))

    def to_mask(self) -> np.ndarray:
        if self.kind != KIND_MASK:
            raise FieldFileError(f"file holds kind {self.kind}, not a mask")
        return self.values != 0

    def to_bytes(self) -> bytes:
        values = np.ascontiguousarray(self.values, dtype="<f8")
        if self.kind not in (KIND_FIELD, KIND_TRACE, KIND_MASK):
            raise FieldFileError(f"unknown kind {self.kind}")
        buf = io.BytesIO()
        buf.write(_HEAD.pack(FIELD_MAGIC, FIELD_VERSION, self.kind, values.ndim))
        buf.write(struct.pack(f"<{values.ndim}I", *values.shape))
        buf.write(struct.pack("<H", DTYPE_F64LE))
        if self.kind == KIND_TRACE:
            if values.ndim != 2 or self.nodes is None or self.nodes.shape != (values.shape[1], 2):
                raise FieldFileError("trace payload must be (n_steps + 1, n_nodes) with one node pair per column")
            buf.write(struct.pack("<dh", float(self.dt), int(self.interval)))
            buf.write(np.ascontiguousarray(self.nodes, dtype="<i4").tobytes())
        buf.write(values.tobytes())
        body = buf.getvalue()
        return body + struct.pack("<I", zlib.crc32(body))

    @classmethod
    def from_bytes(cls, data: bytes, source: str = "<bytes>") -> "FieldFile":
        if len(data) < _HEAD.size + 4:
            raise FieldFileError(f"{source}: truncated file")
        body, (crc,) = data[:-4], struct.unpack("<I", data[-4:])
        if zlib.crc32(body) != crc:
            raise FieldFileError(f"{source}: CRC mismatch")
        magic, version, kind, ndim = _HEAD.unpack_from(body, 0)
        if magic != FIELD_MAGIC:
            raise FieldFileError(f"{source}: not a FieldFile (magic {magic!r})")
        if version != FIELD_VERSION:
            raise FieldFileError(f"{source}: unsupported version {version}")
        off = _HEAD.size
        dims = struct.unpack_from(f"<{ndim}I", body, off)
        off += 4 * ndim
        (dtype,) = struct.unpack_from("<H", body, off)
        off += 2
        if dtype != DTYPE_F64LE:
            raise FieldFileError(f"{source}: unsupported dtype tag {dtype}")
        dt = interval = nodes = None
        if kind == KIND_TRACE:
            if ndim != 2:
                raise FieldFileError(f"{source}: trace must be two-dimensional")
            dt, interval = struct.unpack_from("<dh", body, off)
            off += 10
            n_nodes = dims[1]
            nodes = np.frombuffer(body, dtype="<i4", count=2 * n_nodes, offset=off).reshape(n_nodes, 2)
            nodes = nodes.astype(np.int64)
            off += 8 * n_nodes
        count = int(np.prod(dims))
        if len(body) - off != 8 * count:
            raise FieldFileError(f"{source}: payload has {len(body) - off} bytes, dims need {8 * count}")
        values = np.frombuffer(body, dtype="<f8", count=count, offset=off).reshape(dims).astype(np.float64)
        return cls(kind, values, dt, interval, nodes)

    def write(self, path: PathLike) -> Path:
        path = Path(path)
        path.write_bytes(self.to_bytes())
        return path

    @classmethod
    def read(cls, path: PathLike) -> "FieldFile":
        path = Path(path)
        try:
            data = path.read_bytes()
        except OSError as exc:
            raise FieldFileError(f"cannot read {path}: {exc.strerror}") from exc
        return cls.from_bytes(data, str(path))


def render_pgm(values: np.ndarray, path: PathLike) -> Tuple[float, float]:
    """Write a 16-bit binary PGM, min -> 0 and max -> 65535, y axis up. Returns (min, max)."""
    values = np.asarray(values, dtype=np.float64)
    lo, hi = float(values.min()), float(values.max())
    if hi > lo:
        q = np.rint((values - lo) / (hi - lo) * PGM_MAXVAL)
    else:
        q = np.zeros_like(values)
    pixels = np.ascontiguousarray(q.astype(np.int32).T[::-1])
    Image.fromarray(pixels).save(Path(path), format="PPM")
    return lo, hi


def decode_pgm(path: PathLike, value_range: Tuple[float, float]) -> np.ndarray:
    """Inverse of render_pgm up to quantisation (error <= range / 65535)."""
    lo, hi = value_range
    with Image.open(Path(path)) as img:
        pixels = np.array(img, dtype=np.float64)
    q = pixels[::-1].T
    return lo + q / PGM_MAXVAL * (hi - lo)
