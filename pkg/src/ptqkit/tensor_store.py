"""PTQT v1: a bit-exact container for named tensors plus one metadata document.

Layout (little-endian)::

    "PTQT" | u32 version | u32 tensor_count | u32 metadata_byte_len | metadata
    per tensor: u16 name_len | name | u8 dtype | u8 ndim | ndim x u64 dims
                | u64 data_offset | u64 data_byte_len
    zero padding to a 64-byte boundary
    data section (payloads back to back, in index order)
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Mapping

import numpy as np

MAGIC = b"PTQT"
VERSION = 1
ALIGNMENT = 64

DTYPE_CODES = {
    np.dtype("<f4"): 0,
    np.dtype("i1"): 1,
    np.dtype("<i2"): 2,
    np.dtype("<i4"): 3,
}
CODE_DTYPES = {code: dt for dt, code in DTYPE_CODES.items()}

_U64_MAX = 2**64 - 1


class ArchiveError(ValueError):
    """Base class for malformed or invalid archives."""


class BadMagicError(ArchiveError):
    pass


class UnsupportedVersionError(ArchiveError):
    pass


class TruncatedError(ArchiveError):
    pass


class ExtentError(ArchiveError):
    """Tensor payload overlaps another or lies outside the data section."""


class DuplicateNameError(ArchiveError):
    pass


class TensorNotFoundError(KeyError):
    pass


@dataclass(frozen=True, eq=False)
class TensorRecord:
    name: str
    data: np.ndarray

    def __post_init__(self):
        if not isinstance(self.name, str) or not self.name:
            raise ArchiveError("tensor name must be a non-empty string")
        if len(self.name.encode("utf-8")) > 0xFFFF:
            raise ArchiveError(f"tensor name too long: {self.name[:32]!r}...")
        arr = np.asarray(self.data)
        dt = arr.dtype.newbyteorder("<") if arr.dtype.byteorder == ">" else arr.dtype
        if np.dtype(dt) not in DTYPE_CODES:
            raise ArchiveError(f"unsupported dtype for {self.name!r}: {arr.dtype}")
        if arr.ndim > 255:
            raise ArchiveError(f"too many dimensions for {self.name!r}")
        arr = np.array(arr, dtype=dt, order="C", copy=True)
        arr.setflags(write=False)
        object.__setattr__(self, "data", arr)

    @property
    def dtype(self) -> np.dtype:
        return self.data.dtype

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def __eq__(self, other):
        if not isinstance(other, TensorRecord):
            return NotImplemented
        return (
            self.name == other.name
            and self.dtype == other.dtype
            and self.shape == other.shape
            and self.data.tobytes() == other.data.tobytes()
        )

    def __repr__(self):
        return f"TensorRecord({self.name!r}, dtype={self.dtype}, shape={self.shape})"


@dataclass(frozen=True)
class Archive:
    records: tuple[TensorRecord, ...] = ()
    metadata: str = ""
    _index: dict = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        records = tuple(self.records)
        index = {}
        for i, rec in enumerate(records):
            if rec.name in index:
                raise DuplicateNameError(f"duplicate tensor name {rec.name!r}")
            index[rec.name] = i
        object.__setattr__(self, "records", records)
        object.__setattr__(self, "_index", index)

    @classmethod
    def from_arrays(cls, arrays: Mapping[str, np.ndarray], metadata: str | Mapping[str, Any] = "") -> Archive:
        if not isinstance(metadata, str):
            metadata = dump_metadata(metadata)
        return cls(tuple(TensorRecord(k, v) for k, v in arrays.items()), metadata)

    @property
    def names(self) -> list[str]:
        return [r.name for r in self.records]

    def __len__(self):
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    def __contains__(self, name):
        return name in self._index

    def __getitem__(self, name: str) -> np.ndarray:
        return get_tensor(self, name).data

    def meta(self) -> dict:
        """The metadata document parsed as JSON (empty dict for an empty document)."""
        return json.loads(self.metadata) if self.metadata else {}


def dump_metadata(doc: Mapping[str, Any]) -> str:
    # sorted keys keep writes deterministic
    return json.dumps(doc, sort_keys=True, separators=(",", ":"), allow_nan=False)


def get_tensor(archive: Archive, name: str) -> TensorRecord:
    try:
        return archive.records[archive._index[name]]
    except KeyError:
        raise TensorNotFoundError(name) from None


def _element_count(shape: Iterable[int], name: str) -> int:
    n = 1
    for d in shape:
        n *= int(d)
        if n > _U64_MAX:
            raise ArchiveError(f"dimension product of {name!r} overflows 64 bits")
    return n


def write_archive(archive: Archive) -> bytes:
    meta = archive.metadata.encode("utf-8")
    if len(meta) > 0xFFFFFFFF:
        raise ArchiveError("metadata document too large")

    header = bytearray()
    header += MAGIC
    header += struct.pack("<III", VERSION, len(archive.records), len(meta))
    header += meta

    payloads = []
    offset = 0
    for rec in archive.records:
        name_b = rec.name.encode("utf-8")
        _element_count(rec.shape, rec.name)
        payload = rec.data.tobytes(order="C")
        header += struct.pack("<H", len(name_b)) + name_b
        header += struct.pack("<BB", DTYPE_CODES[rec.dtype], len(rec.shape))
        header += struct.pack(f"<{len(rec.shape)}Q", *rec.shape)
        header += struct.pack("<QQ", offset, len(payload))
        payloads.append(payload)
        offset += len(payload)

    header += b"\x00" * (-len(header) % ALIGNMENT)
    return bytes(header) + b"".join(payloads)


class _Reader:
    def __init__(self, buf: bytes):
        self.buf = buf
        self.pos = 0

    def take(self, n: int, what: str) -> bytes:
        if self.pos + n > len(self.buf):
            raise TruncatedError(f"file truncated while reading {what}")
        out = self.buf[self.pos : self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str, what: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt), what))


def read_archive(buf: bytes) -> Archive:
    buf = bytes(buf)
    r = _Reader(buf)
    magic = r.take(4, "magic")
    if magic != MAGIC:
        raise BadMagicError(f"bad magic {magic!r}, expected {MAGIC!r}")
    (version,) = r.unpack("<I", "version")
    if version != VERSION:
        raise UnsupportedVersionError(f"unsupported PTQT version {version}")
    count, meta_len = r.unpack("<II", "header")
    try:
        metadata = r.take(meta_len, "metadata").decode("utf-8")
    except UnicodeDecodeError as e:
        raise ArchiveError(f"metadata is not valid UTF-8: {e}") from None

    entries = []
    for i in range(count):
        (name_len,) = r.unpack("<H", f"name length of tensor #{i}")
        try:
            name = r.take(name_len, f"name of tensor #{i}").decode("utf-8")
        except UnicodeDecodeError:
            raise ArchiveError(f"name of tensor #{i} is not valid UTF-8") from None
        code, ndim = r.unpack("<BB", f"dtype of {name!r}")
        if code not in CODE_DTYPES:
            raise ArchiveError(f"unknown dtype code {code} for {name!r}")
        dims = r.unpack(f"<{ndim}Q", f"shape of {name!r}")
        offset, nbytes = r.unpack("<QQ", f"extent of {name!r}")
        dtype = CODE_DTYPES[code]
        expected = _element_count(dims, name) * dtype.itemsize
        if nbytes != expected:
            raise ExtentError(f"{name!r}: data_byte_len {nbytes} does not match shape {dims} ({expected} bytes)")
        entries.append((name, dtype, dims, offset, nbytes))

    data_start = r.pos + (-r.pos % ALIGNMENT)
    if data_start > len(buf):
        raise TruncatedError("file truncated before data section")
    data_len = len(buf) - data_start

    spans = sorted((off, off + n, name) for name, _, _, off, n in entries if n > 0)
    for (s0, e0, n0), (s1, _, n1) in zip(spans, spans[1:]):
        if s1 < e0:
            raise ExtentError(f"tensor {n1!r} overlaps {n0!r}")

    records = []
    for name, dtype, dims, offset, nbytes in entries:
        if offset + nbytes > data_len:
            raise TruncatedError(f"data for tensor {name!r} is truncated ({offset + nbytes} > {data_len} bytes)")
        raw = buf[data_start + offset : data_start + offset + nbytes]
        arr = np.frombuffer(raw, dtype=dtype).reshape(dims)
        records.append(TensorRecord(name, arr))
    return Archive(tuple(records), metadata)


def save(path: str | Path, archive: Archive) -> None:
    Path(path).write_bytes(write_archive(archive))


def load(path: str | Path) -> Archive:
    return read_archive(Path(path).read_bytes())
