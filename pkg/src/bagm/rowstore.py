"""Fixed-width binary row store with O(1) random access.

File layout, all little-endian::

    magic  b"BAGM"   4 bytes
    version          u16
    schema digest    u64
    N                u64
    N records        one 8-byte field per schema column

Numeric and response fields are IEEE-754 doubles; categorical fields are
int64 level codes. The schema (names, kinds, level labels) and ingest
metadata live in a JSON sidecar next to the data file, ``<path>.schema.json``;
its structural digest must match the header.

Every record fetched through :func:`fetch_rows` or :func:`scan` advances the
store's ``read_counter``, so sampling cost can be asserted directly.
"""

from __future__ import annotations

import hashlib
import json
import os
import struct
import threading
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterator, Mapping, Optional, Sequence

import numpy as np

from .errors import CorruptHeader, IndexOutOfRange, SchemaError, SchemaMismatch, StoreError, TruncatedFile

MAGIC = b"BAGM"
VERSION = 1
HEADER = struct.Struct("<4sHQQ")
HEADER_SIZE = HEADER.size  # 22
FIELD_WIDTH = 8
SIDECAR_SUFFIX = ".schema.json"

KINDS = ("response", "numeric", "categorical")


@dataclass(frozen=True)
class Column:
    name: str
    kind: str
    levels: Optional[tuple] = None
    mean: Optional[float] = None
    sd: Optional[float] = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise SchemaError(f"column {self.name!r}: unknown kind {self.kind!r}")
        if self.kind == "categorical":
            if not self.levels or len(self.levels) < 1:
                raise SchemaError(f"categorical column {self.name!r} needs at least one level")
            object.__setattr__(self, "levels", tuple(str(v) for v in self.levels))
        elif self.levels is not None:
            raise SchemaError(f"column {self.name!r} of kind {self.kind} cannot have levels")

    @property
    def n_levels(self) -> int:
        return len(self.levels) if self.levels else 0

    def to_json(self) -> dict:
        d = {"name": self.name, "kind": self.kind}
        if self.levels is not None:
            d["levels"] = list(self.levels)
        if self.mean is not None:
            d["mean"] = self.mean
            d["sd"] = self.sd
        return d

    @classmethod
    def from_json(cls, d: Mapping) -> "Column":
        levels = d.get("levels")
        return cls(d["name"], d["kind"], tuple(levels) if levels is not None else None, d.get("mean"), d.get("sd"))


@dataclass(frozen=True)
class Schema:
    """Ordered physical columns; exactly one is the response."""

    columns: tuple

    def __post_init__(self):
        cols = tuple(self.columns)
        object.__setattr__(self, "columns", cols)
        names = [c.name for c in cols]
        if len(set(names)) != len(names):
            raise SchemaError(f"duplicate column names in {names}")
        n_resp = sum(c.kind == "response" for c in cols)
        if n_resp != 1:
            raise SchemaError(f"schema needs exactly one response column, found {n_resp}")
        if len(cols) < 2:
            raise SchemaError("schema needs at least one covariate column")

    @property
    def record_width(self) -> int:
        return FIELD_WIDTH * len(self.columns)

    @property
    def response(self) -> Column:
        return next(c for c in self.columns if c.kind == "response")

    @property
    def design_names(self) -> list:
        """Names of decoded covariate columns, categoricals expanded drop-first."""
        out = []
        for c in self.columns:
            if c.kind == "numeric":
                out.append(c.name)
            elif c.kind == "categorical":
                out.extend(f"{c.name}[{lvl}]" for lvl in c.levels[1:])
        return out

    @property
    def p(self) -> int:
        return len(self.design_names)

    @property
    def digest(self) -> int:
        structure = [[c.name, c.kind, c.n_levels] for c in self.columns]
        h = hashlib.blake2b(json.dumps(structure, separators=(",", ":")).encode(), digest_size=8)
        return int.from_bytes(h.digest(), "little")

    def to_json(self) -> dict:
        return {"version": VERSION, "digest": f"{self.digest:016x}", "columns": [c.to_json() for c in self.columns]}

    @classmethod
    def from_json(cls, d: Mapping) -> "Schema":
        return cls(tuple(Column.from_json(c) for c in d["columns"]))


def sidecar_path(path) -> Path:
    return Path(str(path) + SIDECAR_SUFFIX)


class _Decoder:
    """Turns raw ``(rows, ncols)`` float64 views into design-plus-response blocks."""

    def __init__(self, schema: Schema):
        self.schema = schema
        self.width = schema.p + 1
        plan = []
        out = 0
        for j, c in enumerate(schema.columns):
            if c.kind == "numeric":
                plan.append((j, out, 0))
                out += 1
            elif c.kind == "categorical":
                plan.append((j, out, c.n_levels))
                out += c.n_levels - 1
        self.plan = plan
        self.response_col = next(j for j, c in enumerate(schema.columns) if c.kind == "response")

    def __call__(self, raw: np.ndarray) -> np.ndarray:
        block = np.empty((raw.shape[0], self.width), dtype=np.float64)
        for j, out, levels in self.plan:
            if levels == 0:
                block[:, out] = raw[:, j]
            elif levels > 1:
                codes = np.ascontiguousarray(raw[:, j]).view("<i8")
                block[:, out : out + levels - 1] = codes[:, None] == np.arange(1, levels)
        block[:, -1] = raw[:, self.response_col]
        return block


class RowStore:
    """Read-only random-access view of ``N`` fixed-width records.

    Safe for concurrent readers; ``read_counter`` updates are locked.
    """

    def __init__(self, schema: Schema, raw: np.ndarray, path: Optional[Path] = None, metadata: Optional[dict] = None):
        self.schema = schema
        self._raw = raw
        self.N = int(raw.shape[0])
        self.path = path
        self.metadata = metadata or {}
        self._decode = _Decoder(schema)
        self._lock = threading.Lock()
        self._reads = 0

    def __repr__(self):
        where = self.path if self.path is not None else "<memory>"
        return f"RowStore(N={self.N}, p={self.p}, backing={where})"

    def __len__(self):
        return self.N

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()

    def close(self):
        raw = self._raw
        self._raw = raw[:0]
        mm = getattr(raw, "_mmap", None)
        del raw
        if mm is not None:
            try:
                mm.close()
            except (BufferError, ValueError):
                pass

    @property
    def p(self) -> int:
        return self.schema.p

    @property
    def design_names(self) -> list:
        return self.schema.design_names

    @property
    def read_counter(self) -> int:
        return self._reads

    def reset_counter(self) -> None:
        with self._lock:
            self._reads = 0

    def _count(self, rows: int) -> None:
        with self._lock:
            self._reads += rows

    def raw_record(self, i: int) -> bytes:
        """Exact bytes of record ``i``; does not advance the read counter."""
        if not 0 <= i < self.N:
            raise IndexOutOfRange(f"record {i} outside [0, {self.N})")
        return self._raw[i].tobytes()

    def fetch(self, idx) -> np.ndarray:
        idx = np.asarray(getattr(idx, "indices", idx), dtype=np.int64).reshape(-1)
        if idx.size and (idx.min() < 0 or idx.max() >= self.N):
            bad = int(idx[(idx < 0) | (idx >= self.N)][0])
            raise IndexOutOfRange(f"record {bad} outside [0, {self.N})")
        block = self._decode(self._raw[idx])
        self._count(idx.size)
        return block

    def read_range(self, start: int, stop: int) -> np.ndarray:
        start, stop = max(0, start), min(self.N, stop)
        block = self._decode(np.asarray(self._raw[start:stop]))
        self._count(stop - start)
        return block

    def chunks(self, chunk_size: int = 65536) -> Iterator[np.ndarray]:
        if chunk_size < 1:
            raise ValueError("chunk_size must be >= 1")
        for start in range(0, self.N, chunk_size):
            yield self.read_range(start, start + chunk_size)

    @classmethod
    def from_bytes(cls, buffer, schema: Schema, metadata: Optional[dict] = None) -> "RowStore":
        """Open an in-memory store image (header plus records)."""
        buffer = memoryview(buffer)
        N = _check_header(bytes(buffer[:HEADER_SIZE]), len(buffer), schema)
        raw = np.frombuffer(buffer, dtype="<f8", count=N * len(schema.columns), offset=HEADER_SIZE)
        return cls(schema, raw.reshape(N, len(schema.columns)), metadata=metadata)

    @classmethod
    def from_columns(cls, schema: Schema, data: Mapping[str, np.ndarray], metadata: Optional[dict] = None) -> "RowStore":
        """Build an in-memory store from one array per schema column."""
        return cls.from_bytes(encode_store(schema, data), schema, metadata)


def _check_header(head: bytes, total_size: int, schema: Optional[Schema]) -> int:
    if len(head) >= 4 and head[:4] != MAGIC:
        raise CorruptHeader(f"bad magic {head[:4]!r}, expected {MAGIC!r}")
    if len(head) < HEADER_SIZE:
        raise TruncatedFile(f"file is {total_size} bytes, shorter than the {HEADER_SIZE}-byte header")
    magic, version, digest, N = HEADER.unpack(head)
    if version != VERSION:
        raise CorruptHeader(f"unsupported store version {version}")
    if schema is not None:
        if digest != schema.digest:
            raise SchemaMismatch(f"header schema digest {digest:016x} does not match schema {schema.digest:016x}")
        expected = HEADER_SIZE + N * schema.record_width
        if total_size != expected:
            raise TruncatedFile(f"file is {total_size} bytes; header declares N={N} records, i.e. {expected} bytes")
    return N


def read_header(path) -> tuple:
    """``(version, digest, N)`` from a store file."""
    with open(path, "rb") as fh:
        head = fh.read(HEADER_SIZE)
    _check_header(head, os.path.getsize(path), None)
    return HEADER.unpack(head)[1:]


def open_store(path, schema: Optional[Schema] = None) -> RowStore:
    """Memory-map a store file for random reads.

    The schema is read from the sidecar unless given. Raises
    :class:`CorruptHeader`, :class:`TruncatedFile` or :class:`SchemaMismatch`.
    """
    path = Path(path)
    if not path.exists():
        raise StoreError(f"store file {path} does not exist")
    metadata = {}
    if schema is None:
        side = sidecar_path(path)
        try:
            with open(side) as fh:
                metadata = json.load(fh)
            schema = Schema.from_json(metadata)
        except FileNotFoundError:
            raise SchemaMismatch(f"schema sidecar {side} is missing") from None
        except (KeyError, TypeError, ValueError) as exc:
            raise SchemaMismatch(f"schema sidecar {side} is unreadable: {exc}") from None
    size = path.stat().st_size
    with open(path, "rb") as fh:
        head = fh.read(HEADER_SIZE)
    N = _check_header(head, size, schema)
    ncols = len(schema.columns)
    if N == 0:
        raw = np.empty((0, ncols), dtype="<f8")
    else:
        raw = np.memmap(path, dtype="<f8", mode="r", offset=HEADER_SIZE, shape=(N, ncols))
    return RowStore(schema, raw, path=path, metadata=metadata)


def _encode_columns(schema: Schema, data: Mapping[str, np.ndarray]) -> np.ndarray:
    lengths = {len(np.asarray(data[c.name])) for c in schema.columns if c.name in data}
    missing = [c.name for c in schema.columns if c.name not in data]
    if missing:
        raise SchemaError(f"no data for columns {missing}")
    if len(lengths) != 1:
        raise SchemaError(f"columns have differing lengths {sorted(lengths)}")
    N = lengths.pop()
    out = np.empty((N, len(schema.columns)), dtype="<f8")
    for j, c in enumerate(schema.columns):
        col = np.asarray(data[c.name])
        if c.kind == "categorical":
            codes = col.astype("<i8")
            if codes.size and (codes.min() < 0 or codes.max() >= c.n_levels):
                raise SchemaError(f"column {c.name!r}: codes must lie in [0, {c.n_levels})")
            out[:, j] = codes.view("<f8")
        else:
            out[:, j] = col.astype(np.float64)
    return out


def encode_store(schema: Schema, data: Mapping[str, np.ndarray]) -> bytes:
    records = _encode_columns(schema, data)
    return HEADER.pack(MAGIC, VERSION, schema.digest, records.shape[0]) + records.tobytes()


class StoreWriter:
    """Append records to a new store file; the header's N is patched on close."""

    def __init__(self, path, schema: Schema, metadata: Optional[dict] = None):
        self.path = Path(path)
        self.schema = schema
        self.metadata = metadata or {}
        self.N = 0
        self._fh = open(self.path, "wb")
        self._fh.write(HEADER.pack(MAGIC, VERSION, schema.digest, 0))

    def write(self, data: Mapping[str, np.ndarray]) -> None:
        records = _encode_columns(self.schema, data)
        self._fh.write(records.tobytes())
        self.N += records.shape[0]

    def close(self) -> None:
        if self._fh.closed:
            return
        self._fh.seek(0)
        self._fh.write(HEADER.pack(MAGIC, VERSION, self.schema.digest, self.N))
        self._fh.close()
        side = dict(self.schema.to_json())
        side.update({k: v for k, v in self.metadata.items() if k not in side})
        with open(sidecar_path(self.path), "w") as fh:
            json.dump(side, fh, indent=2)
            fh.write("\n")

    def __enter__(self):
        return self

    def __exit__(self, exc_type, *exc):
        self.close()
        if exc_type is not None:
            for p in (self.path, sidecar_path(self.path)):
                try:
                    p.unlink()
                except FileNotFoundError:
                    pass


def write_store(path, schema: Schema, data: Mapping[str, np.ndarray], metadata: Optional[dict] = None) -> RowStore:
    with StoreWriter(path, schema, metadata) as w:
        w.write(data)
    return open_store(path)


def fetch_rows(store: RowStore, idx) -> np.ndarray:
    """Decode records ``idx`` (array or :class:`~bagm.sampler.SubsampleIndex`) in order.

    Returns an ``n x (p + 1)`` block with the response in the last column.
    Duplicate indices give duplicate rows. Advances ``read_counter`` by ``n``.
    """
    return store.fetch(idx)


def scan(store: RowStore, visitor: Callable, init=None, chunk_size: int = 65536):
    """Fold ``visitor(acc, block)`` over the store in record order and return the result.

    Each record is visited exactly once; ``read_counter`` advances by ``N``.
    """
    acc = init
    for block in store.chunks(chunk_size):
        acc = visitor(acc, block)
    return acc
