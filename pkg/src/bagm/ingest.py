"""CSV to row-store conversion.

Two passes over the CSV: the first validates every row, learns categorical
level dictionaries and accumulates numeric moments; the second writes
standardised numerics (population divisor ``N``), raw responses and integer
level codes. Level order is first-seen unless declared, and the first level
is the dropped dummy baseline. Ingestion is a one-off O(N) cost, separate
from the O(nK) estimation cost.

Schema specs are either ``"name:kind,..."`` with kinds ``numeric``,
``categorical`` (optionally ``categorical=a|b|c`` to fix the levels) and
``response``, or a JSON document
``{"columns": [{"name": ..., "kind": ..., "levels": [...]}], "intercept": true}``.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from .errors import (EmptyInput, HeaderMismatch, NonNumericValue, RaggedRow, SchemaError, UnknownLevel,
                     ZeroVariance)
from .rowstore import Column, RowStore, Schema, StoreWriter, open_store

INTERCEPT = "intercept"


@dataclass(frozen=True)
class SpecColumn:
    name: str
    kind: str
    levels: Optional[tuple] = None


@dataclass(frozen=True)
class SchemaSpec:
    columns: tuple
    intercept: bool = False

    def __post_init__(self):
        names = [c.name for c in self.columns]
        if len(set(names)) != len(names):
            raise SchemaError(f"duplicate names in schema spec: {names}")
        n_resp = sum(c.kind == "response" for c in self.columns)
        if n_resp != 1:
            raise SchemaError(f"schema spec needs exactly one response column, found {n_resp}")
        if self.intercept and INTERCEPT in names:
            raise SchemaError(f"column name {INTERCEPT!r} is reserved when an intercept is requested")
        if not any(c.kind != "response" for c in self.columns) and not self.intercept:
            raise SchemaError("schema spec has no covariates")


def parse_schema_spec(spec: str, intercept: bool = False) -> SchemaSpec:
    """Parse the flag grammar, an inline JSON object, or a path to a JSON file."""
    text = spec.strip()
    if text.endswith(".json") and Path(text).exists():
        text = Path(text).read_text()
    if text.startswith("{"):
        try:
            doc = json.loads(text)
            cols = tuple(SpecColumn(c["name"], c["kind"], tuple(c["levels"]) if c.get("levels") else None)
                         for c in doc["columns"])
        except (ValueError, KeyError, TypeError) as exc:
            raise SchemaError(f"bad JSON schema spec: {exc}") from None
        spec_obj = SchemaSpec(cols, bool(doc.get("intercept", intercept)))
    else:
        cols = []
        for item in text.replace(";", ",").split(","):
            item = item.strip()
            if not item:
                continue
            name, sep, kind = item.rpartition(":") if "=" not in item else _split_declared(item)
            if not sep or not name:
                raise SchemaError(f"bad schema item {item!r}; expected name:kind")
            levels = None
            if kind.startswith("categorical="):
                levels = tuple(v for v in kind.split("=", 1)[1].split("|") if v)
                kind = "categorical"
            cols.append(SpecColumn(name.strip(), kind.strip(), levels))
        spec_obj = SchemaSpec(tuple(cols), intercept)
    for c in spec_obj.columns:
        if c.kind not in ("numeric", "categorical", "response"):
            raise SchemaError(f"column {c.name!r}: unknown kind {c.kind!r}")
    return spec_obj


def _split_declared(item):
    head, eq, levels = item.partition("=")
    name, sep, kind = head.rpartition(":")
    return name, sep, kind + eq + levels


def _parse_float(value, line, column):
    try:
        x = float(value)
    except ValueError:
        raise NonNumericValue(f"row {line}, column {column!r}: {value!r} is not a number") from None
    if not math.isfinite(x):
        raise NonNumericValue(f"row {line}, column {column!r}: {value!r} is not finite")
    return x


class _Moments:
    # Welford running mean and sum of squared deviations.
    __slots__ = ("count", "mean", "m2")

    def __init__(self):
        self.count, self.mean, self.m2 = 0, 0.0, 0.0

    def add(self, x):
        self.count += 1
        d = x - self.mean
        self.mean += d / self.count
        self.m2 += d * (x - self.mean)

    @property
    def sd(self):
        return math.sqrt(self.m2 / self.count) if self.count else 0.0


def _rows(csv_path):
    with open(csv_path, newline="", encoding="utf-8-sig") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise EmptyInput(f"{csv_path} is empty; a header row is required") from None
        yield header
        for row in reader:
            if not row:
                continue
            yield reader.line_num, row


def _positions(header, spec):
    header = [h.strip() for h in header]
    pos = {}
    for c in spec.columns:
        if c.name not in header:
            raise HeaderMismatch(f"column {c.name!r} missing from CSV header {header}")
        pos[c.name] = header.index(c.name)
    return header, pos


def _first_pass(csv_path, spec):
    rows = _rows(csv_path)
    header, pos = _positions(next(rows), spec)
    moments = {c.name: _Moments() for c in spec.columns if c.kind == "numeric"}
    levels = {c.name: (list(c.levels) if c.levels else []) for c in spec.columns if c.kind == "categorical"}
    lookup = {name: {v: i for i, v in enumerate(lv)} for name, lv in levels.items()}
    declared = {c.name for c in spec.columns if c.kind == "categorical" and c.levels}
    N = 0
    for line, row in rows:
        if len(row) != len(header):
            raise RaggedRow(f"row {line}: {len(row)} fields, header has {len(header)}")
        for c in spec.columns:
            value = row[pos[c.name]].strip()
            if c.kind == "categorical":
                if value not in lookup[c.name]:
                    if c.name in declared:
                        raise UnknownLevel(f"row {line}, column {c.name!r}: level {value!r} not in {levels[c.name]}")
                    lookup[c.name][value] = len(levels[c.name])
                    levels[c.name].append(value)
            else:
                x = _parse_float(value, line, c.name)
                if c.kind == "numeric":
                    moments[c.name].add(x)
        N += 1
    if N == 0:
        raise EmptyInput(f"{csv_path} has a header but no data rows")
    return pos, moments, levels, lookup, N


def build_store(csv_path, schema_spec, out_path, intercept: Optional[bool] = None, chunk_rows: int = 8192) -> dict:
    """Convert ``csv_path`` into a store at ``out_path``; returns a summary dict.

    Raises :class:`UnknownLevel`, :class:`NonNumericValue`, :class:`RaggedRow`,
    :class:`EmptyInput`, :class:`HeaderMismatch` or :class:`ZeroVariance`,
    each naming the offending row or column.
    """
    spec = parse_schema_spec(schema_spec) if isinstance(schema_spec, str) else schema_spec
    if intercept is not None and intercept != spec.intercept:
        spec = SchemaSpec(spec.columns, intercept)
    pos, moments, levels, lookup, N = _first_pass(csv_path, spec)
    for name, m in moments.items():
        if m.sd == 0.0:
            raise ZeroVariance(f"column {name!r} has zero variance; cannot standardise")

    columns = [Column(INTERCEPT, "numeric")] if spec.intercept else []
    for c in spec.columns:
        if c.kind == "numeric":
            columns.append(Column(c.name, "numeric", mean=moments[c.name].mean, sd=moments[c.name].sd))
        elif c.kind == "categorical":
            columns.append(Column(c.name, "categorical", tuple(levels[c.name])))
        else:
            columns.append(Column(c.name, "response"))
    schema = Schema(tuple(columns))
    meta = {"source": str(csv_path), "standardization": "population (divisor N)"}

    def flush(writer, buf):
        data = {k: np.asarray(v) for k, v in buf.items()}
        if spec.intercept:
            data[INTERCEPT] = np.ones(len(next(iter(buf.values()))))
        writer.write(data)
        for v in buf.values():
            v.clear()

    with StoreWriter(out_path, schema, meta) as writer:
        rows = _rows(csv_path)
        next(rows)
        buf = {c.name: [] for c in spec.columns}
        for line, row in rows:
            for c in spec.columns:
                value = row[pos[c.name]].strip()
                if c.kind == "categorical":
                    buf[c.name].append(lookup[c.name][value])
                elif c.kind == "numeric":
                    m = moments[c.name]
                    buf[c.name].append((float(value) - m.mean) / m.sd)
                else:
                    buf[c.name].append(float(value))
            if len(buf[spec.columns[0].name]) >= chunk_rows:
                flush(writer, buf)
        if buf[spec.columns[0].name]:
            flush(writer, buf)
    return {
        "N": N,
        "path": str(out_path),
        "p": schema.p,
        "design_names": schema.design_names,
        "numeric": {name: {"mean": m.mean, "sd": m.sd} for name, m in moments.items()},
        "levels": levels,
    }


def schema_report(store: RowStore) -> str:
    """Human-readable description of a store's schema and ingest metadata."""
    s = store.schema
    lines = [
        f"records (N): {store.N}",
        f"record width: {s.record_width} bytes, {len(s.columns)} fields",
        f"design columns (p): {s.p}",
        "columns:",
    ]
    for c in s.columns:
        if c.kind == "categorical":
            lines.append(f"  {c.name:<16} categorical  {c.n_levels} levels, baseline {c.levels[0]!r}: "
                         + ", ".join(c.levels))
        elif c.kind == "numeric" and c.mean is not None:
            lines.append(f"  {c.name:<16} numeric      standardised, mean {c.mean:.6g}, sd {c.sd:.6g}")
        else:
            lines.append(f"  {c.name:<16} {c.kind}")
    lines.append("design: " + ", ".join(s.design_names))
    return "\n".join(lines) + "\n"
