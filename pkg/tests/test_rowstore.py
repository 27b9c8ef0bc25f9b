import json
import struct
from concurrent.futures import ThreadPoolExecutor

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from bagm.errors import CorruptHeader, IndexOutOfRange, SchemaError, SchemaMismatch, StoreError, TruncatedFile
from bagm.rowstore import (HEADER_SIZE, Column, RowStore, Schema, fetch_rows, open_store, read_header, scan,
                           sidecar_path, write_store)


def numeric_schema(p=3):
    return Schema(tuple(Column(f"x{j}", "numeric") for j in range(p)) + (Column("y", "response"),))


def matrix_data(M):
    data = {f"x{j}": M[:, j] for j in range(M.shape[1] - 1)}
    data["y"] = M[:, -1]
    return data


@pytest.fixture
def known(tmp_path, rng):
    M = rng.normal(size=(100, 4))
    store = write_store(tmp_path / "s.bagm", numeric_schema(), matrix_data(M))
    yield store, M
    store.close()


def test_round_trip_100_records(known):
    store, M = known
    assert store.N == 100 and store.p == 3
    np.testing.assert_array_equal(store.read_range(0, 100), M)


def test_bit_exact_layout(tmp_path):
    schema = numeric_schema(1)
    path = tmp_path / "t.bagm"
    write_store(path, schema, {"x0": np.array([1.5, -2.0]), "y": np.array([0.25, 3.0])}).close()
    raw = path.read_bytes()
    expected = b"BAGM" + struct.pack("<H", 1) + struct.pack("<Q", schema.digest) + struct.pack("<Q", 2)
    expected += struct.pack("<4d", 1.5, 0.25, -2.0, 3.0)
    assert raw == expected
    assert HEADER_SIZE == 22
    assert read_header(path) == (1, schema.digest, 2)


def test_truncated_file(known):
    store, _ = known
    path = store.path
    store.close()
    data = path.read_bytes()
    path.write_bytes(data[:-3])
    with pytest.raises(TruncatedFile):
        open_store(path)
    path.write_bytes(data + b"\0" * 8)
    with pytest.raises(TruncatedFile):
        open_store(path)
    path.write_bytes(data[:10])
    with pytest.raises(TruncatedFile):
        open_store(path)


def test_wrong_magic(known):
    store, _ = known
    path = store.path
    store.close()
    data = bytearray(path.read_bytes())
    data[:4] = b"NOPE"
    path.write_bytes(bytes(data))
    with pytest.raises(CorruptHeader):
        open_store(path)


def test_wrong_version(known):
    store, _ = known
    path = store.path
    store.close()
    data = bytearray(path.read_bytes())
    data[4:6] = struct.pack("<H", 9)
    path.write_bytes(bytes(data))
    with pytest.raises(CorruptHeader):
        open_store(path)


def test_schema_mismatch(known, tmp_path):
    store, _ = known
    path = store.path
    store.close()
    with pytest.raises(SchemaMismatch):
        open_store(path, numeric_schema(2))
    side = json.loads(sidecar_path(path).read_text())
    side["columns"][0]["kind"] = "categorical"
    side["columns"][0]["levels"] = ["a", "b"]
    sidecar_path(path).write_text(json.dumps(side))
    with pytest.raises(SchemaMismatch):
        open_store(path)
    sidecar_path(path).unlink()
    with pytest.raises(SchemaMismatch):
        open_store(path)
    with pytest.raises(StoreError):
        open_store(tmp_path / "missing.bagm")


def test_duplicate_indices(known):
    store, M = known
    block = fetch_rows(store, [0, 0, 0])
    assert block.shape == (3, 4)
    np.testing.assert_array_equal(block, np.repeat(M[:1], 3, axis=0))


def test_out_of_range(known):
    store, _ = known
    with pytest.raises(IndexOutOfRange):
        fetch_rows(store, [store.N])
    with pytest.raises(IndexOutOfRange):
        fetch_rows(store, [-1])
    assert store.read_counter == 0


def test_fetch_order(known):
    store, M = known
    np.testing.assert_array_equal(fetch_rows(store, [2, 0]), M[[2, 0]])


def test_scan_visitors(known):
    store, M = known
    assert scan(store, lambda acc, b: acc + b.shape[0], 0, chunk_size=7) == 100
    total = scan(store, lambda acc, b: acc + b[:, -1].sum(), 0.0, chunk_size=13)
    assert total == pytest.approx(sum(float(v) for v in M[:, -1]), rel=1e-14)


def test_scan_mean_of_constant_column(tmp_path):
    n = 37
    schema = numeric_schema(1)
    store = RowStore.from_columns(schema, {"x0": np.full(n, 2.5), "y": np.arange(n, dtype=float)})
    s, c = scan(store, lambda acc, b: (acc[0] + b[:, 0].sum(), acc[1] + len(b)), (0.0, 0), chunk_size=5)
    assert s / c == 2.5


def test_read_counter(known):
    store, _ = known
    fetch_rows(store, np.arange(10))
    fetch_rows(store, [3, 3])
    assert store.read_counter == 12
    scan(store, lambda a, b: a, None)
    assert store.read_counter == 112
    store.raw_record(5)
    assert store.read_counter == 112
    store.reset_counter()
    assert store.read_counter == 0


def test_concurrent_fetch_matches_sequential(known, rng):
    store, _ = known
    idx = [rng.integers(0, 100, 50) for _ in range(64)]
    seq = [fetch_rows(store, i) for i in idx]
    store.reset_counter()
    with ThreadPoolExecutor(8) as pool:
        par = list(pool.map(lambda i: fetch_rows(store, i), idx))
    for a, b in zip(seq, par):
        np.testing.assert_array_equal(a, b)
    assert store.read_counter == 64 * 50


def test_categorical_expansion():
    schema = Schema((Column("c", "categorical", ("a", "b", "c", "d")), Column("x", "numeric"),
                     Column("y", "response")))
    assert schema.p == 4
    assert schema.design_names == ["c[b]", "c[c]", "c[d]", "x"]
    store = RowStore.from_columns(schema, {"c": np.array([0, 3, 1]), "x": np.array([1.0, 2.0, 3.0]),
                                           "y": np.array([0.0, 1.0, 0.0])})
    block = store.read_range(0, 3)
    np.testing.assert_array_equal(block, [[0, 0, 0, 1, 0], [0, 0, 1, 2, 1], [1, 0, 0, 3, 0]])


def test_schema_validation():
    with pytest.raises(SchemaError):
        Schema((Column("x", "numeric"),))
    with pytest.raises(SchemaError):
        Schema((Column("x", "numeric"), Column("y", "response"), Column("z", "response")))
    with pytest.raises(SchemaError):
        Column("c", "categorical", ())
    with pytest.raises(SchemaError):
        Column("c", "bogus")
    with pytest.raises(SchemaError):
        RowStore.from_columns(Schema((Column("c", "categorical", ("a",)), Column("y", "response"))),
                              {"c": np.array([1]), "y": np.array([0.0])})


def test_schema_json_round_trip():
    schema = Schema((Column("c", "categorical", ("lo", "hi")), Column("x", "numeric", mean=1.0, sd=2.0),
                     Column("y", "response")))
    again = Schema.from_json(json.loads(json.dumps(schema.to_json())))
    assert again == schema and again.digest == schema.digest


def test_empty_store(tmp_path):
    store = write_store(tmp_path / "e.bagm", numeric_schema(1), {"x0": np.array([]), "y": np.array([])})
    assert store.N == 0
    assert scan(store, lambda a, b: a + 1, 0) == 0


def test_writer_removes_partial_files_on_error(tmp_path):
    from bagm.rowstore import StoreWriter
    path = tmp_path / "bad.bagm"
    with pytest.raises(RuntimeError):
        with StoreWriter(path, numeric_schema(1)) as w:
            w.write({"x0": np.array([1.0]), "y": np.array([2.0])})
            raise RuntimeError("boom")
    assert not path.exists() and not sidecar_path(path).exists()


@settings(max_examples=50, deadline=None)
@given(rows=st.integers(0, 40), p=st.integers(1, 4), seed=st.integers(0, 2**32 - 1))
def test_from_columns_round_trip(rows, p, seed):
    M = np.random.default_rng(seed).normal(size=(rows, p + 1))
    store = RowStore.from_columns(numeric_schema(p), matrix_data(M))
    np.testing.assert_array_equal(store.read_range(0, rows), M)
    if rows:
        idx = np.random.default_rng(seed + 1).integers(0, rows, 10)
        np.testing.assert_array_equal(fetch_rows(store, idx), M[idx])
