from __future__ import annotations

import itertools

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from translog.embedder import (EmbeddingError, EmbeddingTable, NonFiniteValues, RowCountMismatch,
                               TruncatedFile, hashed_embedding, hashed_table, load_embeddings,
                               materialize, materialize_all, normalize_token, save_embeddings)
from translog.sessionizer import Session


@pytest.fixture
def table():
    rng = np.random.default_rng(0)
    return EmbeddingTable(rng.standard_normal((10, 16)).astype(np.float32))


def test_round_trip_is_bit_identical(tmp_path, table):
    save_embeddings(tmp_path / "e.bin", table)
    loaded = load_embeddings(tmp_path / "e.bin", expected_templates=10)
    assert loaded.dim == 16
    assert loaded.vectors.tobytes() == table.vectors.tobytes()


def test_row_count_mismatch(tmp_path, table):
    save_embeddings(tmp_path / "e.bin", EmbeddingTable(table.vectors[:9]))
    with pytest.raises(RowCountMismatch, match="row count mismatch"):
        load_embeddings(tmp_path / "e.bin", expected_templates=10)


def test_truncated_and_bad_files(tmp_path, table):
    save_embeddings(tmp_path / "e.bin", table)
    raw = (tmp_path / "e.bin").read_bytes()
    (tmp_path / "t.bin").write_bytes(raw[:-3])
    with pytest.raises(TruncatedFile):
        load_embeddings(tmp_path / "t.bin")
    (tmp_path / "m.bin").write_bytes(b"NOTMAGIC" + raw[8:])
    with pytest.raises(EmbeddingError):
        load_embeddings(tmp_path / "m.bin")


def test_non_finite_rejected(tmp_path, table):
    vec = table.vectors.copy()
    vec[3, 5] = np.nan
    with pytest.raises(NonFiniteValues):
        EmbeddingTable(vec)
    save_embeddings(tmp_path / "e.bin", table)
    raw = bytearray((tmp_path / "e.bin").read_bytes())
    raw[-4:] = np.array([np.inf], "<f4").tobytes()
    (tmp_path / "inf.bin").write_bytes(bytes(raw))
    with pytest.raises(NonFiniteValues):
        load_embeddings(tmp_path / "inf.bin")


def test_normalize_token():
    assert normalize_token("Terminated") == "terminat"
    assert normalize_token("terminating") == "terminat"
    assert normalize_token("blocks") == "block"
    assert normalize_token("red") == "red"  # stripping would leave fewer than 3 characters
    assert normalize_token("is") == "is"


def test_hashed_is_deterministic_and_unit_norm():
    a = hashed_embedding(["send", "block", "<*>"], 64, seed=3)
    b = hashed_embedding(["send", "block", "<*>"], 64, seed=3)
    assert a.tobytes() == b.tobytes()
    assert abs(np.linalg.norm(a) - 1) < 1e-6
    assert not np.array_equal(a, hashed_embedding(["send", "block", "<*>"], 64, seed=4))


def test_inflections_embed_together():
    a = hashed_embedding(["kalomi", "terminated", "aborted"], 128)
    b = hashed_embedding(["zypequa", "terminating", "aborting"], 128)
    c = hashed_embedding(["zypequa", "scheduling", "storing"], 128)
    assert float(a @ b) > float(a @ c) + 0.2


def test_random_templates_near_orthogonal():
    rng = np.random.default_rng(7)
    letters = list("abcdefghijklmnopqrstuvwxyz")
    templates = set()
    while len(templates) < 100:
        templates.add(tuple("".join(rng.choice(letters, size=int(rng.integers(4, 9))))
                            for _ in range(int(rng.integers(2, 6)))))
    vecs = hashed_table(sorted(templates), 128).vectors
    cos = [abs(float(vecs[i] @ vecs[j])) for i, j in itertools.combinations(range(100), 2)]
    assert np.mean(cos) < 0.25


def test_wildcard_only_template_embeds():
    v = hashed_embedding(["<*>", "<*>"], 32)
    assert abs(np.linalg.norm(v) - 1) < 1e-6
    with pytest.raises(EmbeddingError):
        hashed_embedding([], 32)


@given(st.lists(st.text(alphabet="abcxyz<>*_", min_size=1, max_size=8), min_size=1, max_size=6),
       st.integers(8, 64))
def test_hashed_norm_property(tokens, dim):
    v = hashed_embedding(tokens, dim)
    assert v.shape == (dim,) and abs(np.linalg.norm(v) - 1) < 1e-5


def test_materialize_padding_and_truncation(table):
    m = materialize(Session([1, 2, 3, 4, 5], True), table, l=20)
    assert m.mask.tolist() == [True] * 5 + [False] * 15
    for i, t in enumerate([1, 2, 3, 4, 5]):
        assert np.array_equal(m.values[i], table.vectors[t])
    assert not m.values[5:].any()
    long = materialize(Session(list(range(10)) * 3, False), table, l=20)
    assert long.mask.all()
    np.testing.assert_array_equal(long.values[10], table.vectors[0])


def test_materialize_rejects_unknown_ids(table):
    with pytest.raises(EmbeddingError):
        materialize(Session([10], False), table)


def test_materialize_all_skips_empty(table):
    arrays = materialize_all([Session([1], True), Session([], False), Session([2, 3], False)],
                             table, l=4)
    assert arrays.x.shape == (2, 4, 16) and arrays.y.tolist() == [1.0, 0.0]
