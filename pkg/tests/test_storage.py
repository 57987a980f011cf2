import struct

import numpy as np
import pytest
from hypothesis import given, strategies as st

from _oracles import unit_rows
from lateint.embedding import IndexConfig, TokenMatrix, build_index
from lateint.errors import FormatError, InputError
from lateint.lexical import LexicalIndex, ProximityGraph
from lateint.storage import (index_from_bytes, index_to_bytes, load_embeddings, load_index, pack_codes,
                             save_index, unpack_codes, write_embeddings)


def test_embedding_file_single_doc(tmp_path):
    v = unit_rows(np.random.default_rng(0), 2, 4)
    write_embeddings([TokenMatrix("doc-1", v)], tmp_path / "e.bin")
    (m,) = load_embeddings(tmp_path / "e.bin")
    assert m.doc_id == "doc-1" and m.vectors.shape == (2, 4) and m.token_ids is None


def test_embedding_file_zero_docs(tmp_path):
    write_embeddings([], tmp_path / "e.bin", dim=8)
    assert load_embeddings(tmp_path / "e.bin") == []


def test_embedding_layout_is_little_endian(tmp_path):
    v = np.array([[1, 0, 0, 0]], np.float32)
    write_embeddings([TokenMatrix("é", v, np.array([7], np.uint32))], tmp_path / "e.bin")
    raw = (tmp_path / "e.bin").read_bytes()
    id_bytes = "é".encode("utf-8")
    expect = (b"LLEMB1" + struct.pack("<II", 4, 1) + struct.pack("<H", len(id_bytes)) + id_bytes
              + struct.pack("<IB", 1, 1) + struct.pack("<I", 7) + struct.pack("<4f", 1, 0, 0, 0))
    assert raw == expect


@given(st.lists(st.tuples(st.text(max_size=12), st.integers(1, 5), st.booleans()), max_size=6),
       st.integers(0, 2**31))
def test_embedding_round_trip(tmp_path_factory, spec, seed):
    rng = np.random.default_rng(seed)
    docs = [TokenMatrix(did, unit_rows(rng, n, 6), rng.integers(0, 1000, n).astype(np.uint32) if ids else None)
            for did, n, ids in spec]
    path = tmp_path_factory.mktemp("emb") / "e.bin"
    write_embeddings(docs, path, dim=6)
    back = load_embeddings(path)
    assert [d.doc_id for d in back] == [d.doc_id for d in docs]
    for a, b in zip(docs, back):
        np.testing.assert_allclose(a.vectors, b.vectors, atol=1e-6)
        assert (a.token_ids is None) == (b.token_ids is None)
        if a.token_ids is not None:
            assert a.token_ids.tolist() == b.token_ids.tolist()


def test_embedding_load_renormalizes(tmp_path):
    raw = (b"LLEMB1" + struct.pack("<II", 2, 1) + struct.pack("<H", 1) + b"x"
           + struct.pack("<IB", 1, 0) + struct.pack("<2f", 3, 4))
    (tmp_path / "e.bin").write_bytes(raw)
    (m,) = load_embeddings(tmp_path / "e.bin")
    np.testing.assert_allclose(m.vectors[0], [0.6, 0.8], atol=1e-7)


@pytest.mark.parametrize("bad", [float("nan"), float("inf")])
def test_embedding_rejects_non_finite(tmp_path, bad):
    raw = (b"LLEMB1" + struct.pack("<II", 2, 1) + struct.pack("<H", 1) + b"x"
           + struct.pack("<IB", 1, 0) + struct.pack("<2f", bad, 1))
    (tmp_path / "e.bin").write_bytes(raw)
    with pytest.raises(InputError):
        load_embeddings(tmp_path / "e.bin")


def test_embedding_rejects_bad_magic_and_truncation(tmp_path):
    v = unit_rows(np.random.default_rng(0), 3, 4)
    write_embeddings([TokenMatrix("a", v)], tmp_path / "e.bin")
    raw = (tmp_path / "e.bin").read_bytes()
    (tmp_path / "bad.bin").write_bytes(b"XXEMB1" + raw[6:])
    with pytest.raises(FormatError):
        load_embeddings(tmp_path / "bad.bin")
    (tmp_path / "short.bin").write_bytes(raw[:-3])
    with pytest.raises(FormatError):
        load_embeddings(tmp_path / "short.bin")
    with pytest.raises(InputError):
        write_embeddings([TokenMatrix("a", v)], tmp_path / "x.bin", dim=8)


@given(st.sampled_from([1, 2, 4, 8]), st.integers(1, 20), st.integers(1, 9), st.integers(0, 2**31))
def test_pack_unpack_codes(nbits, T, dim, seed):
    codes = np.random.default_rng(seed).integers(0, 1 << nbits, (T, dim)).astype(np.uint8)
    packed = pack_codes(codes, nbits)
    assert packed.shape == (T, -(-dim * nbits // 8))
    assert np.array_equal(unpack_codes(packed, nbits, dim), codes)


def _random_index(seed, nbits=2, with_ids=True):
    rng = np.random.default_rng(seed)
    docs = []
    for i in range(int(rng.integers(1, 30))):
        n = int(rng.integers(1, 7))
        ids = rng.integers(0, 50, n).astype(np.uint32) if with_ids else None
        docs.append(TokenMatrix(f"doc{i}", unit_rows(rng, n, 8), ids))
    return build_index(docs, IndexConfig(dim=8, nclusters=int(rng.integers(1, 12)), nbits=nbits, seed=seed,
                                         auto_scale=False))


@given(st.integers(0, 2**31), st.sampled_from([1, 2, 4, 8]), st.booleans())
def test_index_round_trip(seed, nbits, with_ids):
    idx = _random_index(seed, nbits, with_ids)
    raw = index_to_bytes(idx)
    back = index_from_bytes(raw)
    assert back.equals(idx)
    assert index_to_bytes(back) == raw


def test_index_file_round_trip_and_header(tmp_path, index):
    save_index(index, tmp_path / "i.bin")
    raw = (tmp_path / "i.bin").read_bytes()
    assert raw[:6] == b"LLIDX1" and struct.unpack_from("<I", raw, 6) == (1,)
    back = load_index(tmp_path / "i.bin")
    assert back.equals(index)
    save_index(back, tmp_path / "j.bin")
    assert (tmp_path / "j.bin").read_bytes() == raw


def test_index_rejects_bad_magic_version_truncation(index):
    raw = index_to_bytes(index)
    with pytest.raises(FormatError):
        index_from_bytes(b"LLIDX0" + raw[6:])
    with pytest.raises(FormatError):
        index_from_bytes(raw[:6] + struct.pack("<I", 2) + raw[10:])
    for cut in (5, 20, len(raw) // 2, len(raw) - 1):
        with pytest.raises(FormatError):
            index_from_bytes(raw[:cut])


def test_lexical_round_trip(tmp_path, lexical):
    lexical.save(tmp_path / "l.bin")
    back = LexicalIndex.load(tmp_path / "l.bin")
    assert back.to_bytes() == lexical.to_bytes()
    assert back.doc_ids == lexical.doc_ids and back.terms == lexical.terms
    with pytest.raises(FormatError):
        LexicalIndex.from_bytes(b"NOTLEX" + lexical.to_bytes()[6:])
    with pytest.raises(FormatError):
        LexicalIndex.from_bytes(lexical.to_bytes()[:-5])


def test_graph_round_trip_and_layout(tmp_path, graph):
    graph.save(tmp_path / "g.bin")
    back = ProximityGraph.load(tmp_path / "g.bin")
    assert back.equals(graph)
    g = ProximityGraph(2, [[1], [0, 2], []])
    assert g.to_bytes() == (b"LLGRF1" + struct.pack("<I", 2) + struct.pack("<II", 1, 1)
                            + struct.pack("<III", 2, 0, 2) + struct.pack("<I", 0))
    with pytest.raises(FormatError):
        ProximityGraph.from_bytes(b"LLGRFX" + g.to_bytes()[6:])
    with pytest.raises(FormatError):
        ProximityGraph.from_bytes(g.to_bytes()[:-6])


def test_embedding_round_trip_is_bit_exact(tmp_path, doc_mats):
    write_embeddings(doc_mats, tmp_path / "e.bin")
    for a, b in zip(doc_mats, load_embeddings(tmp_path / "e.bin")):
        assert np.array_equal(a.vectors, b.vectors)
