"""Binary file formats (all little-endian).

Token-embedding file::

    b"LLEMB1" | u32 dim | u32 doc_count
    per doc: u16 id_len, utf-8 id, u32 num_tokens, u8 has_token_ids,
             [u32 token_ids * num_tokens], f32 vectors * (num_tokens * dim)

Index file::

    b"LLIDX1" | u32 version | codebook | codec | docs | ivf

where each of the four sections is ``u64 byte_length`` followed by its
payload. Residual codes are bit-packed, ``8 // nbits`` codes per byte,
lowest bits first.
"""

from __future__ import annotations

import io
import struct
from pathlib import Path

import numpy as np

from .embedding import Codebook, CompressedIndex, ResidualCodec, TokenMatrix
from .errors import CorruptIndexError, FormatError, InputError

EMB_MAGIC = b"LLEMB1"
IDX_MAGIC = b"LLIDX1"
IDX_VERSION = 1
RENORM_TOL = 1e-6


class _Reader:
    def __init__(self, data: bytes, what: str):
        self.buf = memoryview(data)
        self.pos = 0
        self.what = what

    def take(self, n: int) -> memoryview:
        if n < 0 or self.pos + n > len(self.buf):
            raise FormatError(f"{self.what}: truncated file (wanted {n} bytes at offset {self.pos})")
        out = self.buf[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        s = struct.Struct("<" + fmt)
        return s.unpack(self.take(s.size))

    def array(self, dtype: str, count: int) -> np.ndarray:
        dt = np.dtype(dtype).newbyteorder("<")
        return np.frombuffer(self.take(dt.itemsize * count), dtype=dt).astype(dt.newbyteorder("="))

    def done(self) -> bool:
        return self.pos == len(self.buf)


def _le(a: np.ndarray, dtype: str) -> bytes:
    return np.ascontiguousarray(a, dtype=np.dtype(dtype).newbyteorder("<")).tobytes()


def _pack_str(s: str) -> bytes:
    b = s.encode("utf-8")
    if len(b) > 0xFFFF:
        raise InputError(f"doc id too long ({len(b)} bytes)")
    return struct.pack("<H", len(b)) + b


# ---------------------------------------------------------------------------
# token embeddings
# ---------------------------------------------------------------------------

def write_embeddings(docs, path, dim: int | None = None) -> None:
    docs = list(docs)
    if dim is None:
        if not docs:
            raise InputError("dim is required when writing zero documents")
        dim = docs[0].dim
    out = io.BytesIO()
    out.write(EMB_MAGIC + struct.pack("<II", dim, len(docs)))
    for d in docs:
        if d.dim != dim:
            raise InputError(f"{d.doc_id!r}: dim {d.dim} != {dim}")
        out.write(_pack_str(d.doc_id))
        out.write(struct.pack("<IB", len(d), d.token_ids is not None))
        if d.token_ids is not None:
            out.write(_le(d.token_ids, "u4"))
        out.write(_le(d.vectors, "f4"))
    Path(path).write_bytes(out.getvalue())


def load_embeddings(path) -> list[TokenMatrix]:
    r = _Reader(Path(path).read_bytes(), str(path))
    if bytes(r.take(6)) != EMB_MAGIC:
        raise FormatError(f"{path}: not a token-embedding file (bad magic)")
    dim, count = r.unpack("II")
    if dim < 1:
        raise FormatError(f"{path}: invalid dim {dim}")
    docs = []
    for _ in range(count):
        (n_id,) = r.unpack("H")
        doc_id = bytes(r.take(n_id)).decode("utf-8")
        ntok, has_ids = r.unpack("IB")
        ids = r.array("u4", ntok) if has_ids else None
        vec = r.array("f4", ntok * dim).reshape(ntok, dim)
        if not np.all(np.isfinite(vec)):
            raise InputError(f"{path}: non-finite component in {doc_id!r}")
        norms = np.linalg.norm(vec.astype(np.float64), axis=1, keepdims=True)
        if np.any(norms == 0):
            raise InputError(f"{path}: zero vector in {doc_id!r}")
        # rows already unit to float32 precision stay bit-exact, so write/load is an identity
        off = np.abs(norms[:, 0] - 1.0) > RENORM_TOL
        if off.any():
            vec = vec.copy()
            vec[off] = (vec[off] / norms[off]).astype(np.float32)
        docs.append(TokenMatrix(doc_id, vec, ids))
    if not r.done():
        raise FormatError(f"{path}: trailing bytes after {count} documents")
    return docs


# ---------------------------------------------------------------------------
# compressed index
# ---------------------------------------------------------------------------

def pack_codes(codes: np.ndarray, nbits: int) -> np.ndarray:
    per = 8 // nbits
    T, dim = codes.shape
    padded = np.zeros((T, -(-dim // per) * per), dtype=np.uint8)
    padded[:, :dim] = codes
    groups = padded.reshape(T, -1, per).astype(np.uint16)
    shifts = (np.arange(per, dtype=np.uint16) * nbits)
    return (groups << shifts).sum(axis=2).astype(np.uint8)


def unpack_codes(packed: np.ndarray, nbits: int, dim: int) -> np.ndarray:
    per = 8 // nbits
    mask = (1 << nbits) - 1
    shifts = (np.arange(per, dtype=np.uint8) * nbits)
    out = (packed[:, :, None] >> shifts) & mask
    return np.ascontiguousarray(out.reshape(packed.shape[0], -1)[:, :dim], dtype=np.uint8)


def _section(payload: bytes) -> bytes:
    return struct.pack("<Q", len(payload)) + payload


def index_to_bytes(index: CompressedIndex) -> bytes:
    cb, codec = index.codebook, index.codec
    codebook = struct.pack("<II", cb.nclusters, cb.dim) + _le(cb.centroids, "f4")
    codec_b = struct.pack("<I", codec.nbits) + _le(codec.cutoffs, "f4") + _le(codec.representatives, "f4")

    docs = io.BytesIO()
    has_ids = index.token_ids is not None
    docs.write(struct.pack("<IIQB", index.n_docs, index.dim, index.n_tokens, has_ids))
    for d in index.doc_ids:
        docs.write(_pack_str(d))
    docs.write(_le(index.doc_offsets, "u8"))
    docs.write(_le(index.centroid_ids, "u4"))
    docs.write(pack_codes(index.codes, codec.nbits).tobytes())
    if has_ids:
        docs.write(_le(index.token_ids, "u4"))

    ivf = struct.pack("<I", index.nclusters) + _le(index.ivf_offsets, "u8") + _le(index.ivf_docs, "u4")
    return (IDX_MAGIC + struct.pack("<I", IDX_VERSION)
            + _section(codebook) + _section(codec_b) + _section(docs.getvalue()) + _section(ivf))


def index_from_bytes(data: bytes, what: str = "index") -> CompressedIndex:
    r = _Reader(data, what)
    if bytes(r.take(6)) != IDX_MAGIC:
        raise FormatError(f"{what}: not an index file (bad magic)")
    (version,) = r.unpack("I")
    if version != IDX_VERSION:
        raise FormatError(f"{what}: unsupported index version {version}")

    def section():
        (n,) = r.unpack("Q")
        return _Reader(bytes(r.take(n)), what)

    s = section()
    C, dim = s.unpack("II")
    centroids = s.array("f4", C * dim).reshape(C, dim)
    _finish(s)

    s = section()
    (nbits,) = s.unpack("I")
    if nbits not in (1, 2, 4, 8):
        raise FormatError(f"{what}: invalid nbits {nbits}")
    cut = s.array("f4", (1 << nbits) - 1)
    reps = s.array("f4", 1 << nbits)
    _finish(s)

    s = section()
    n, ddim, T, has_ids = s.unpack("IIQB")
    if ddim != dim:
        raise CorruptIndexError(f"{what}: document dim {ddim} != codebook dim {dim}")
    doc_ids = []
    for _ in range(n):
        (k,) = s.unpack("H")
        doc_ids.append(bytes(s.take(k)).decode("utf-8"))
    offsets = s.array("u8", n + 1).astype(np.int64)
    cids = s.array("u4", T).astype(np.int32)
    width = -(-dim // (8 // nbits))
    packed = np.frombuffer(s.take(T * width), dtype=np.uint8).reshape(T, width)
    codes = unpack_codes(packed, nbits, dim)
    token_ids = s.array("u4", T) if has_ids else None
    _finish(s)

    s = section()
    (C2,) = s.unpack("I")
    if C2 != C:
        raise CorruptIndexError(f"{what}: ivf covers {C2} centroids, codebook has {C}")
    ivf_offsets = s.array("u8", C + 1).astype(np.int64)
    ivf_docs = s.array("u4", int(ivf_offsets[-1])).astype(np.int64)
    _finish(s)
    if not r.done():
        raise FormatError(f"{what}: trailing bytes after the ivf section")

    return CompressedIndex(
        codebook=Codebook(centroids),
        codec=ResidualCodec(nbits, cut, reps),
        doc_ids=doc_ids,
        doc_offsets=offsets,
        centroid_ids=cids,
        codes=codes,
        ivf_offsets=ivf_offsets,
        ivf_docs=ivf_docs,
        token_ids=token_ids,
    )


def _finish(s: _Reader):
    if not s.done():
        raise FormatError(f"{s.what}: section has trailing bytes")


def save_index(index: CompressedIndex, path) -> None:
    Path(path).write_bytes(index_to_bytes(index))


def load_index(path) -> CompressedIndex:
    return index_from_bytes(Path(path).read_bytes(), str(path))
