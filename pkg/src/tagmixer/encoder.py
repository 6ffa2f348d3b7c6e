"""Document embeddings: trainable token-averaging encoder and EMB file I/O.

A document embedding is the mean of its non-PAD token embeddings.  The
token table is a trainable parameter (its PAD row stays exactly zero);
alternatively, embeddings precomputed by an external encoder can be
loaded from the little-endian EMB binary format and frozen.
"""

from __future__ import annotations

import logging
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .corpus import PAD_TOKEN_ID, Corpus
from .errors import ConfigError, CorpusError, EmbeddingFormatError

logger = logging.getLogger(__name__)

EMB_MAGIC = b"MLP4STREMB1\x00"

SOURCE_INTERNAL = "internal"
SOURCE_PRECOMPUTED = "precomputed"


@dataclass
class TokenEmbeddingTable:
    """V x d_h token embedding matrix; row 0 (PAD) is pinned to zero."""

    table: np.ndarray

    @property
    def size(self) -> int:
        return self.table.shape[0]

    @property
    def d_h(self) -> int:
        return self.table.shape[1]


def init_token_table(vocab_size: int, d_h: int, rng: np.random.Generator,
                     scale: float = 0.05, dtype=np.float32) -> np.ndarray:
    """Uniform [-scale, scale] init with a zeroed PAD row."""
    table = rng.uniform(-scale, scale, size=(vocab_size, d_h)).astype(dtype)
    table[PAD_TOKEN_ID] = 0.0
    return table


def encode_tokens(token_ids, table: np.ndarray) -> np.ndarray:
    """Mean of the non-PAD token embeddings; zero vector for empty input."""
    ids = np.asarray(token_ids, dtype=np.int64)
    ids = ids[ids != PAD_TOKEN_ID]
    if ids.size and int(ids.max()) >= table.shape[0]:
        raise CorpusError(
            f"token id {int(ids.max())} outside vocabulary of size {table.shape[0]}"
        )
    if ids.size == 0:
        return np.zeros(table.shape[1], dtype=table.dtype)
    return table[ids].mean(axis=0)


def encode_internal(token_ids, table: TokenEmbeddingTable) -> np.ndarray:
    return encode_tokens(token_ids, table.table)


@dataclass
class EmbeddingStore:
    """One d_h-vector per corpus post, aligned with the post-id list."""

    matrix: np.ndarray  # (n_posts, d_h)
    post_ids: list[int]
    source: str

    def __post_init__(self):
        self._row = {pid: i for i, pid in enumerate(self.post_ids)}

    @property
    def d_h(self) -> int:
        return self.matrix.shape[1]

    def __contains__(self, post_id: int) -> bool:
        return post_id in self._row

    def vector(self, post_id: int) -> np.ndarray:
        try:
            return self.matrix[self._row[post_id]]
        except KeyError:
            raise CorpusError(f"post id {post_id} not present in embedding store")


def encode_all(corpus: Corpus, mode: str, table: np.ndarray | None = None,
               path=None) -> EmbeddingStore:
    """Embed every corpus post, either from the token table or from a file."""
    if mode == SOURCE_INTERNAL:
        if table is None:
            raise ConfigError("internal encoding requires a token table")
        matrix = np.stack([encode_tokens(p.token_ids, table) for p in corpus.posts]) \
            if corpus.posts else np.zeros((0, table.shape[1]), dtype=table.dtype)
        return EmbeddingStore(matrix, [p.id for p in corpus.posts], SOURCE_INTERNAL)
    if mode == SOURCE_PRECOMPUTED:
        if path is None:
            raise ConfigError("precomputed encoding requires an embeddings file")
        return load_precomputed(path, corpus)
    raise ConfigError(f"unknown encoder mode: {mode!r}")


# ---------------------------------------------------------------------------
# EMB binary format
# ---------------------------------------------------------------------------

def write_embeddings(path, ids, matrix: np.ndarray) -> None:
    """Write (id, vector) records in the EMB binary format.

    Layout: 12-byte magic, u32 LE count, u32 LE dim, then ``count``
    records of (u64 LE id, dim x f32 LE).  The loader reads this back
    bit-exactly.
    """
    matrix = np.ascontiguousarray(matrix, dtype="<f4")
    ids = list(ids)
    if matrix.ndim != 2 or len(ids) != matrix.shape[0]:
        raise ConfigError("ids and matrix rows must match")
    dim = matrix.shape[1]
    record = np.dtype([("id", "<u8"), ("vec", "<f4", (dim,))])
    out = np.empty(len(ids), dtype=record)
    out["id"] = np.asarray(ids, dtype="<u8")
    out["vec"] = matrix
    with open(path, "wb") as fh:
        fh.write(EMB_MAGIC)
        fh.write(struct.pack("<II", len(ids), dim))
        fh.write(out.tobytes())


def read_embeddings(path) -> tuple[list[int], np.ndarray]:
    """Read an EMB file back as (ids, matrix)."""
    path = Path(path)
    try:
        blob = path.read_bytes()
    except OSError as exc:
        raise EmbeddingFormatError(f"cannot read embeddings file {path}: {exc}") from exc
    if blob[: len(EMB_MAGIC)] != EMB_MAGIC:
        raise EmbeddingFormatError(f"{path} is not an EMB file (bad magic)")
    header_end = len(EMB_MAGIC) + 8
    if len(blob) < header_end:
        raise EmbeddingFormatError(f"{path}: truncated header")
    count, dim = struct.unpack_from("<II", blob, len(EMB_MAGIC))
    record = np.dtype([("id", "<u8"), ("vec", "<f4", (dim,))])
    expected = header_end + count * record.itemsize
    if len(blob) != expected:
        raise EmbeddingFormatError(
            f"{path}: expected {expected} bytes for {count} records of dim {dim}, got {len(blob)}"
        )
    data = np.frombuffer(blob, dtype=record, count=count, offset=header_end)
    return [int(i) for i in data["id"]], np.array(data["vec"], dtype=np.float32)


def load_precomputed(path, corpus: Corpus, expect_dim: int | None = None) -> EmbeddingStore:
    """Load an EMB file and validate it covers the whole corpus."""
    ids, matrix = read_embeddings(path)
    if expect_dim is not None and matrix.shape[1] != expect_dim:
        raise EmbeddingFormatError(
            f"embedding dim {matrix.shape[1]} does not match configured d_h={expect_dim}"
        )
    have = set(ids)
    missing = [p.id for p in corpus.posts if p.id not in have]
    if missing:
        head = ", ".join(str(m) for m in missing[:10])
        raise EmbeddingFormatError(
            f"{len(missing)} corpus posts missing from embeddings file (first: {head})"
        )
    # Align rows with corpus post order.
    row = {pid: i for i, pid in enumerate(ids)}
    order = [row[p.id] for p in corpus.posts]
    return EmbeddingStore(matrix[order], [p.id for p in corpus.posts], SOURCE_PRECOMPUTED)
