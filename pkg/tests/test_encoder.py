"""Token-averaging encoder and the EMB binary format."""

import numpy as np
import pytest

from tagmixer.encoder import (
    EMB_MAGIC,
    SOURCE_INTERNAL,
    SOURCE_PRECOMPUTED,
    encode_all,
    encode_tokens,
    init_token_table,
    load_precomputed,
    read_embeddings,
    write_embeddings,
)
from tagmixer.errors import CorpusError, EmbeddingFormatError


@pytest.fixture
def table():
    rng = np.random.default_rng(0)
    return init_token_table(12, 6, rng)


class TestEncodeTokens:
    def test_single_token_returns_its_row(self, table):
        np.testing.assert_array_equal(encode_tokens([5], table), table[5])

    def test_repetition_is_idempotent(self, table):
        np.testing.assert_allclose(encode_tokens([5, 5], table), table[5], rtol=1e-6)

    def test_empty_input_zero_vector(self, table):
        np.testing.assert_array_equal(encode_tokens([], table), np.zeros(6, np.float32))

    def test_all_pad_input_zero_vector(self, table):
        np.testing.assert_array_equal(encode_tokens([0, 0, 0], table), np.zeros(6, np.float32))

    def test_pad_tokens_excluded_from_mean(self, table):
        np.testing.assert_array_equal(encode_tokens([0, 5, 0], table), encode_tokens([5], table))

    def test_out_of_vocab_id_rejected(self, table):
        with pytest.raises(CorpusError):
            encode_tokens([12], table)

    def test_mean_pool_linearity(self, table):
        """Concatenation embeds to the length-weighted mean of the parts."""
        rng = np.random.default_rng(1)
        for _ in range(50):
            a = list(rng.integers(1, 12, size=rng.integers(1, 8)))
            b = list(rng.integers(1, 12, size=rng.integers(1, 8)))
            combined = encode_tokens(a + b, table).astype(np.float64)
            expected = (len(a) * encode_tokens(a, table).astype(np.float64)
                        + len(b) * encode_tokens(b, table).astype(np.float64)) / (len(a) + len(b))
            np.testing.assert_allclose(combined, expected, atol=1e-7)

    def test_pad_row_initialized_zero(self, table):
        np.testing.assert_array_equal(table[0], np.zeros(6, np.float32))


class TestEmbFormat:
    def test_round_trip_bitwise(self, tmp_path):
        rng = np.random.default_rng(2)
        ids = [3, 11, 7]
        matrix = rng.normal(size=(3, 8)).astype(np.float32)
        path = tmp_path / "doc.emb"
        write_embeddings(path, ids, matrix)
        back_ids, back = read_embeddings(path)
        assert back_ids == ids
        assert back.tobytes() == matrix.tobytes()

    def test_magic_and_header(self, tmp_path):
        path = tmp_path / "doc.emb"
        write_embeddings(path, [1, 2, 3], np.zeros((3, 8), np.float32))
        blob = path.read_bytes()
        assert blob[:12] == EMB_MAGIC
        import struct
        count, dim = struct.unpack_from("<II", blob, 12)
        assert (count, dim) == (3, 8)

    def test_bad_magic_rejected(self, tmp_path):
        path = tmp_path / "bad.emb"
        path.write_bytes(b"NOTTHEMAGIC!" + b"\x00" * 16)
        with pytest.raises(EmbeddingFormatError, match="magic"):
            read_embeddings(path)

    def test_truncated_file_rejected(self, tmp_path):
        path = tmp_path / "doc.emb"
        write_embeddings(path, [1, 2], np.ones((2, 4), np.float32))
        path.write_bytes(path.read_bytes()[:-3])
        with pytest.raises(EmbeddingFormatError):
            read_embeddings(path)


class TestLoadPrecomputed:
    def test_store_covers_corpus(self, tmp_path, tiny_corpus):
        rng = np.random.default_rng(3)
        ids = [p.id for p in tiny_corpus.posts]
        matrix = rng.normal(size=(len(ids), 8)).astype(np.float32)
        path = tmp_path / "docs.emb"
        write_embeddings(path, ids, matrix)
        store = load_precomputed(path, tiny_corpus)
        assert store.source == SOURCE_PRECOMPUTED
        assert store.d_h == 8
        for pid, row in zip(ids, matrix):
            np.testing.assert_array_equal(store.vector(pid), row)

    def test_missing_post_fatal_lists_ids(self, tmp_path, tiny_corpus):
        ids = [p.id for p in tiny_corpus.posts][:-2]
        path = tmp_path / "docs.emb"
        write_embeddings(path, ids, np.zeros((len(ids), 4), np.float32))
        with pytest.raises(EmbeddingFormatError, match="2 corpus posts missing"):
            load_precomputed(path, tiny_corpus)

    def test_dim_mismatch_fatal(self, tmp_path, tiny_corpus):
        ids = [p.id for p in tiny_corpus.posts]
        path = tmp_path / "docs.emb"
        write_embeddings(path, ids, np.zeros((len(ids), 4), np.float32))
        with pytest.raises(EmbeddingFormatError, match="does not match"):
            load_precomputed(path, tiny_corpus, expect_dim=16)


class TestEncodeAll:
    def test_internal_covers_all_posts(self, tiny_corpus):
        rng = np.random.default_rng(4)
        table = init_token_table(tiny_corpus.token_vocab.size, 8, rng)
        store = encode_all(tiny_corpus, SOURCE_INTERNAL, table=table)
        assert store.source == SOURCE_INTERNAL
        assert store.matrix.shape == (tiny_corpus.n_posts, 8)
        post = tiny_corpus.posts[5]
        np.testing.assert_array_equal(store.vector(post.id),
                                      encode_tokens(post.token_ids, table))

    def test_precomputed_constant_across_reads(self, tmp_path, tiny_corpus):
        ids = [p.id for p in tiny_corpus.posts]
        matrix = np.random.default_rng(5).normal(size=(len(ids), 8)).astype(np.float32)
        path = tmp_path / "docs.emb"
        write_embeddings(path, ids, matrix)
        a = encode_all(tiny_corpus, SOURCE_PRECOMPUTED, path=path)
        b = encode_all(tiny_corpus, SOURCE_PRECOMPUTED, path=path)
        assert a.matrix.tobytes() == b.matrix.tobytes()
