"""Tag representations: normalized positive-document aggregation."""

from datetime import datetime, timezone

import numpy as np

from tagmixer.corpus import Post
from tagmixer.encoder import SOURCE_INTERNAL, EmbeddingStore
from tagmixer.tagspace import compute_tag_representations, embed_tag_set

TS = datetime(2020, 1, 1, tzinfo=timezone.utc)


def make_post(pid, labels):
    return Post(id=pid, user_index=0, token_ids=(2,), label_ids=tuple(sorted(labels)),
                created_at=TS)


def make_store(vectors):
    matrix = np.asarray(vectors, dtype=np.float64)
    return EmbeddingStore(matrix, list(range(1, len(matrix) + 1)), SOURCE_INTERNAL)


class TestComputeTagRepresentations:
    def test_single_positive_doc_is_normalized_row(self):
        h = np.array([3.0, 4.0])
        store = make_store([h])
        reps = compute_tag_representations([make_post(1, [0])], store, n_tags=2)
        np.testing.assert_allclose(reps.Z[0], h / 5.0)
        np.testing.assert_array_equal(reps.Z[1], np.zeros(2))

    def test_cancellation_gives_zero_row(self):
        h = np.array([1.0, -2.0])
        store = make_store([h, -h])
        reps = compute_tag_representations([make_post(1, [0]), make_post(2, [0])],
                                           store, n_tags=1)
        np.testing.assert_array_equal(reps.Z[0], np.zeros(2))

    def test_matches_bruteforce_oracle(self):
        """Independent oracle: loop over (post, label) pairs, then normalize."""
        rng = np.random.default_rng(11)
        vectors = rng.normal(size=(5, 7))
        labels = [rng.choice(3, size=rng.integers(1, 3), replace=False) for _ in range(5)]
        posts = [make_post(i + 1, labs) for i, labs in enumerate(labels)]
        store = make_store(vectors)

        expected = np.zeros((3, 7))
        for post, h in zip(posts, vectors):
            for l in post.label_ids:
                expected[l] += h
        for l in range(3):
            norm = np.linalg.norm(expected[l])
            if norm > 0:
                expected[l] /= norm

        reps = compute_tag_representations(posts, store, n_tags=3)
        np.testing.assert_allclose(reps.Z, expected, atol=1e-12)

    def test_nonzero_rows_unit_norm(self):
        rng = np.random.default_rng(12)
        vectors = rng.normal(size=(20, 9))
        posts = [make_post(i + 1, rng.choice(6, size=rng.integers(1, 4), replace=False))
                 for i in range(20)]
        reps = compute_tag_representations(posts, make_store(vectors), n_tags=8)
        norms = np.linalg.norm(reps.Z, axis=1)
        for n in norms:
            assert n == 0.0 or abs(n - 1.0) <= 1e-6

    def test_scale_invariance(self):
        """Scaling every document embedding leaves the tag matrix unchanged."""
        rng = np.random.default_rng(13)
        vectors = rng.normal(size=(10, 5))
        posts = [make_post(i + 1, [int(i % 4)]) for i in range(10)]
        base = compute_tag_representations(posts, make_store(vectors), n_tags=4)
        scaled = compute_tag_representations(posts, make_store(vectors * 3.7), n_tags=4)
        np.testing.assert_allclose(scaled.Z, base.Z, atol=1e-6)

    def test_only_given_posts_contribute(self):
        """Passing only the training posts keeps val/test out of the rows."""
        vectors = np.array([[1.0, 0.0], [0.0, 1.0]])
        store = make_store(vectors)
        train_only = [make_post(1, [0])]
        reps = compute_tag_representations(train_only, store, n_tags=1)
        np.testing.assert_allclose(reps.Z[0], [1.0, 0.0])


class TestEmbedTagSet:
    Z = np.array([[1.0, 0.0], [0.0, 1.0], [1.0, 0.0]])

    def test_singleton_returns_row(self):
        np.testing.assert_array_equal(embed_tag_set({1}, self.Z), self.Z[1])

    def test_empty_set_zero_vector(self):
        np.testing.assert_array_equal(embed_tag_set(set(), self.Z), np.zeros(2))

    def test_mean_of_equal_rows_is_that_row(self):
        np.testing.assert_array_equal(embed_tag_set({0, 2}, self.Z), self.Z[0])

    def test_permutation_invariance(self):
        rng = np.random.default_rng(14)
        Z = rng.normal(size=(6, 4))
        ids = [3, 0, 5]
        np.testing.assert_array_equal(embed_tag_set(ids, Z), embed_tag_set(ids[::-1], Z))
        np.testing.assert_array_equal(embed_tag_set(ids, Z), embed_tag_set(set(ids), Z))
