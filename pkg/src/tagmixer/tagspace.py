"""Tag representations: normalized sums of positive-document embeddings.

A tag's vector is the sum of the embeddings of the *training* documents
labeled with it, scaled to unit norm.  Tags with no positive training
documents keep an all-zero row.  The matrix is rebuilt from current
embeddings rather than backpropagated through.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .corpus import Post
from .encoder import EmbeddingStore

logger = logging.getLogger(__name__)

ZERO_NORM_EPS = 1e-12


@dataclass
class TagRepresentations:
    """L x d_h matrix; every nonzero row has unit Euclidean norm."""

    Z: np.ndarray
    stale: bool = False

    @property
    def n_tags(self) -> int:
        return self.Z.shape[0]


def compute_tag_representations(train_posts: list[Post], store: EmbeddingStore,
                                n_tags: int) -> TagRepresentations:
    """Aggregate training-document embeddings per tag and normalize rows."""
    sums = np.zeros((n_tags, store.d_h), dtype=np.float64)
    for post in train_posts:
        h = store.vector(post.id)
        for label in post.label_ids:
            sums[label] += h
    norms = np.linalg.norm(sums, axis=1)
    degenerate = (norms < ZERO_NORM_EPS) & np.any(sums != 0.0, axis=1)
    if np.any(degenerate):
        logger.warning(
            "%d tag rows cancelled to near-zero norm; treating as zero rows",
            int(degenerate.sum()),
        )
    Z = np.zeros_like(sums)
    nonzero = norms >= ZERO_NORM_EPS
    Z[nonzero] = sums[nonzero] / norms[nonzero, None]
    return TagRepresentations(Z.astype(store.matrix.dtype, copy=False))


def embed_tag_set(label_ids, Z: np.ndarray) -> np.ndarray:
    """Mean of the tag rows for a post's label set; zero for the empty set."""
    ids = np.asarray(sorted(label_ids), dtype=np.int64)
    if ids.size == 0:
        return np.zeros(Z.shape[1], dtype=Z.dtype)
    return Z[ids].mean(axis=0)
