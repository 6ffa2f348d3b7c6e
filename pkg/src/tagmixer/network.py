"""Composed forward/backward over (current post, history window) batches.

Ties the encoder, the mixer stack, and the scoring head together.  In
internal-encoder mode the current post and the document-history rows are
embedded from the live token table, so gradients flow back into it; the
tag-history rows come from the rebuilt tag matrix and carry no gradient.
"""

from __future__ import annotations

import numpy as np

from .corpus import PAD_POST, PAD_TOKEN_ID, Corpus, Post, history_window
from .encoder import SOURCE_INTERNAL, SOURCE_PRECOMPUTED, EmbeddingStore
from .errors import ConfigError, CorpusError
from .mixer import MixerConfig, stack_backward, stack_forward
from .model import (
    ABLATION_FULL,
    ABLATION_NO_MIXER,
    bce_from_logits,
    predictor_backward,
    predictor_forward,
)
from .tagspace import embed_tag_set


def materialize_windows(corpus: Corpus, pairs, u: int) -> tuple[list[Post], list[list[Post | None]]]:
    """Resolve (user_index, position) pairs into posts and window-post lists."""
    posts, windows = [], []
    for user_index, position in pairs:
        hist = corpus.histories[user_index]
        posts.append(corpus.posts[hist.post_indices[position]])
        windows.append([
            corpus.posts[ref] if ref != PAD_POST else None
            for ref in history_window(hist, position, u)
        ])
    return posts, windows


def _nonpad_token_ids(post: Post, vocab_size: int) -> np.ndarray:
    ids = np.asarray(post.token_ids, dtype=np.int64)
    ids = ids[ids != PAD_TOKEN_ID]
    if ids.size and int(ids.max()) >= vocab_size:
        raise CorpusError(
            f"post {post.id}: token id {int(ids.max())} outside vocabulary of size {vocab_size}"
        )
    return ids


def build_inputs(posts: list[Post], windows: list[list[Post | None]], Z: np.ndarray,
                 encoder_mode: str, table: np.ndarray | None = None,
                 store: EmbeddingStore | None = None):
    """Assemble h (B, d), H_doc and H_tag (B, u, d) plus backprop bookkeeping.

    The returned meta carries, for internal mode, the token-id lists of
    every embedded cell so the backward pass can scatter into the table.
    """
    if encoder_mode == SOURCE_INTERNAL:
        if table is None:
            raise ConfigError("internal mode needs the token table")
        d = table.shape[1]
        dtype = table.dtype
    elif encoder_mode == SOURCE_PRECOMPUTED:
        if store is None:
            raise ConfigError("precomputed mode needs an embedding store")
        d = store.d_h
        dtype = store.matrix.dtype
    else:
        raise ConfigError(f"unknown encoder mode: {encoder_mode!r}")

    n = len(posts)
    u = len(windows[0]) if windows else 0
    for w in windows:
        if len(w) != u:
            raise ConfigError("all history windows must share one length")

    h = np.zeros((n, d), dtype=dtype)
    H_doc = np.zeros((n, u, d), dtype=dtype)
    H_tag = np.zeros((n, u, d), dtype=dtype)
    cur_tokens: list[np.ndarray | None] = []
    hist_cells: list[tuple[int, int, np.ndarray]] = []
    emb_cache: dict[int, tuple[np.ndarray, np.ndarray]] = {}
    tag_cache: dict[int, np.ndarray] = {}

    def embed(post: Post) -> tuple[np.ndarray, np.ndarray]:
        cached = emb_cache.get(post.id)
        if cached is None:
            ids = _nonpad_token_ids(post, table.shape[0])
            vec = table[ids].mean(axis=0) if ids.size else np.zeros(d, dtype=dtype)
            cached = emb_cache[post.id] = (vec, ids)
        return cached

    for b, (post, window) in enumerate(zip(posts, windows)):
        if encoder_mode == SOURCE_INTERNAL:
            vec, ids = embed(post)
            h[b] = vec
            cur_tokens.append(ids)
        else:
            h[b] = store.vector(post.id)
            cur_tokens.append(None)
        for c, ref in enumerate(window):
            if ref is None:
                continue
            if encoder_mode == SOURCE_INTERNAL:
                vec, ids = embed(ref)
                H_doc[b, c] = vec
                if ids.size:
                    hist_cells.append((b, c, ids))
            else:
                H_doc[b, c] = store.vector(ref.id)
            tvec = tag_cache.get(ref.id)
            if tvec is None:
                tvec = tag_cache[ref.id] = embed_tag_set(ref.label_ids, Z).astype(dtype, copy=False)
            H_tag[b, c] = tvec

    meta = {"cur_tokens": cur_tokens, "hist_cells": hist_cells, "encoder_mode": encoder_mode}
    return h, H_doc, H_tag, meta


def network_forward(h, H_doc, H_tag, params: dict, mixer_config: MixerConfig,
                    gate_mode: str, ablation: str = ABLATION_FULL,
                    train_mode: bool = False, rng=None):
    """Mixer stack (unless ablated away) -> pooling -> fused logits."""
    if ablation == ABLATION_NO_MIXER:
        p_doc, p_tag = H_doc.mean(axis=1), H_tag.mean(axis=1)
        stack_caches = None
    else:
        out_doc, out_tag, stack_caches = stack_forward(
            H_doc, H_tag, params, mixer_config, train_mode, rng)
        p_doc, p_tag = out_doc.mean(axis=1), out_tag.mean(axis=1)
    logits, pred_cache = predictor_forward(h, p_doc, p_tag, params, gate_mode, ablation)
    return logits, (stack_caches, pred_cache)


def network_backward(dlogits, caches, params: dict, mixer_config: MixerConfig,
                     gate_mode: str, ablation: str, meta) -> dict[str, np.ndarray]:
    """Gradients for every trainable tensor reached by the forward pass."""
    stack_caches, pred_cache = caches
    dh, dp_doc, dp_tag, grads = predictor_backward(dlogits, pred_cache, params,
                                                   gate_mode, ablation)
    u = mixer_config.u
    d_doc = np.broadcast_to((dp_doc / u)[:, None, :], (dp_doc.shape[0], u, dp_doc.shape[1]))
    d_tag = np.broadcast_to((dp_tag / u)[:, None, :], (dp_tag.shape[0], u, dp_tag.shape[1]))
    if ablation == ABLATION_NO_MIXER:
        dH_doc = d_doc
    else:
        dH_doc, _dH_tag, mixer_grads = stack_backward(d_doc, d_tag, stack_caches,
                                                      params, mixer_config)
        grads.update(mixer_grads)

    if meta["encoder_mode"] == SOURCE_INTERNAL:
        dtable = np.zeros_like(params["token_table"])
        rows, token_lists = [], []
        for b, ids in enumerate(meta["cur_tokens"]):
            if ids is not None and ids.size:
                rows.append(dh[b])
                token_lists.append(ids)
        for b, c, ids in meta["hist_cells"]:
            rows.append(dH_doc[b, c])
            token_lists.append(ids)
        if rows:
            _scatter_token_grads(dtable, np.stack(rows), token_lists)
        dtable[PAD_TOKEN_ID] = 0.0
        grads["token_table"] = dtable
    return grads


def _scatter_token_grads(dtable: np.ndarray, rows: np.ndarray, token_lists) -> None:
    """Accumulate per-cell mean-pool gradients into the token table.

    Cell gradients are spread uniformly over the cell's tokens; duplicate
    token ids accumulate.  Runs as one sparse matmul (token x cell) so the
    summation order is fixed and the cost stays proportional to the number
    of token occurrences.
    """
    from scipy.sparse import csr_matrix

    counts = np.array([len(t) for t in token_lists], dtype=np.int64)
    ids = np.concatenate(token_lists)
    cells = np.repeat(np.arange(len(token_lists)), counts)
    weights = np.repeat(1.0 / counts, counts).astype(dtable.dtype)
    spread = csr_matrix((weights, (ids, cells)), shape=(dtable.shape[0], len(token_lists)))
    dtable += spread.dot(rows)


def batch_loss(logits: np.ndarray, y: np.ndarray) -> tuple[float, np.ndarray]:
    """Sum of per-example BCE losses and the per-example loss vector."""
    per_example = bce_from_logits(logits, y).sum(axis=1)
    return float(per_example.sum()), per_example
