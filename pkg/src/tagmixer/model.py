"""Tag scoring head: fuse the current post with pooled history, rank, and loss.

Scores are ``sigmoid(alpha*W0 h + beta*W1 pool(H_doc) + gamma*W2 pool(H_tag))``
over all L tags.  The three mixing gates are either fixed at 1/3 each or
learned through a softplus so they stay positive.  Loss is binary
cross-entropy summed over all tags, evaluated in logit space for
stability.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from .errors import ConfigError
from .validation import check_choice

GATE_FIXED = "fixed"
GATE_LEARNED = "learned"

ABLATION_FULL = "full"
ABLATION_NO_MIXER = "no_mixer_pooling"
ABLATION_TAG_ONLY = "tag_only"
ABLATION_DOC_ONLY = "doc_only"
ABLATIONS = (ABLATION_FULL, ABLATION_NO_MIXER, ABLATION_TAG_ONLY, ABLATION_DOC_ONLY)

# softplus(GATE_RAW_INIT) == 1/3, so learned gates start where fixed ones sit.
GATE_RAW_INIT = float(np.log(np.expm1(1.0 / 3.0)))

# Logits are clamped to +-LOGIT_CLAMP before the sigmoid so reported
# probabilities stay strictly inside (0, 1) even in float32.  Ranking
# uses the unclamped logits, so the clamp never reorders tags.
LOGIT_CLAMP = 15.0


@dataclass
class ScoreVector:
    """Per-tag probabilities plus the logits they came from."""

    scores: np.ndarray
    logits: np.ndarray

    @classmethod
    def from_logits(cls, logits: np.ndarray) -> "ScoreVector":
        logits = np.asarray(logits)
        return cls(expit(np.clip(logits, -LOGIT_CLAMP, LOGIT_CLAMP)), logits)

    @classmethod
    def from_probs(cls, probs) -> "ScoreVector":
        probs = np.asarray(probs, dtype=np.float64)
        if np.any(probs <= 0.0) or np.any(probs >= 1.0):
            raise ConfigError("probabilities must lie strictly in (0, 1)")
        return cls(probs, np.log(probs) - np.log1p(-probs))

    def __len__(self) -> int:
        return self.scores.shape[-1]


def init_predictor_params(n_tags: int, d_h: int, gate_mode: str,
                          rng: np.random.Generator, dtype=np.float32) -> dict[str, np.ndarray]:
    check_choice("gate_mode", gate_mode, (GATE_FIXED, GATE_LEARNED))
    bound = 1.0 / np.sqrt(d_h)
    params = {
        "predictor.w_post": rng.uniform(-bound, bound, (n_tags, d_h)).astype(dtype),
        "predictor.w_doc": rng.uniform(-bound, bound, (n_tags, d_h)).astype(dtype),
        "predictor.w_tag": rng.uniform(-bound, bound, (n_tags, d_h)).astype(dtype),
    }
    if gate_mode == GATE_LEARNED:
        params["predictor.gates_raw"] = np.full(3, GATE_RAW_INIT, dtype=dtype)
    return params


def gate_values(params: dict, gate_mode: str) -> np.ndarray:
    """The positive mixing weights (alpha, beta, gamma)."""
    if gate_mode == GATE_FIXED:
        dtype = params["predictor.w_post"].dtype
        return np.full(3, 1.0 / 3.0, dtype=dtype)
    raw = params["predictor.gates_raw"]
    return np.log1p(np.exp(-np.abs(raw))) + np.maximum(raw, 0.0)  # stable softplus


def ablation_gate_mask(ablation: str) -> np.ndarray:
    """Multiplier applied to (alpha, beta, gamma) for an ablation mode."""
    check_choice("ablation", ablation, ABLATIONS)
    mask = np.ones(3)
    if ablation == ABLATION_TAG_ONLY:
        mask[1] = 0.0  # drop the document-history term
    elif ablation == ABLATION_DOC_ONLY:
        mask[2] = 0.0  # drop the tag-history term
    return mask


# ---------------------------------------------------------------------------
# Forward / backward (batched internals)
# ---------------------------------------------------------------------------

def pool_history(H: np.ndarray) -> np.ndarray:
    """Mean over the sequence axis of a u x d_h matrix."""
    H = np.asarray(H)
    if H.ndim != 2:
        raise ConfigError(f"pool_history expects a 2-d matrix, got shape {H.shape}")
    return H.mean(axis=0)


def predictor_forward(h: np.ndarray, p_doc: np.ndarray, p_tag: np.ndarray,
                      params: dict, gate_mode: str, ablation: str = ABLATION_FULL):
    """Batched logits for (B, d_h) inputs; returns (logits, cache)."""
    gates = gate_values(params, gate_mode) * ablation_gate_mask(ablation).astype(
        params["predictor.w_post"].dtype)
    s_post = h @ params["predictor.w_post"].T
    s_doc = p_doc @ params["predictor.w_doc"].T
    s_tag = p_tag @ params["predictor.w_tag"].T
    logits = gates[0] * s_post + gates[1] * s_doc + gates[2] * s_tag
    cache = (h, p_doc, p_tag, s_post, s_doc, s_tag, gates)
    return logits, cache


def predictor_backward(dlogits: np.ndarray, cache, params: dict, gate_mode: str,
                       ablation: str = ABLATION_FULL):
    """Gradients of the fused-score head.

    Returns (dh, dp_doc, dp_tag, grads).  Gate gradients are zeroed for
    terms an ablation removed (they are not free parameters there).
    """
    h, p_doc, p_tag, s_post, s_doc, s_tag, gates = cache
    grads = {
        "predictor.w_post": gates[0] * (dlogits.T @ h),
        "predictor.w_doc": gates[1] * (dlogits.T @ p_doc),
        "predictor.w_tag": gates[2] * (dlogits.T @ p_tag),
    }
    dh = gates[0] * (dlogits @ params["predictor.w_post"])
    dp_doc = gates[1] * (dlogits @ params["predictor.w_doc"])
    dp_tag = gates[2] * (dlogits @ params["predictor.w_tag"])
    if gate_mode == GATE_LEARNED:
        d_gates = np.array([
            np.sum(dlogits * s_post),
            np.sum(dlogits * s_doc),
            np.sum(dlogits * s_tag),
        ], dtype=params["predictor.gates_raw"].dtype)
        mask = ablation_gate_mask(ablation).astype(d_gates.dtype)
        grads["predictor.gates_raw"] = d_gates * expit(params["predictor.gates_raw"]) * mask
    return dh, dp_doc, dp_tag, grads


def predict_scores(h: np.ndarray, H_doc: np.ndarray, H_tag: np.ndarray, params: dict,
                   gate_mode: str = GATE_LEARNED,
                   ablation: str = ABLATION_FULL) -> ScoreVector:
    """Score all tags for one post given its (already mixed) history matrices.

    For the ``no_mixer_pooling`` ablation the caller passes the raw
    (pre-mixer) history matrices; pooling and fusion are identical.
    """
    h = np.asarray(h)
    H_doc = np.asarray(H_doc)
    H_tag = np.asarray(H_tag)
    if H_doc.shape != H_tag.shape or H_doc.shape[1] != h.shape[0]:
        raise ConfigError(
            f"predict_scores: inconsistent dims h={h.shape} doc={H_doc.shape} tag={H_tag.shape}"
        )
    logits, _ = predictor_forward(h[None], pool_history(H_doc)[None],
                                  pool_history(H_tag)[None], params, gate_mode, ablation)
    return ScoreVector.from_logits(logits[0])


def top_b(scores, b: int) -> list[int]:
    """Ids of the ``b`` highest-scoring tags, ties broken by ascending id.

    Accepts a ScoreVector (ranked by its logits, which sigmoid cannot
    reorder) or any 1-d score array.
    """
    keys = scores.logits if isinstance(scores, ScoreVector) else np.asarray(scores)
    if not 1 <= b <= keys.shape[-1]:
        raise ConfigError(f"b must be in [1, {keys.shape[-1]}], got {b}")
    order = np.argsort(-keys, kind="stable")
    return [int(i) for i in order[:b]]


# ---------------------------------------------------------------------------
# Loss
# ---------------------------------------------------------------------------

def bce_from_logits(logits: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Elementwise stable binary cross-entropy from logits."""
    z = np.asarray(logits, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    return np.maximum(z, 0.0) - z * y + np.log1p(np.exp(-np.abs(z)))


def bce_loss(scores: ScoreVector, labels) -> float:
    """Total BCE over all tags for one post; ``labels`` is the true tag-id set."""
    y = np.zeros(len(scores), dtype=np.float64)
    ids = np.asarray(sorted(labels), dtype=np.int64)
    if ids.size:
        if ids.min() < 0 or ids.max() >= len(scores):
            raise ConfigError(f"label ids outside [0, {len(scores)})")
        y[ids] = 1.0
    return float(bce_from_logits(scores.logits, y).sum())


def labels_matrix(label_sets, n_tags: int, dtype=np.float32) -> np.ndarray:
    """Stack tag-id sets into a (B, L) multi-hot matrix."""
    y = np.zeros((len(label_sets), n_tags), dtype=dtype)
    for i, labels in enumerate(label_sets):
        for l in labels:
            y[i, l] = 1.0
    return y
