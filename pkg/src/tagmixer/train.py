"""Training: manual backprop, Adam, early-stopped epoch loop, gradient checker.

All gradients are computed by hand through the scoring head, the mixer
stack, and (in internal-encoder mode) the token table; a central
finite-difference checker validates every tensor at float64.
"""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from .corpus import Corpus, CorpusSplit, Post
from .encoder import SOURCE_INTERNAL, SOURCE_PRECOMPUTED, EmbeddingStore, encode_all, init_token_table
from .errors import ConfigError, TrainingError
from .mixer import MixerConfig, init_mixer_params
from .model import (
    ABLATIONS,
    ABLATION_FULL,
    GATE_FIXED,
    GATE_LEARNED,
    init_predictor_params,
    labels_matrix,
)
from .network import batch_loss, build_inputs, materialize_windows, network_backward, network_forward
from .serialize import read_tensors, write_tensors
from .tagspace import compute_tag_representations
from .validation import check_choice, check_positive

logger = logging.getLogger(__name__)

TAG_MATRIX_KEY = "tagspace.Z"


@dataclass(frozen=True)
class TrainConfig:
    """Optimization and run-mode knobs."""

    learning_rate: float = 1e-3
    batch_size: int = 32
    max_epochs: int = 100
    patience: int = 5
    seed: int = 0
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    grad_clip: float | None = None
    encoder_mode: str = SOURCE_INTERNAL
    gate_mode: str = GATE_LEARNED
    ablation: str = ABLATION_FULL
    token_init_scale: float = 0.05

    def validate(self) -> None:
        check_positive("learning_rate", self.learning_rate)
        check_positive("batch_size", self.batch_size)
        if self.max_epochs < 0:
            raise ConfigError(f"max_epochs must be >= 0, got {self.max_epochs}")
        check_positive("patience", self.patience)
        check_choice("encoder_mode", self.encoder_mode, (SOURCE_INTERNAL, SOURCE_PRECOMPUTED))
        check_choice("gate_mode", self.gate_mode, (GATE_FIXED, GATE_LEARNED))
        check_choice("ablation", self.ablation, ABLATIONS)
        if self.grad_clip is not None:
            check_positive("grad_clip", self.grad_clip)


@dataclass
class AdamState:
    """First/second moment accumulators mirroring the parameter dict."""

    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    t: int = 0

    @classmethod
    def for_params(cls, params: dict[str, np.ndarray]) -> "AdamState":
        return cls(m={k: np.zeros_like(p) for k, p in params.items()},
                   v={k: np.zeros_like(p) for k, p in params.items()})


@dataclass
class Checkpoint:
    """Everything needed to score posts: parameters, tag matrix, config echo."""

    params: dict[str, np.ndarray]
    Z: np.ndarray
    mixer_config: MixerConfig
    train_config: TrainConfig
    epoch: int
    val_loss: float
    n_tags: int
    vocab_size: int
    val_history: list[float] = field(default_factory=list)

    def save(self, path) -> None:
        """Write the tensor container at ``path`` and a JSON sidecar next to it."""
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        tensors = dict(self.params)
        tensors[TAG_MATRIX_KEY] = self.Z
        write_tensors(path, tensors)
        sidecar = {
            "format": 1,
            "epoch": self.epoch,
            "val_loss": self.val_loss,
            "val_history": self.val_history,
            "n_tags": self.n_tags,
            "vocab_size": self.vocab_size,
            "seed": self.train_config.seed,
            "mixer_config": asdict(self.mixer_config),
            "train_config": asdict(self.train_config),
        }
        with open(str(path) + ".json", "w", encoding="utf-8") as fh:
            json.dump(sidecar, fh, indent=2, sort_keys=True)

    @classmethod
    def load(cls, path) -> "Checkpoint":
        path = Path(path)
        tensors = read_tensors(path)
        if TAG_MATRIX_KEY not in tensors:
            raise ConfigError(f"{path} is missing the tag-representation matrix")
        Z = tensors.pop(TAG_MATRIX_KEY)
        with open(str(path) + ".json", encoding="utf-8") as fh:
            sidecar = json.load(fh)
        return cls(
            params=tensors,
            Z=Z,
            mixer_config=MixerConfig(**sidecar["mixer_config"]),
            train_config=TrainConfig(**sidecar["train_config"]),
            epoch=sidecar["epoch"],
            val_loss=sidecar["val_loss"],
            n_tags=sidecar["n_tags"],
            vocab_size=sidecar["vocab_size"],
            val_history=sidecar.get("val_history", []),
        )


def init_params(n_tags: int, vocab_size: int, mixer_config: MixerConfig,
                train_config: TrainConfig, rng: np.random.Generator,
                dtype=np.float32) -> dict[str, np.ndarray]:
    """All trainable tensors, created in a fixed order for reproducibility."""
    params: dict[str, np.ndarray] = {}
    if train_config.encoder_mode == SOURCE_INTERNAL:
        params["token_table"] = init_token_table(
            vocab_size, mixer_config.d_h, rng, train_config.token_init_scale, dtype)
    params.update(init_mixer_params(mixer_config, rng, dtype))
    params.update(init_predictor_params(n_tags, mixer_config.d_h,
                                        train_config.gate_mode, rng, dtype))
    return params


# ---------------------------------------------------------------------------
# Forward/backward
# ---------------------------------------------------------------------------

def forward_backward_batch(posts: list[Post], windows, params: dict, Z: np.ndarray,
                           mixer_config: MixerConfig, train_config: TrainConfig,
                           store: EmbeddingStore | None = None,
                           train_mode: bool = True, rng=None):
    """Loss sum and gradients for a batch of (post, window) examples."""
    table = params.get("token_table")
    h, H_doc, H_tag, meta = build_inputs(
        posts, windows, Z, train_config.encoder_mode, table=table, store=store)
    logits, caches = network_forward(
        h, H_doc, H_tag, params, mixer_config, train_config.gate_mode,
        train_config.ablation, train_mode, rng)
    y = labels_matrix([p.label_ids for p in posts], logits.shape[1], dtype=logits.dtype)
    loss, per_example = batch_loss(logits, y)
    if not np.isfinite(loss):
        bad = int(np.flatnonzero(~np.isfinite(per_example))[0])
        raise TrainingError(f"non-finite loss at post id {posts[bad].id}")
    from scipy.special import expit

    dlogits = expit(logits) - y
    grads = network_backward(dlogits, caches, params, mixer_config,
                             train_config.gate_mode, train_config.ablation, meta)
    return loss, grads


def forward_backward(example, params: dict, Z: np.ndarray, mixer_config: MixerConfig,
                     train_config: TrainConfig, store: EmbeddingStore | None = None,
                     train_mode: bool = True, rng=None):
    """Single-example loss and gradients; ``example`` is (post, window_posts)."""
    post, window = example
    if len(window) != mixer_config.u:
        raise ConfigError(f"window length {len(window)} != configured u={mixer_config.u}")
    loss, grads = forward_backward_batch([post], [list(window)], params, Z,
                                         mixer_config, train_config, store,
                                         train_mode, rng)
    return loss, grads


def batch_eval_loss(posts, windows, params, Z, mixer_config, train_config, store=None):
    """Per-example losses in eval mode (no dropout, no gradients)."""
    table = params.get("token_table")
    h, H_doc, H_tag, _ = build_inputs(
        posts, windows, Z, train_config.encoder_mode, table=table, store=store)
    logits, _ = network_forward(h, H_doc, H_tag, params, mixer_config,
                                train_config.gate_mode, train_config.ablation,
                                train_mode=False)
    y = labels_matrix([p.label_ids for p in posts], logits.shape[1], dtype=logits.dtype)
    _, per_example = batch_loss(logits, y)
    return per_example


# ---------------------------------------------------------------------------
# Adam
# ---------------------------------------------------------------------------

def adam_step(params: dict, grads: dict, state: AdamState, config: TrainConfig):
    """One bias-corrected Adam update, in place; PAD embedding row re-zeroed."""
    state.t += 1
    b1, b2, eps, lr = config.adam_beta1, config.adam_beta2, config.adam_eps, config.learning_rate
    bc1 = 1.0 - b1 ** state.t
    bc2 = 1.0 - b2 ** state.t
    for name, g in grads.items():
        if name not in params:
            raise ConfigError(f"gradient for unknown parameter {name!r}")
        m = state.m[name]
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * np.square(g)
        # theta -= lr * (m / bc1) / (sqrt(v / bc2) + eps), built in one temp
        update = np.sqrt(v / bc2)
        update += eps
        np.divide(m, update, out=update)
        update *= lr / bc1
        params[name] -= update
    if "token_table" in params:
        params["token_table"][0] = 0.0
    return params, state


def clip_gradients(grads: dict, max_norm: float) -> dict:
    """Scale all gradients down if their global L2 norm exceeds ``max_norm``."""
    total = np.sqrt(sum(float(np.sum(np.square(g, dtype=np.float64))) for g in grads.values()))
    if total > max_norm and total > 0.0:
        scale = max_norm / total
        return {k: g * scale for k, g in grads.items()}
    return grads


# ---------------------------------------------------------------------------
# Epoch loop
# ---------------------------------------------------------------------------

def _chunks(seq, size):
    for i in range(0, len(seq), size):
        yield seq[i:i + size]


def train_loop(corpus: Corpus, split: CorpusSplit, mixer_config: MixerConfig,
               train_config: TrainConfig, store: EmbeddingStore | None = None) -> Checkpoint:
    """Full training run; returns the best-validation checkpoint.

    Internal mode refreshes the embedding store and the tag matrix at
    the start of every epoch; precomputed mode computes the tag matrix
    once.  Identical configs and seeds give bitwise-identical results.
    """
    mixer_config.validate()
    train_config.validate()
    internal = train_config.encoder_mode == SOURCE_INTERNAL
    if not internal:
        if store is None:
            raise ConfigError("precomputed mode requires an embedding store")
        if store.d_h != mixer_config.d_h:
            raise ConfigError(
                f"embedding dim {store.d_h} does not match configured d_h={mixer_config.d_h}")

    n_tags = corpus.tag_vocab.size
    vocab_size = corpus.token_vocab.size
    rng = np.random.default_rng(train_config.seed)
    params = init_params(n_tags, vocab_size, mixer_config, train_config, rng)
    adam = AdamState.for_params(params)

    train_pairs = sorted(split.train)
    val_pairs = sorted(split.val)
    if not train_pairs or not val_pairs:
        raise ConfigError("split has an empty train or val part")
    train_posts = corpus.train_posts(split)

    Z: np.ndarray | None = None

    def refresh_tags():
        nonlocal Z
        active = (encode_all(corpus, SOURCE_INTERNAL, table=params["token_table"])
                  if internal else store)
        Z = compute_tag_representations(train_posts, active, n_tags).Z

    def val_loss_now() -> float:
        total = 0.0
        for chunk in _chunks(val_pairs, train_config.batch_size):
            posts, windows = materialize_windows(corpus, chunk, mixer_config.u)
            total += float(batch_eval_loss(posts, windows, params, Z, mixer_config,
                                           train_config, store).sum())
        return total / len(val_pairs)

    def snapshot(epoch: int, val_loss: float) -> Checkpoint:
        return Checkpoint(
            params={k: p.copy() for k, p in params.items()},
            Z=Z.copy(),
            mixer_config=mixer_config,
            train_config=train_config,
            epoch=epoch,
            val_loss=val_loss,
            n_tags=n_tags,
            vocab_size=vocab_size if internal else 0,
        )

    if train_config.max_epochs == 0:
        refresh_tags()
        return snapshot(0, val_loss_now())

    best: Checkpoint | None = None
    bad_epochs = 0
    history: list[float] = []
    for epoch in range(1, train_config.max_epochs + 1):
        if internal or Z is None:
            refresh_tags()
        epoch_rng = np.random.default_rng([train_config.seed, 1_000_003, epoch])
        order = epoch_rng.permutation(len(train_pairs))
        shuffled = [train_pairs[i] for i in order]
        for chunk in _chunks(shuffled, train_config.batch_size):
            posts, windows = materialize_windows(corpus, chunk, mixer_config.u)
            loss, grads = forward_backward_batch(
                posts, windows, params, Z, mixer_config, train_config, store,
                train_mode=True, rng=epoch_rng)
            grads = {k: g / len(chunk) for k, g in grads.items()}
            if train_config.grad_clip is not None:
                grads = clip_gradients(grads, train_config.grad_clip)
            adam_step(params, grads, adam, train_config)

        val_loss = val_loss_now()
        if not np.isfinite(val_loss):
            raise TrainingError(f"validation loss diverged at epoch {epoch}: {val_loss}")
        logger.info("epoch %d: val loss %.6f", epoch, val_loss)
        history.append(val_loss)
        if best is None or val_loss < best.val_loss:
            best = snapshot(epoch, val_loss)
            bad_epochs = 0
        else:
            bad_epochs += 1
            if bad_epochs >= train_config.patience:
                logger.info("early stop after %d non-improving epochs", bad_epochs)
                break
    best.val_history = history
    return best


# ---------------------------------------------------------------------------
# Gradient checker
# ---------------------------------------------------------------------------

GRADCHECK_MIXER = MixerConfig(u=4, d_h=8, n_layers=1, r_f=4, dropout_p=0.0)
GRADCHECK_VOCAB = 24
GRADCHECK_TAGS = 10


def _gradcheck_example_batch(rng: np.random.Generator, mixer_config: MixerConfig,
                             n_tags: int, vocab_size: int, n_examples: int = 2):
    """Synthetic posts/windows exercising padding and multi-label sets."""
    from datetime import datetime, timezone

    ts = datetime(2020, 1, 1, tzinfo=timezone.utc)

    def make_post(pid):
        n_tok = int(rng.integers(3, 8))
        tokens = tuple(int(t) for t in rng.integers(2, vocab_size, size=n_tok))
        n_lab = int(rng.integers(1, 4))
        labels = tuple(sorted(set(int(l) for l in rng.integers(0, n_tags, size=n_lab))))
        return Post(id=pid, user_index=0, token_ids=tokens, label_ids=labels, created_at=ts)

    posts, windows = [], []
    pid = 1
    for b in range(n_examples):
        posts.append(make_post(pid))
        pid += 1
        window: list[Post | None] = []
        for c in range(mixer_config.u):
            if b == 0 and c == 0:  # exercise a padded slot
                window.append(None)
            else:
                window.append(make_post(pid))
                pid += 1
        windows.append(window)
    return posts, windows


def grad_check(seed: int = 0, mixer_config: MixerConfig | None = None,
               train_config: TrainConfig | None = None,
               eps: float = 1e-5) -> dict[str, float]:
    """Max relative error of analytic vs central finite-difference gradients.

    Runs a tiny float64 model with dropout disabled and perturbs every
    entry of every trainable tensor.  Returns per-tensor max errors.
    """
    mixer_config = mixer_config or GRADCHECK_MIXER
    mixer_config = replace(mixer_config, dropout_p=0.0)
    train_config = train_config or TrainConfig(seed=seed)
    if train_config.encoder_mode != SOURCE_INTERNAL:
        raise ConfigError("grad_check runs in internal-encoder mode")

    rng = np.random.default_rng(seed)
    params = init_params(GRADCHECK_TAGS, GRADCHECK_VOCAB, mixer_config, train_config,
                         rng, dtype=np.float64)
    Z = rng.normal(size=(GRADCHECK_TAGS, mixer_config.d_h))
    Z /= np.linalg.norm(Z, axis=1, keepdims=True)
    Z[GRADCHECK_TAGS - 1] = 0.0  # a tag with no positive training docs
    posts, windows = _gradcheck_example_batch(rng, mixer_config, GRADCHECK_TAGS,
                                              GRADCHECK_VOCAB)

    def loss_at(p):
        loss, _ = forward_backward_batch(posts, windows, p, Z, mixer_config,
                                         train_config, train_mode=False)
        return loss

    _, analytic = forward_backward_batch(posts, windows, params, Z, mixer_config,
                                         train_config, train_mode=False)

    report: dict[str, float] = {}
    for name in params:
        grad = analytic.get(name)
        if grad is None:
            raise TrainingError(f"no gradient produced for {name}")
        numeric = np.zeros_like(params[name])
        flat_p = params[name].reshape(-1)
        flat_n = numeric.reshape(-1)
        for i in range(flat_p.size):
            orig = flat_p[i]
            flat_p[i] = orig + eps
            up = loss_at(params)
            flat_p[i] = orig - eps
            down = loss_at(params)
            flat_p[i] = orig
            flat_n[i] = (up - down) / (2.0 * eps)
        denom = np.maximum(np.maximum(np.abs(grad), np.abs(numeric)), 1e-6)
        report[name] = float(np.max(np.abs(grad - numeric) / denom))
    return report


def format_grad_check_report(report: dict[str, float], tolerance: float = 1e-3) -> str:
    width = max(len(k) for k in report)
    lines = [f"{'tensor'.ljust(width)}  max relative error"]
    for name, err in report.items():
        flag = "" if err < tolerance else "  <-- FAIL"
        lines.append(f"{name.ljust(width)}  {err:.3e}{flag}")
    worst = max(report.values())
    verdict = "PASS" if worst < tolerance else "FAIL"
    lines.append(f"{'overall'.ljust(width)}  {worst:.3e}  [{verdict} at {tolerance:g}]")
    return "\n".join(lines)
