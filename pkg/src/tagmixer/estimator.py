"""scikit-learn style facade over the training and scoring pipeline.

The estimator holds flat constructor parameters (so ``get_params`` /
``set_params`` / ``clone`` work) and builds the internal configs in
``fit``.  ``X`` is a fitted Corpus; prediction targets are
(user_index, position) pairs into that corpus.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator

from .corpus import Corpus, CorpusSplit, split_leave_one_out
from .encoder import SOURCE_INTERNAL, load_precomputed
from .errors import ConfigError
from .evaluation import evaluate_split, metrics_at_k
from .mixer import MixerConfig
from .model import ScoreVector, top_b
from .network import build_inputs, materialize_windows, network_forward
from .train import Checkpoint, TrainConfig, train_loop


class SequentialTagRecommender(BaseEstimator):
    """Recommend tags for a post from its text and the author's history."""

    def __init__(self, d_h=512, u=5, n_layers=2, r_u=None, r_c=None, r_f=8,
                 activation="gelu", dropout=0.1, gate_mode="learned", ablation="full",
                 learning_rate=1e-3, batch_size=32, max_epochs=100, patience=5,
                 seed=0, encoder_mode="internal", embeddings_path=None, b=5,
                 grad_clip=None):
        self.d_h = d_h
        self.u = u
        self.n_layers = n_layers
        self.r_u = r_u
        self.r_c = r_c
        self.r_f = r_f
        self.activation = activation
        self.dropout = dropout
        self.gate_mode = gate_mode
        self.ablation = ablation
        self.learning_rate = learning_rate
        self.batch_size = batch_size
        self.max_epochs = max_epochs
        self.patience = patience
        self.seed = seed
        self.encoder_mode = encoder_mode
        self.embeddings_path = embeddings_path
        self.b = b
        self.grad_clip = grad_clip

    # -- configuration -------------------------------------------------

    def _mixer_config(self) -> MixerConfig:
        return MixerConfig(u=self.u, d_h=self.d_h, n_layers=self.n_layers,
                           r_u=self.r_u, r_c=self.r_c, r_f=self.r_f,
                           activation=self.activation, dropout_p=self.dropout)

    def _train_config(self) -> TrainConfig:
        return TrainConfig(learning_rate=self.learning_rate, batch_size=self.batch_size,
                           max_epochs=self.max_epochs, patience=self.patience,
                           seed=self.seed, grad_clip=self.grad_clip,
                           encoder_mode=self.encoder_mode, gate_mode=self.gate_mode,
                           ablation=self.ablation)

    # -- fitting --------------------------------------------------------

    def fit(self, X: Corpus, y=None, split: CorpusSplit | None = None):
        """Train on a corpus; ``split`` defaults to leave-one-out."""
        if not isinstance(X, Corpus):
            raise ConfigError("fit expects a Corpus")
        split = split if split is not None else split_leave_one_out(X.histories)
        store = None
        mixer_config = self._mixer_config()
        if self.encoder_mode != SOURCE_INTERNAL:
            if self.embeddings_path is None:
                raise ConfigError("precomputed mode requires embeddings_path")
            store = load_precomputed(self.embeddings_path, X)
            mixer_config = MixerConfig(u=self.u, d_h=store.d_h, n_layers=self.n_layers,
                                       r_u=self.r_u, r_c=self.r_c, r_f=self.r_f,
                                       activation=self.activation, dropout_p=self.dropout)
        self.checkpoint_ = train_loop(X, split, mixer_config, self._train_config(), store=store)
        self.split_ = split
        self.store_ = store
        return self

    def _require_fitted(self):
        if not hasattr(self, "checkpoint_"):
            raise ConfigError("estimator is not fitted; call fit first")

    # -- prediction -----------------------------------------------------

    def decision_function(self, X: Corpus, pairs) -> np.ndarray:
        """Per-tag logits, one row per (user_index, position) pair."""
        self._require_fitted()
        ckpt: Checkpoint = self.checkpoint_
        posts, windows = materialize_windows(X, list(pairs), ckpt.mixer_config.u)
        h, H_doc, H_tag, _ = build_inputs(
            posts, windows, ckpt.Z, ckpt.train_config.encoder_mode,
            table=ckpt.params.get("token_table"), store=self.store_)
        logits, _ = network_forward(h, H_doc, H_tag, ckpt.params, ckpt.mixer_config,
                                    ckpt.train_config.gate_mode,
                                    ckpt.train_config.ablation, train_mode=False)
        return logits

    def predict_scores(self, X: Corpus, pairs) -> np.ndarray:
        """Per-tag probabilities in (0, 1), one row per pair."""
        return ScoreVector.from_logits(self.decision_function(X, pairs)).scores

    def predict(self, X: Corpus, pairs) -> list[list[int]]:
        """Top-``b`` tag ids per pair, best first."""
        logits = self.decision_function(X, pairs)
        return [top_b(ScoreVector.from_logits(row), self.b) for row in logits]

    def score(self, X: Corpus, pairs=None, k: int | None = None) -> float:
        """Mean F1@k (default k = ``b``) over pairs (default: test split)."""
        self._require_fitted()
        k = k if k is not None else self.b
        if pairs is None:
            report = evaluate_split(self.checkpoint_, X, self.split_, "test",
                                    ks=(k,), store=self.store_)
            return report.f1(k)
        logits = self.decision_function(X, pairs)
        total = 0.0
        for row, (user_index, position) in zip(logits, pairs):
            hist = X.histories[user_index]
            actual = set(X.posts[hist.post_indices[position]].label_ids)
            ranked = top_b(ScoreVector.from_logits(row), max(k, self.b))
            total += metrics_at_k(ranked, actual, k)[2]
        return total / len(logits)
