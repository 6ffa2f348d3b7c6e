"""Ranking metrics (P@K, R@K, F1@K) and split-level evaluation reports."""

from __future__ import annotations

import logging
from dataclasses import dataclass, replace

from .corpus import Corpus, CorpusSplit
from .encoder import SOURCE_INTERNAL, EmbeddingStore
from .errors import ConfigError, CorpusError
from .model import ScoreVector, top_b
from .network import build_inputs, materialize_windows, network_forward
from .train import Checkpoint

logger = logging.getLogger(__name__)


def metrics_at_k(predicted, actual, k: int) -> tuple[float, float, float]:
    """Precision, recall, F1 of the top-``k`` prefix of a ranking.

    ``predicted`` is an ordered tag-id list with at least ``k`` entries;
    ``actual`` is the non-empty ground-truth tag-id set.
    """
    if k < 1:
        raise ConfigError(f"k must be >= 1, got {k}")
    if len(predicted) < k:
        raise ConfigError(f"ranking has {len(predicted)} entries, needs >= {k}")
    actual = set(actual)
    if not actual:
        raise ConfigError("actual tag set must be non-empty")
    hits = len(set(predicted[:k]) & actual)
    p = hits / k
    r = hits / len(actual)
    f1 = 2.0 * p * r / (p + r) if (p + r) > 0.0 else 0.0
    return p, r, f1


@dataclass
class MetricsReport:
    """Macro-averaged metrics for one split and mode."""

    mode: str
    split: str
    n_evaluated: int
    n_skipped: int
    per_k: dict[int, tuple[float, float, float]]  # k -> (p, r, f1), fractions

    def f1(self, k: int) -> float:
        return self.per_k[k][2]


def evaluate_split(checkpoint: Checkpoint, corpus: Corpus, split: CorpusSplit,
                   split_part: str = "test", ks=(1, 3, 5),
                   ablation: str | None = None, store: EmbeddingStore | None = None,
                   per_post_f1: bool = False, batch_size: int = 256) -> MetricsReport:
    """Score every (user, position) pair in a split part and macro-average.

    F1@K is composed from the averaged P@K and R@K; pass
    ``per_post_f1=True`` to average per-post F1 values instead.
    """
    if split_part not in ("train", "val", "test"):
        raise ConfigError(f"split_part must be train/val/test, got {split_part!r}")
    if checkpoint.n_tags != corpus.tag_vocab.size:
        raise CorpusError(
            f"checkpoint has {checkpoint.n_tags} tags, corpus has {corpus.tag_vocab.size}")
    internal = checkpoint.train_config.encoder_mode == SOURCE_INTERNAL
    if internal and checkpoint.vocab_size != corpus.token_vocab.size:
        raise CorpusError(
            f"checkpoint vocabulary size {checkpoint.vocab_size} does not match "
            f"corpus vocabulary size {corpus.token_vocab.size}")
    if not internal and store is None:
        raise ConfigError("precomputed-mode checkpoints need an embedding store to evaluate")

    ks = sorted(set(int(k) for k in ks))
    b = max(ks)
    if b > checkpoint.n_tags:
        raise ConfigError(f"max K {b} exceeds number of tags {checkpoint.n_tags}")
    mode = ablation if ablation is not None else checkpoint.train_config.ablation
    pairs = sorted(getattr(split, split_part))

    n_evaluated = 0
    n_skipped = 0
    p_sum = {k: 0.0 for k in ks}
    r_sum = {k: 0.0 for k in ks}
    f_sum = {k: 0.0 for k in ks}
    for start in range(0, len(pairs), batch_size):
        chunk = pairs[start:start + batch_size]
        posts, windows = materialize_windows(corpus, chunk, checkpoint.mixer_config.u)
        h, H_doc, H_tag, _ = build_inputs(
            posts, windows, checkpoint.Z, checkpoint.train_config.encoder_mode,
            table=checkpoint.params.get("token_table"), store=store)
        logits, _ = network_forward(
            h, H_doc, H_tag, checkpoint.params, checkpoint.mixer_config,
            checkpoint.train_config.gate_mode, mode, train_mode=False)
        for row, post in zip(logits, posts):
            if not post.label_ids:
                n_skipped += 1
                continue
            ranked = top_b(ScoreVector.from_logits(row), b)
            actual = set(post.label_ids)
            for k in ks:
                p, r, f1 = metrics_at_k(ranked, actual, k)
                p_sum[k] += p
                r_sum[k] += r
                f_sum[k] += f1
            n_evaluated += 1

    if n_evaluated == 0:
        raise CorpusError(f"no evaluable posts in split part {split_part!r}")
    per_k = {}
    for k in ks:
        p = p_sum[k] / n_evaluated
        r = r_sum[k] / n_evaluated
        if per_post_f1:
            f1 = f_sum[k] / n_evaluated
        else:
            f1 = 2.0 * p * r / (p + r) if (p + r) > 0.0 else 0.0
        per_k[k] = (p, r, f1)
    return MetricsReport(mode=mode, split=split_part, n_evaluated=n_evaluated,
                         n_skipped=n_skipped, per_k=per_k)


def format_report_text(report: MetricsReport) -> str:
    """Aligned table with P/R/F1 columns per K, percentages to one decimal."""
    lines = [
        f"mode={report.mode}  split={report.split}  "
        f"n={report.n_evaluated}  skipped={report.n_skipped}",
        f"{'K':>4}  {'P@K':>6}  {'R@K':>6}  {'F1@K':>6}",
    ]
    for k, (p, r, f1) in sorted(report.per_k.items()):
        lines.append(f"{k:>4}  {100*p:6.1f}  {100*r:6.1f}  {100*f1:6.1f}")
    return "\n".join(lines)


def format_report_tsv(report: MetricsReport) -> str:
    lines = ["k\tprecision\trecall\tf1\tn\tmode\tsplit"]
    for k, (p, r, f1) in sorted(report.per_k.items()):
        lines.append(
            f"{k}\t{100*p:.1f}\t{100*r:.1f}\t{100*f1:.1f}"
            f"\t{report.n_evaluated}\t{report.mode}\t{report.split}"
        )
    return "\n".join(lines)


def sweep_history_length(corpus: Corpus, split: CorpusSplit, mixer_config,
                         train_config, u_values, store: EmbeddingStore | None = None,
                         ks=(1, 3, 5)) -> list[tuple[int, float]]:
    """Train one model per history length and report test F1@5 for each."""
    from .train import train_loop

    rows = []
    for u in u_values:
        if u < 1:
            raise ConfigError(f"history length must be >= 1, got {u}")
        cfg = replace(mixer_config, u=int(u))
        checkpoint = train_loop(corpus, split, cfg, train_config, store=store)
        report = evaluate_split(checkpoint, corpus, split, "test",
                                ks=sorted(set(ks) | {5}), store=store)
        rows.append((int(u), report.f1(5)))
        logger.info("sweep u=%d: F1@5=%.4f", u, report.f1(5))
    return rows


def format_sweep_tsv(rows: list[tuple[int, float]]) -> str:
    lines = ["u\tf1_at_5"]
    for u, f1 in rows:
        lines.append(f"{u}\t{100*f1:.1f}")
    return "\n".join(lines)
