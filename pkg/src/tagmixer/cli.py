"""Command-line interface: ingest, train, eval, recommend, gradcheck, sweep.

Configuration precedence: command-line flags override ``--config`` JSON
keys, which override built-in defaults.  Exit codes: 0 success, 1 usage
or configuration error, 2 data error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import asdict, dataclass, fields
from pathlib import Path

from . import synth
from .corpus import (
    Corpus,
    IngestStats,
    build_corpus,
    history_window,
    ingest_jsonl,
    ingest_stackexchange,
    load_corpus,
    save_corpus,
    split_leave_one_out,
    tail_window,
    tokenize,
    post_text,
    Post,
    PAD_POST,
)
from .encoder import SOURCE_INTERNAL, SOURCE_PRECOMPUTED, load_precomputed, write_embeddings
from .errors import ConfigError, CorpusError, TagMixerError, TrainingError
from .evaluation import (
    evaluate_split,
    format_report_text,
    format_report_tsv,
    format_sweep_tsv,
    sweep_history_length,
)
from .mixer import MixerConfig
from .model import ScoreVector, top_b
from .network import build_inputs, network_forward
from .train import Checkpoint, TrainConfig, format_grad_check_report, grad_check, train_loop

logger = logging.getLogger(__name__)


@dataclass
class RunConfig:
    """Flat union of every tunable knob; the defaults are the contract."""

    # corpus thresholds
    min_user_posts: int = 5
    min_tag_count: int = 5
    vocab_cap: int = 50_000
    token_cap: int = 256
    # mixer
    u: int = 5
    d_h: int = 512
    n_layers: int = 2
    r_u: int | None = None
    r_c: int | None = None
    r_f: int = 8
    activation: str = "gelu"
    dropout: float = 0.1
    # training
    learning_rate: float = 1e-3
    batch_size: int = 32
    max_epochs: int = 100
    patience: int = 5
    seed: int = 0
    grad_clip: float | None = None
    # modes
    encoder_mode: str = SOURCE_INTERNAL
    gate_mode: str = "learned"
    ablation: str = "full"
    # evaluation
    ks: tuple[int, ...] = (1, 3, 5)
    b: int = 5

    def mixer_config(self) -> MixerConfig:
        return MixerConfig(u=self.u, d_h=self.d_h, n_layers=self.n_layers,
                           r_u=self.r_u, r_c=self.r_c, r_f=self.r_f,
                           activation=self.activation, dropout_p=self.dropout)

    def train_config(self) -> TrainConfig:
        return TrainConfig(learning_rate=self.learning_rate, batch_size=self.batch_size,
                           max_epochs=self.max_epochs, patience=self.patience,
                           seed=self.seed, grad_clip=self.grad_clip,
                           encoder_mode=self.encoder_mode, gate_mode=self.gate_mode,
                           ablation=self.ablation)


_CONFIG_FIELDS = {f.name for f in fields(RunConfig)}


def resolve_config(args: argparse.Namespace) -> RunConfig:
    """defaults <- config file <- explicit command-line flags."""
    values = asdict(RunConfig())
    config_path = getattr(args, "config", None)
    if config_path:
        try:
            with open(config_path, encoding="utf-8") as fh:
                loaded = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config file {config_path}: {exc}") from exc
        unknown = sorted(set(loaded) - _CONFIG_FIELDS)
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
        values.update(loaded)
    for key in _CONFIG_FIELDS:
        flag_value = getattr(args, key, None)
        if flag_value is not None:
            values[key] = flag_value
    if isinstance(values["ks"], str):
        values["ks"] = _parse_int_list(values["ks"])
    values["ks"] = tuple(int(k) for k in values["ks"])
    return RunConfig(**values)


def _parse_int_list(text: str) -> tuple[int, ...]:
    try:
        return tuple(int(part) for part in text.split(",") if part.strip())
    except ValueError as exc:
        raise ConfigError(f"expected a comma-separated integer list, got {text!r}") from exc


def _config_echo(config: RunConfig) -> str:
    return json.dumps(asdict(config), sort_keys=True)


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------

def cmd_gen_synth(args) -> int:
    cfg = synth.SynthConfig(
        n_users=args.users, posts_per_user=args.posts_per_user, n_tags=args.tags,
        carry=args.carry, seed=args.seed or 0, words_per_topic=args.words_per_topic,
        body_words=args.body_words)
    records = synth.generate_posts(cfg)
    if args.format == "xml":
        synth.write_posts_xml(records, args.out)
    else:
        synth.write_jsonl(records, args.out)
    print(f"wrote {len(records)} posts to {args.out}", file=sys.stderr)
    return 0


def cmd_ingest(args) -> int:
    config = resolve_config(args)
    stats = IngestStats()
    if args.xml:
        posts = ingest_stackexchange(args.xml, stats)
    else:
        posts = ingest_jsonl(args.jsonl, stats)
    corpus = build_corpus(posts, min_user_posts=config.min_user_posts,
                          min_tag_count=config.min_tag_count,
                          vocab_cap=config.vocab_cap, token_cap=config.token_cap)
    split = split_leave_one_out(corpus.histories)
    meta = {
        "config": asdict(config),
        "source": str(args.xml or args.jsonl),
        "n_posts": corpus.n_posts,
        "n_tags": corpus.tag_vocab.size,
        "n_users": corpus.n_users,
        "vocab_size": corpus.token_vocab.size,
        "ingest": asdict(stats),
    }
    save_corpus(corpus, args.out, split=split, meta=meta)
    print(
        f"corpus: {corpus.n_posts} posts, {corpus.tag_vocab.size} tags, "
        f"{corpus.n_users} users, vocab {corpus.token_vocab.size} "
        f"({stats.malformed} malformed rows skipped)",
        file=sys.stderr,
    )
    return 0


def _load_store_if_needed(config: RunConfig, corpus: Corpus, embeddings_path):
    if config.encoder_mode != SOURCE_PRECOMPUTED:
        return None, config
    if not embeddings_path:
        raise ConfigError("--embeddings is required when encoder_mode=precomputed")
    store = load_precomputed(embeddings_path, corpus)
    # precomputed mode takes d_h from the file header
    if config.d_h != store.d_h:
        logger.info("using embedding dim %d from %s", store.d_h, embeddings_path)
    values = asdict(config)
    values["d_h"] = store.d_h
    return store, RunConfig(**values)


def cmd_train(args) -> int:
    config = resolve_config(args)
    corpus, split = load_corpus(args.corpus)
    if split is None:
        split = split_leave_one_out(corpus.histories)
    store, config = _load_store_if_needed(config, corpus, args.embeddings)
    checkpoint = train_loop(corpus, split, config.mixer_config(), config.train_config(),
                            store=store)
    checkpoint.save(args.out)
    if args.dump_tags:
        write_embeddings(args.dump_tags, list(range(checkpoint.n_tags)), checkpoint.Z)
    print(f"best epoch {checkpoint.epoch}, val loss {checkpoint.val_loss:.6f} -> {args.out}",
          file=sys.stderr)
    return 0


def cmd_eval(args) -> int:
    config = resolve_config(args)
    corpus, split = load_corpus(args.corpus)
    if split is None:
        split = split_leave_one_out(corpus.histories)
    checkpoint = Checkpoint.load(args.checkpoint)
    store = None
    if checkpoint.train_config.encoder_mode == SOURCE_PRECOMPUTED:
        if not args.embeddings:
            raise ConfigError("--embeddings is required to evaluate a precomputed-mode checkpoint")
        store = load_precomputed(args.embeddings, corpus)
    report = evaluate_split(checkpoint, corpus, split, args.split, ks=config.ks,
                            ablation=args.ablation, store=store,
                            per_post_f1=args.per_post_f1)
    text = format_report_text(report)
    print(text)
    if args.out:
        echo = _config_echo(config)
        Path(args.out + ".txt").write_text(text + f"\n# config: {echo}\n", encoding="utf-8")
        Path(args.out + ".tsv").write_text(
            f"# config: {echo}\n" + format_report_tsv(report) + "\n", encoding="utf-8")
        print(f"wrote {args.out}.txt and {args.out}.tsv", file=sys.stderr)
    return 0


def cmd_recommend(args) -> int:
    config = resolve_config(args)
    corpus, _ = load_corpus(args.corpus)
    checkpoint = Checkpoint.load(args.checkpoint)
    user_index = corpus.user_index(args.user)
    if user_index is None:
        raise CorpusError(f"unknown user id {args.user!r}")
    history = corpus.histories[user_index]
    u = checkpoint.mixer_config.u
    internal = checkpoint.train_config.encoder_mode == SOURCE_INTERNAL

    store = None
    if not internal:
        if not args.embeddings:
            raise ConfigError("--embeddings is required with a precomputed-mode checkpoint")
        store = load_precomputed(args.embeddings, corpus)

    if args.post_id is not None:
        try:
            post_index = corpus.post_index(args.post_id)
        except KeyError:
            raise CorpusError(f"unknown post id {args.post_id}")
        post = corpus.posts[post_index]
        if post.user_index != user_index:
            raise CorpusError(f"post {args.post_id} was not written by user {args.user!r}")
        position = history.post_indices.index(post_index)
        window_refs = history_window(history, position, u)
        out_id = post.id
    else:
        if not internal:
            raise ConfigError("ad-hoc text needs an internal-encoder checkpoint; "
                              "use --post-id with precomputed embeddings")
        text = post_text(args.title or "", args.body or "")
        if not text:
            raise ConfigError("provide --title/--body text or --post-id")
        token_ids = tuple(_encode_with_vocab(corpus, text, config.token_cap))
        post = Post(id=-1, user_index=user_index, token_ids=token_ids, label_ids=(),
                    created_at=corpus.posts[-1].created_at, text=text)
        window_refs = tail_window(history, u)
        out_id = None

    window = [corpus.posts[r] if r != PAD_POST else None for r in window_refs]
    h, H_doc, H_tag, _ = build_inputs([post], [window], checkpoint.Z,
                                      checkpoint.train_config.encoder_mode,
                                      table=checkpoint.params.get("token_table"),
                                      store=store)
    logits, _ = network_forward(h, H_doc, H_tag, checkpoint.params,
                                checkpoint.mixer_config, checkpoint.train_config.gate_mode,
                                args.ablation or checkpoint.train_config.ablation,
                                train_mode=False)
    scores = ScoreVector.from_logits(logits[0])
    b = args.b if args.b is not None else config.b
    names = corpus.tag_vocab.id_to_tag()
    ranked = top_b(scores, b)
    payload = {
        "post_id": out_id,
        "tags": [{"tag": names[i], "score": round(float(scores.scores[i]), 6)} for i in ranked],
    }
    print(json.dumps(payload))
    return 0


def _encode_with_vocab(corpus: Corpus, text: str, token_cap: int) -> list[int]:
    return corpus.token_vocab.encode(tokenize(text))[:token_cap]


def cmd_gradcheck(args) -> int:
    report = grad_check(seed=args.seed or 0, eps=args.eps)
    print(format_grad_check_report(report, tolerance=args.tolerance))
    if max(report.values()) >= args.tolerance:
        raise TrainingError(f"gradient check failed at tolerance {args.tolerance:g}")
    return 0


def cmd_sweep(args) -> int:
    config = resolve_config(args)
    corpus, split = load_corpus(args.corpus)
    if split is None:
        split = split_leave_one_out(corpus.histories)
    u_values = _parse_int_list(args.u_values)
    if not u_values:
        raise ConfigError("--u-values must name at least one history length")
    store, config = _load_store_if_needed(config, corpus, args.embeddings)
    rows = sweep_history_length(corpus, split, config.mixer_config(), config.train_config(),
                                u_values, store=store, ks=config.ks)
    tsv = f"# config: {_config_echo(config)}\n" + format_sweep_tsv(rows) + "\n"
    Path(args.out).write_text(tsv, encoding="utf-8")
    print(tsv, end="")
    return 0


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------

def _add_config_flags(p: argparse.ArgumentParser, corpus_thresholds=False) -> None:
    p.add_argument("--config", help="JSON config file; flags override its keys")
    if corpus_thresholds:
        p.add_argument("--min-user-posts", dest="min_user_posts", type=int)
        p.add_argument("--min-tag-count", dest="min_tag_count", type=int)
        p.add_argument("--vocab-cap", dest="vocab_cap", type=int)
        p.add_argument("--token-cap", dest="token_cap", type=int)
    p.add_argument("--u", type=int, help="history window length")
    p.add_argument("--d-h", dest="d_h", type=int, help="feature dimension")
    p.add_argument("--n-layers", dest="n_layers", type=int)
    p.add_argument("--r-u", dest="r_u", type=int)
    p.add_argument("--r-c", dest="r_c", type=int)
    p.add_argument("--r-f", dest="r_f", type=int)
    p.add_argument("--activation", choices=("gelu", "relu"))
    p.add_argument("--dropout", type=float)
    p.add_argument("--learning-rate", dest="learning_rate", type=float)
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--max-epochs", dest="max_epochs", type=int)
    p.add_argument("--patience", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--grad-clip", dest="grad_clip", type=float)
    p.add_argument("--encoder-mode", dest="encoder_mode",
                   choices=(SOURCE_INTERNAL, SOURCE_PRECOMPUTED))
    p.add_argument("--gate-mode", dest="gate_mode", choices=("fixed", "learned"))
    p.add_argument("--ablation",
                   choices=("full", "no_mixer_pooling", "tag_only", "doc_only"))
    p.add_argument("--ks", type=str, help="comma-separated K values, e.g. 1,3,5")
    p.add_argument("--b", type=int, help="number of tags to recommend")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="tagmixer",
        description="Sequential tag recommendation with an all-MLP mixer over user history.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-synth", help="generate a synthetic post collection")
    p.add_argument("--out", required=True)
    p.add_argument("--users", type=int, default=50)
    p.add_argument("--posts-per-user", dest="posts_per_user", type=int, default=12)
    p.add_argument("--tags", type=int, default=20)
    p.add_argument("--carry", type=float, default=0.5)
    p.add_argument("--seed", type=int)
    p.add_argument("--words-per-topic", dest="words_per_topic", type=int, default=8)
    p.add_argument("--body-words", dest="body_words", type=int, default=15)
    p.add_argument("--format", choices=("jsonl", "xml"), default="jsonl")
    p.set_defaults(func=cmd_gen_synth)

    p = sub.add_parser("ingest", help="build a corpus directory from raw posts")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--xml", help="StackExchange Posts.xml dump fragment")
    src.add_argument("--jsonl", help="JSONL posts file")
    p.add_argument("--out", required=True, help="corpus directory to create")
    _add_config_flags(p, corpus_thresholds=True)
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("train", help="train a model on a corpus directory")
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", required=True, help="checkpoint path")
    p.add_argument("--embeddings", help="EMB file for precomputed mode")
    p.add_argument("--dump-tags", dest="dump_tags", help="also dump tag vectors as EMB")
    _add_config_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a split")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--split", choices=("train", "val", "test"), default="test")
    p.add_argument("--embeddings")
    p.add_argument("--out", help="prefix for .txt/.tsv report files")
    p.add_argument("--per-post-f1", dest="per_post_f1", action="store_true",
                   help="average per-post F1 instead of composing from avg P/R")
    _add_config_flags(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("recommend", help="recommend tags for a user's next post")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--user", required=True, help="user id as in the raw data")
    p.add_argument("--title", default="")
    p.add_argument("--body", default="")
    p.add_argument("--post-id", dest="post_id", type=int,
                   help="score an existing corpus post instead of ad-hoc text")
    _add_config_flags(p)
    p.set_defaults(func=cmd_recommend)

    p = sub.add_parser("gradcheck", help="verify gradients against finite differences")
    p.add_argument("--seed", type=int)
    p.add_argument("--tolerance", type=float, default=1e-3)
    p.add_argument("--eps", type=float, default=1e-5,
                   help="finite-difference step; shrink it to separate "
                        "truncation error from genuine gradient bugs")
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("sweep", help="train per history length and report F1@5")
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", required=True, help="TSV output path")
    p.add_argument("--u-values", dest="u_values", required=True,
                   help="comma-separated history lengths")
    p.add_argument("--embeddings")
    _add_config_flags(p)
    p.set_defaults(func=cmd_sweep)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code in (0, None) else 1
    logging.basicConfig(stream=sys.stderr, level=logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except CorpusError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 2
    except TrainingError as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return 3
    except TagMixerError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
