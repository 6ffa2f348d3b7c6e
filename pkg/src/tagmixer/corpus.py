"""Corpus ingestion, vocabularies, chronological user histories, and splits.

Raw posts come in either as StackExchange ``Posts.xml`` rows or as JSONL.
Building a corpus filters rare tags and short-history users to a fixed
point, tokenizes title+body text, and produces per-user chronological
post sequences with a leave-one-out train/val/test split (last post of
each user -> test, second-to-last -> val, rest -> train).
"""

from __future__ import annotations

import html
import json
import logging
import os
import re
import xml.etree.ElementTree as ET
from collections import Counter
from contextlib import contextmanager
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path
from typing import Iterable, Iterator

from .errors import ConfigError, CorpusError

logger = logging.getLogger(__name__)

# Reserved token ids.
PAD_TOKEN_ID = 0
UNK_TOKEN_ID = 1
PAD_TOKEN = "<PAD>"
UNK_TOKEN = "<UNK>"

# Sentinel for an empty slot in a history window (no prior post).
PAD_POST = -1

DEFAULT_MIN_USER_POSTS = 5
DEFAULT_MIN_TAG_COUNT = 5
DEFAULT_VOCAB_CAP = 50_000
DEFAULT_TOKEN_CAP = 256

_TAG_ANGLE = re.compile(r"<([^<>]+)>")
_TOKEN_SPLIT = re.compile(r"[^0-9a-z]+")
_CODE_BLOCK = re.compile(r"<(code|pre)\b[^>]*>.*?</\1\s*>", re.IGNORECASE | re.DOTALL)
_HTML_TAG = re.compile(r"<[^>]+>")


# ---------------------------------------------------------------------------
# Domain types
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class RawPost:
    """One question as it comes out of an ingest source."""

    id: int
    user_id: str
    created_at: datetime
    title: str
    body: str
    tags: tuple[str, ...]


@dataclass(frozen=True)
class Post:
    """A tokenized post with tag labels mapped to the corpus vocabularies.

    ``label_ids`` is strictly increasing and non-empty; ``token_ids`` is
    capped at the corpus token cap.  ``text`` keeps the cleaned
    title+body string so downstream tools (e.g. embedding exporters)
    can re-encode posts without the raw dump.
    """

    id: int
    user_index: int
    token_ids: tuple[int, ...]
    label_ids: tuple[int, ...]
    created_at: datetime
    text: str = ""


@dataclass(frozen=True)
class UserHistory:
    """Chronologically ordered post indices for one user.

    Ordering is by (created_at, post id); indices point into
    ``Corpus.posts``.
    """

    user_index: int
    user_id: str
    post_indices: tuple[int, ...]


@dataclass
class CorpusSplit:
    """Leave-one-out split: (user_index, position) pairs per part."""

    train: list[tuple[int, int]]
    val: list[tuple[int, int]]
    test: list[tuple[int, int]]

    def to_json(self) -> dict:
        return {
            "train": [list(p) for p in self.train],
            "val": [list(p) for p in self.val],
            "test": [list(p) for p in self.test],
        }

    @classmethod
    def from_json(cls, obj: dict) -> "CorpusSplit":
        return cls(
            train=[tuple(p) for p in obj["train"]],
            val=[tuple(p) for p in obj["val"]],
            test=[tuple(p) for p in obj["test"]],
        )


@dataclass
class TokenVocabulary:
    """Token -> id map with reserved PAD=0 and UNK=1 rows.

    Content tokens are ordered by descending training-split frequency
    (ties alphabetical), so ids are stable for a given corpus.
    """

    token_to_id: dict[str, int]

    @property
    def size(self) -> int:
        return len(self.token_to_id)

    def encode(self, tokens: Iterable[str]) -> list[int]:
        get = self.token_to_id.get
        return [get(t, UNK_TOKEN_ID) for t in tokens]

    def id_to_token(self) -> list[str]:
        out = [""] * self.size
        for tok, i in self.token_to_id.items():
            out[i] = tok
        return out


@dataclass
class TagVocabulary:
    """Bijection between tag strings and ids in [0, L)."""

    tag_to_id: dict[str, int]

    @property
    def size(self) -> int:
        return len(self.tag_to_id)

    def id_to_tag(self) -> list[str]:
        out = [""] * self.size
        for tag, i in self.tag_to_id.items():
            out[i] = tag
        return out


@dataclass
class Corpus:
    """Immutable bundle of tokenized posts, histories, and vocabularies."""

    posts: list[Post]
    histories: list[UserHistory]
    token_vocab: TokenVocabulary
    tag_vocab: TagVocabulary

    def __post_init__(self):
        self._post_index_by_id = {p.id: i for i, p in enumerate(self.posts)}
        self._user_index_by_id = {h.user_id: h.user_index for h in self.histories}

    @property
    def n_posts(self) -> int:
        return len(self.posts)

    @property
    def n_users(self) -> int:
        return len(self.histories)

    def post_index(self, post_id: int) -> int:
        return self._post_index_by_id[post_id]

    def user_index(self, user_id: str) -> int | None:
        return self._user_index_by_id.get(user_id)

    def train_posts(self, split: CorpusSplit) -> list[Post]:
        """Posts referenced by the training part of a split."""
        out = []
        for user_index, position in split.train:
            hist = self.histories[user_index]
            out.append(self.posts[hist.post_indices[position]])
        return out


@dataclass
class IngestStats:
    """Counters maintained while streaming raw posts."""

    rows: int = 0
    emitted: int = 0
    malformed: int = 0
    filtered: int = 0  # valid rows dropped by definition (answers, no tags, ...)


# ---------------------------------------------------------------------------
# Text cleaning and tokenization
# ---------------------------------------------------------------------------

def strip_html(text: str) -> str:
    """Remove <code>/<pre> blocks and markup tags, unescape entities."""
    text = _CODE_BLOCK.sub(" ", text)
    text = _HTML_TAG.sub(" ", text)
    return html.unescape(text)


def post_text(title: str, body: str) -> str:
    """The canonical text of a post: cleaned title + " " + cleaned body."""
    return " ".join((strip_html(title) + " " + strip_html(body)).split())


def tokenize(text: str) -> list[str]:
    """Lowercase and split on any non-alphanumeric run. Deterministic."""
    return [t for t in _TOKEN_SPLIT.split(text.lower()) if t]


def parse_timestamp(value: str) -> datetime:
    ts = datetime.fromisoformat(value.replace("Z", "+00:00"))
    if ts.tzinfo is None:
        ts = ts.replace(tzinfo=timezone.utc)
    return ts.astimezone(timezone.utc)


def parse_tag_field(raw: str) -> list[str]:
    """Parse a StackExchange Tags attribute: ``<a><b>`` or ``|a|b|``."""
    tags = _TAG_ANGLE.findall(raw)
    if not tags and "|" in raw:
        tags = [t for t in raw.strip("|").split("|") if t]
    return tags


# ---------------------------------------------------------------------------
# Ingestion
# ---------------------------------------------------------------------------

def ingest_stackexchange(xml_path, stats: IngestStats | None = None) -> Iterator[RawPost]:
    """Stream questions out of a StackExchange ``Posts.xml`` dump fragment.

    Only rows with PostTypeId=1, a non-empty Tags attribute, and an
    OwnerUserId are emitted.  Malformed rows are skipped and counted in
    ``stats.malformed``; an unreadable file raises CorpusError.
    """
    path = Path(xml_path)
    if not path.is_file():
        raise CorpusError(f"cannot read posts file: {path}")
    stats = stats if stats is not None else IngestStats()

    def rows():
        try:
            with open(path, encoding="utf-8", errors="replace") as fh:
                for line in fh:
                    line = line.strip()
                    if not line.startswith("<row"):
                        continue
                    stats.rows += 1
                    try:
                        yield ET.fromstring(line).attrib
                    except ET.ParseError as exc:
                        stats.malformed += 1
                        logger.warning("skipping malformed row: %s", exc)
        except OSError as exc:
            raise CorpusError(f"cannot read posts file: {path}: {exc}") from exc

    for attrs in rows():
        if attrs.get("PostTypeId") != "1":
            stats.filtered += 1
            continue
        owner = attrs.get("OwnerUserId", "")
        tags = parse_tag_field(attrs.get("Tags", ""))
        post_id = attrs.get("Id")
        created = attrs.get("CreationDate")
        if not owner or not tags or post_id is None or created is None:
            stats.filtered += 1
            continue
        try:
            post = RawPost(
                id=int(post_id),
                user_id=owner,
                created_at=parse_timestamp(created),
                title=attrs.get("Title", ""),
                body=attrs.get("Body", ""),
                tags=tuple(tags),
            )
        except (ValueError, TypeError) as exc:
            stats.malformed += 1
            logger.warning("skipping unparseable row id=%r: %s", post_id, exc)
            continue
        stats.emitted += 1
        yield post


_JSONL_KEYS = ("id", "user", "created", "title", "body", "tags")


def ingest_jsonl(jsonl_path, stats: IngestStats | None = None) -> Iterator[RawPost]:
    """Stream posts from a JSONL file, one object per line.

    Required keys: id, user, created, title, body, tags.  Lines missing
    a key or failing to parse are skipped and counted; lines with an
    empty tag list are filtered (retained posts need tags).
    """
    path = Path(jsonl_path)
    if not path.is_file():
        raise CorpusError(f"cannot read posts file: {path}")
    stats = stats if stats is not None else IngestStats()

    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            stats.rows += 1
            try:
                obj = json.loads(line)
                missing = [k for k in _JSONL_KEYS if k not in obj]
                if missing:
                    raise KeyError(", ".join(missing))
                post = RawPost(
                    id=int(obj["id"]),
                    user_id=str(obj["user"]),
                    created_at=parse_timestamp(obj["created"]),
                    title=str(obj["title"]),
                    body=str(obj["body"]),
                    tags=tuple(str(t) for t in obj["tags"]),
                )
            except (json.JSONDecodeError, KeyError, ValueError, TypeError) as exc:
                stats.malformed += 1
                logger.warning("skipping malformed line: %s", exc)
                continue
            if not post.tags:
                stats.filtered += 1
                continue
            stats.emitted += 1
            yield post


# ---------------------------------------------------------------------------
# Corpus building
# ---------------------------------------------------------------------------

def build_corpus(
    posts: Iterable[RawPost],
    min_user_posts: int = DEFAULT_MIN_USER_POSTS,
    min_tag_count: int = DEFAULT_MIN_TAG_COUNT,
    vocab_cap: int = DEFAULT_VOCAB_CAP,
    token_cap: int = DEFAULT_TOKEN_CAP,
) -> Corpus:
    """Filter raw posts and produce a tokenized corpus.

    Tags occurring in fewer than ``min_tag_count`` posts are dropped
    from tag sets; posts left without tags are dropped; users left with
    fewer than ``min_user_posts`` posts are dropped.  The three passes
    interact, so they iterate to a fixed point.  The token vocabulary
    is built from training-split frequencies only (each user's last two
    posts are held out of the counts).
    """
    if min_user_posts < 3:
        raise ConfigError(f"min_user_posts must be >= 3 for a split, got {min_user_posts}")
    if vocab_cap < 2:
        raise ConfigError(f"vocab_cap must be >= 2, got {vocab_cap}")

    raws: dict[int, RawPost] = {}
    for p in posts:
        if p.id in raws:
            logger.warning("duplicate post id %d, keeping first occurrence", p.id)
            continue
        raws[p.id] = p

    # Iterate tag-drop / post-drop / user-drop to a fixed point.
    tags_by_post = {pid: tuple(dict.fromkeys(p.tags)) for pid, p in raws.items()}
    while True:
        counts = Counter(t for ts in tags_by_post.values() for t in ts)
        pruned = {}
        for pid, ts in tags_by_post.items():
            keep = tuple(t for t in ts if counts[t] >= min_tag_count)
            if keep:
                pruned[pid] = keep
        per_user = Counter(raws[pid].user_id for pid in pruned)
        pruned = {
            pid: ts for pid, ts in pruned.items()
            if per_user[raws[pid].user_id] >= min_user_posts
        }
        if pruned == tags_by_post:
            break
        tags_by_post = pruned

    if not tags_by_post:
        raise CorpusError(
            "no users survive filtering "
            f"(min_user_posts={min_user_posts}, min_tag_count={min_tag_count})"
        )

    by_user: dict[str, list[int]] = {}
    for pid in tags_by_post:
        by_user.setdefault(raws[pid].user_id, []).append(pid)
    user_ids = sorted(by_user)
    for uid in user_ids:
        by_user[uid].sort(key=lambda pid: (raws[pid].created_at, pid))

    # Token counts over training posts only (everything but each user's
    # last two posts), then the capped vocabulary.
    token_counts: Counter[str] = Counter()
    texts = {pid: post_text(raws[pid].title, raws[pid].body) for pid in tags_by_post}
    for uid in user_ids:
        for pid in by_user[uid][:-2]:
            token_counts.update(tokenize(texts[pid]))
    ranked = sorted(token_counts.items(), key=lambda kv: (-kv[1], kv[0]))
    token_to_id = {PAD_TOKEN: PAD_TOKEN_ID, UNK_TOKEN: UNK_TOKEN_ID}
    for tok, _ in ranked[: vocab_cap - 2]:
        token_to_id[tok] = len(token_to_id)
    token_vocab = TokenVocabulary(token_to_id)

    tag_counts = Counter(t for ts in tags_by_post.values() for t in ts)
    tag_to_id = {
        tag: i
        for i, (tag, _) in enumerate(sorted(tag_counts.items(), key=lambda kv: (-kv[1], kv[0])))
    }
    tag_vocab = TagVocabulary(tag_to_id)

    out_posts: list[Post] = []
    histories: list[UserHistory] = []
    for user_index, uid in enumerate(user_ids):
        indices = []
        for pid in by_user[uid]:
            raw = raws[pid]
            token_ids = tuple(token_vocab.encode(tokenize(texts[pid]))[:token_cap])
            label_ids = tuple(sorted(tag_to_id[t] for t in tags_by_post[pid]))
            indices.append(len(out_posts))
            out_posts.append(
                Post(
                    id=pid,
                    user_index=user_index,
                    token_ids=token_ids,
                    label_ids=label_ids,
                    created_at=raw.created_at,
                    text=texts[pid],
                )
            )
        histories.append(UserHistory(user_index, uid, tuple(indices)))

    corpus = Corpus(out_posts, histories, token_vocab, tag_vocab)
    _verify_filtering(corpus, min_user_posts, min_tag_count)
    return corpus


def _verify_filtering(corpus: Corpus, min_user_posts: int, min_tag_count: int) -> None:
    """Re-scan the built corpus and assert the filtering invariants."""
    label_counts = Counter(l for p in corpus.posts for l in p.label_ids)
    for lid in range(corpus.tag_vocab.size):
        if label_counts[lid] < min_tag_count:
            raise CorpusError(f"internal: tag id {lid} occurs {label_counts[lid]} < {min_tag_count} times")
    for hist in corpus.histories:
        if len(hist.post_indices) < min_user_posts:
            raise CorpusError(f"internal: user {hist.user_id} kept {len(hist.post_indices)} posts")


def split_leave_one_out(histories: list[UserHistory]) -> CorpusSplit:
    """Per user: last post -> test, second-to-last -> val, rest -> train."""
    train, val, test = [], [], []
    for hist in histories:
        n = len(hist.post_indices)
        if n < 3:
            raise CorpusError(f"user {hist.user_id} has {n} posts; the split needs at least 3")
        train.extend((hist.user_index, pos) for pos in range(n - 2))
        val.append((hist.user_index, n - 2))
        test.append((hist.user_index, n - 1))
    return CorpusSplit(train=train, val=val, test=test)


def history_window(history: UserHistory, position: int, u: int) -> list[int]:
    """The up-to-``u`` post indices strictly before ``position``.

    Most recent last; left-padded with PAD_POST when fewer than ``u``
    prior posts exist.  The post at ``position`` is never included.
    """
    if u < 1:
        raise ConfigError(f"window length must be >= 1, got {u}")
    if not 0 <= position < len(history.post_indices):
        raise ConfigError(f"position {position} outside history of length {len(history.post_indices)}")
    refs = list(history.post_indices[max(0, position - u):position])
    return [PAD_POST] * (u - len(refs)) + refs


def tail_window(history: UserHistory, u: int) -> list[int]:
    """Window covering a hypothetical next post: the user's last ``u`` posts."""
    if u < 1:
        raise ConfigError(f"window length must be >= 1, got {u}")
    refs = list(history.post_indices[-u:])
    return [PAD_POST] * (u - len(refs)) + refs


# ---------------------------------------------------------------------------
# Persistence
# ---------------------------------------------------------------------------

@contextmanager
def corpus_lock(directory: Path):
    """Guard a corpus directory against concurrent writers via a lock file."""
    lock = Path(directory) / ".lock"
    try:
        fd = os.open(lock, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
    except FileExistsError:
        raise CorpusError(f"corpus directory is locked by another writer: {lock}")
    try:
        yield
    finally:
        os.close(fd)
        lock.unlink(missing_ok=True)


def save_corpus(corpus: Corpus, directory, split: CorpusSplit | None = None,
                meta: dict | None = None) -> None:
    """Persist a corpus (and optionally its split and build metadata)."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    with corpus_lock(directory):
        with open(directory / "posts.jsonl", "w", encoding="utf-8") as fh:
            for p in corpus.posts:
                fh.write(json.dumps({
                    "id": p.id,
                    "user_index": p.user_index,
                    "token_ids": list(p.token_ids),
                    "label_ids": list(p.label_ids),
                    "created_at": p.created_at.isoformat(),
                    "text": p.text,
                }, ensure_ascii=False) + "\n")
        with open(directory / "token_vocab.tsv", "w", encoding="utf-8") as fh:
            for i, tok in enumerate(corpus.token_vocab.id_to_token()):
                fh.write(f"{i}\t{tok}\n")
        with open(directory / "tag_vocab.tsv", "w", encoding="utf-8") as fh:
            for i, tag in enumerate(corpus.tag_vocab.id_to_tag()):
                fh.write(f"{i}\t{tag}\n")
        with open(directory / "histories.jsonl", "w", encoding="utf-8") as fh:
            for h in corpus.histories:
                fh.write(json.dumps({
                    "user_index": h.user_index,
                    "user_id": h.user_id,
                    "post_indices": list(h.post_indices),
                }, ensure_ascii=False) + "\n")
        if split is not None:
            with open(directory / "split.json", "w", encoding="utf-8") as fh:
                json.dump(split.to_json(), fh, sort_keys=True)
        if meta is not None:
            with open(directory / "meta.json", "w", encoding="utf-8") as fh:
                json.dump(meta, fh, indent=2, sort_keys=True)


def load_corpus(directory) -> tuple[Corpus, CorpusSplit | None]:
    directory = Path(directory)
    if not (directory / "posts.jsonl").is_file():
        raise CorpusError(f"not a corpus directory (missing posts.jsonl): {directory}")

    posts = []
    with open(directory / "posts.jsonl", encoding="utf-8") as fh:
        for line in fh:
            obj = json.loads(line)
            posts.append(Post(
                id=obj["id"],
                user_index=obj["user_index"],
                token_ids=tuple(obj["token_ids"]),
                label_ids=tuple(obj["label_ids"]),
                created_at=parse_timestamp(obj["created_at"]),
                text=obj.get("text", ""),
            ))

    def read_vocab(name):
        mapping = {}
        with open(directory / name, encoding="utf-8") as fh:
            for line in fh:
                line = line.rstrip("\n")
                if not line:
                    continue
                ident, word = line.split("\t", 1)
                mapping[word] = int(ident)
        return mapping

    token_vocab = TokenVocabulary(read_vocab("token_vocab.tsv"))
    tag_vocab = TagVocabulary(read_vocab("tag_vocab.tsv"))

    histories = []
    with open(directory / "histories.jsonl", encoding="utf-8") as fh:
        for line in fh:
            obj = json.loads(line)
            histories.append(UserHistory(
                user_index=obj["user_index"],
                user_id=obj["user_id"],
                post_indices=tuple(obj["post_indices"]),
            ))
    histories.sort(key=lambda h: h.user_index)

    split = None
    split_path = directory / "split.json"
    if split_path.is_file():
        with open(split_path, encoding="utf-8") as fh:
            split = CorpusSplit.from_json(json.load(fh))

    return Corpus(posts, histories, token_vocab, tag_vocab), split
