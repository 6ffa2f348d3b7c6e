"""Synthetic post generator with genuine sequential structure.

Each user walks through a cycle of topics with seeded random step sizes.
A post's body words come from its current topic's private word pool, and
with probability ``carry`` the post also keeps the previous post's topic
tag.  The carried tag cannot be recovered from the current post's text
alone (the walk step is random), so models that exploit the order of the
history have an edge over order-blind pooling.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from datetime import datetime, timedelta, timezone
from xml.sax.saxutils import quoteattr

import numpy as np

from .errors import ConfigError

_TOPIC_LETTERS = "abcdefghijklmnopqrstuvwxyz"


@dataclass
class SynthConfig:
    n_users: int = 50
    posts_per_user: int = 12
    n_tags: int = 20
    carry: float = 0.5
    seed: int = 0
    words_per_topic: int = 8
    body_words: int = 15


def topic_words(topic: int, words_per_topic: int) -> list[str]:
    if words_per_topic > len(_TOPIC_LETTERS):
        raise ConfigError(f"words_per_topic must be <= {len(_TOPIC_LETTERS)}")
    return [f"w{topic}{ch}" for ch in _TOPIC_LETTERS[:words_per_topic]]


def generate_posts(config: SynthConfig) -> list[dict]:
    """Produce JSONL-ready post records, deterministically from the seed."""
    if config.posts_per_user < 3:
        raise ConfigError("posts_per_user must be >= 3 so users survive the split")
    if not 0.0 <= config.carry <= 1.0:
        raise ConfigError(f"carry must be in [0, 1], got {config.carry}")

    base = datetime(2020, 1, 1, tzinfo=timezone.utc)
    records = []
    next_id = 1
    for user in range(config.n_users):
        rng = np.random.default_rng([config.seed, 7919, user])
        topic = int(rng.integers(config.n_tags))
        prev_topic = None
        for t in range(config.posts_per_user):
            pool = topic_words(topic, config.words_per_topic)
            title = " ".join(pool[:3])
            body_idx = rng.integers(0, len(pool), size=config.body_words)
            body = " ".join(pool[i] for i in body_idx)
            tags = [f"tag{topic:02d}"]
            if prev_topic is not None and prev_topic != topic and rng.random() < config.carry:
                tags.append(f"tag{prev_topic:02d}")
            records.append({
                "id": next_id,
                "user": f"user{user:03d}",
                "created": (base + timedelta(days=t, hours=user % 24)).isoformat(),
                "title": title,
                "body": f"<p>{body}</p>",
                "tags": tags,
            })
            next_id += 1
            prev_topic = topic
            topic = (topic + int(rng.integers(1, 3))) % config.n_tags
    return records


def write_jsonl(records: list[dict], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(rec, ensure_ascii=False) + "\n")


def write_posts_xml(records: list[dict], path) -> None:
    """Write records in the StackExchange ``Posts.xml`` row schema."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write('<?xml version="1.0" encoding="utf-8"?>\n<posts>\n')
        for rec in records:
            tags = "".join(f"<{t}>" for t in rec["tags"])
            created = rec["created"].replace("+00:00", "")
            fh.write(
                "  <row Id=%s PostTypeId=\"1\" CreationDate=%s Title=%s Body=%s "
                "OwnerUserId=%s Tags=%s />\n"
                % (
                    quoteattr(str(rec["id"])),
                    quoteattr(created),
                    quoteattr(rec["title"]),
                    quoteattr(rec["body"]),
                    quoteattr(rec["user"]),
                    quoteattr(tags),
                )
            )
        fh.write("</posts>\n")
