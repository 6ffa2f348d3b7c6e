"""Shared fixtures: small deterministic corpora built from the synthetic generator."""

from __future__ import annotations

import pytest

from tagmixer.corpus import RawPost, build_corpus, parse_timestamp, split_leave_one_out
from tagmixer.synth import SynthConfig, generate_posts


def records_to_rawposts(records):
    return [
        RawPost(
            id=rec["id"],
            user_id=rec["user"],
            created_at=parse_timestamp(rec["created"]),
            title=rec["title"],
            body=rec["body"],
            tags=tuple(rec["tags"]),
        )
        for rec in records
    ]


def make_corpus(n_users=8, posts_per_user=8, n_tags=10, carry=0.5, seed=3,
                min_user_posts=3, min_tag_count=1, vocab_cap=2000):
    records = generate_posts(SynthConfig(
        n_users=n_users, posts_per_user=posts_per_user, n_tags=n_tags,
        carry=carry, seed=seed))
    return build_corpus(records_to_rawposts(records),
                        min_user_posts=min_user_posts,
                        min_tag_count=min_tag_count,
                        vocab_cap=vocab_cap)


@pytest.fixture(scope="session")
def tiny_corpus():
    """8 users x 8 posts, 10 tags; enough structure for model-level tests."""
    return make_corpus()


@pytest.fixture(scope="session")
def tiny_split(tiny_corpus):
    return split_leave_one_out(tiny_corpus.histories)
