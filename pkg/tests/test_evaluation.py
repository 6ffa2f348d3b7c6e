"""Ranking metrics against brute-force oracles, and split-level reports."""

import numpy as np
import pytest

from tagmixer.corpus import CorpusSplit
from tagmixer.errors import ConfigError, CorpusError
from tagmixer.evaluation import (
    MetricsReport,
    evaluate_split,
    format_report_text,
    format_report_tsv,
    format_sweep_tsv,
    metrics_at_k,
)
from tagmixer.mixer import MixerConfig
from tagmixer.train import TrainConfig, train_loop


def oracle_metrics(predicted, actual, k):
    """Independent set-intersection evaluation of the three formulas."""
    hits = 0
    for tag in predicted[:k]:
        if tag in actual:
            hits += 1
    p = hits / k
    r = hits / len(actual)
    f1 = 2 * p * r / (p + r) if p + r else 0.0
    return p, r, f1


class TestMetricsAtK:
    def test_hand_case(self):
        p, r, f1 = metrics_at_k(["a", "b", "c"], {"a", "d"}, 3)
        assert p == pytest.approx(1 / 3)
        assert r == pytest.approx(1 / 2)
        assert f1 == pytest.approx(0.4)

    def test_perfect_singleton(self):
        assert metrics_at_k([7, 3], {7}, 1) == (1.0, 1.0, 1.0)

    def test_no_overlap(self):
        assert metrics_at_k([1, 2, 3, 4, 5], {9}, 5) == (0.0, 0.0, 0.0)

    def test_matches_oracle_on_random_cases(self):
        rng = np.random.default_rng(1234)
        for _ in range(200):
            n_tags = int(rng.integers(5, 60))
            predicted = list(rng.permutation(n_tags))
            actual = set(int(t) for t in rng.choice(n_tags, size=rng.integers(1, 6),
                                                    replace=False))
            k = int(rng.integers(1, n_tags + 1))
            got = metrics_at_k(predicted, actual, k)
            want = oracle_metrics(predicted, actual, k)
            assert got[0] == want[0] and got[1] == want[1]
            assert abs(got[2] - want[2]) <= 1e-12

    def test_hits_consistency_integers(self):
        """p*k and r*|actual| are the same integer (the hit count)."""
        rng = np.random.default_rng(5)
        for _ in range(100):
            predicted = list(rng.permutation(30))
            actual = set(int(t) for t in rng.choice(30, size=4, replace=False))
            k = int(rng.integers(1, 31))
            p, r, _ = metrics_at_k(predicted, actual, k)
            assert round(p * k, 9) == round(r * len(actual), 9)
            assert float(p * k).is_integer()

    def test_f1_bounds(self):
        rng = np.random.default_rng(6)
        for _ in range(100):
            predicted = list(rng.permutation(20))
            actual = set(int(t) for t in rng.choice(20, size=3, replace=False))
            p, r, f1 = metrics_at_k(predicted, actual, int(rng.integers(1, 21)))
            if p + r > 0:
                assert min(p, r) - 1e-12 <= f1 <= max(p, r) + 1e-12
                assert f1 <= 2 * min(p, r) + 1e-12

    def test_empty_actual_rejected(self):
        with pytest.raises(ConfigError):
            metrics_at_k([1, 2], set(), 1)

    def test_short_ranking_rejected(self):
        with pytest.raises(ConfigError):
            metrics_at_k([1], {1}, 2)


@pytest.fixture(scope="module")
def trained(tiny_corpus, tiny_split):
    mixer = MixerConfig(u=3, d_h=16, n_layers=1, dropout_p=0.1)
    cfg = TrainConfig(max_epochs=4, patience=5, seed=9, batch_size=16)
    return train_loop(tiny_corpus, tiny_split, mixer, cfg)


class TestEvaluateSplit:
    def test_deterministic(self, trained, tiny_corpus, tiny_split):
        a = evaluate_split(trained, tiny_corpus, tiny_split, "test")
        b = evaluate_split(trained, tiny_corpus, tiny_split, "test")
        assert a.per_k == b.per_k and a.n_evaluated == b.n_evaluated

    def test_counts_posts(self, trained, tiny_corpus, tiny_split):
        report = evaluate_split(trained, tiny_corpus, tiny_split, "val")
        assert report.n_evaluated == len(tiny_split.val)
        assert report.n_skipped == 0

    def test_metrics_in_unit_interval(self, trained, tiny_corpus, tiny_split):
        report = evaluate_split(trained, tiny_corpus, tiny_split, "test", ks=(1, 3, 5))
        for p, r, f1 in report.per_k.values():
            assert 0.0 <= p <= 1.0 and 0.0 <= r <= 1.0 and 0.0 <= f1 <= 1.0

    def test_duplicated_pairs_leave_macro_average_unchanged(
            self, trained, tiny_corpus, tiny_split):
        base = evaluate_split(trained, tiny_corpus, tiny_split, "test")
        doubled = CorpusSplit(train=tiny_split.train, val=tiny_split.val,
                              test=list(tiny_split.test) * 2)
        dup = evaluate_split(trained, tiny_corpus, doubled, "test")
        for k in base.per_k:
            np.testing.assert_allclose(dup.per_k[k], base.per_k[k], atol=1e-12)

    def test_vocabulary_mismatch_fatal(self, trained, tiny_split):
        from conftest import make_corpus

        other = make_corpus(n_users=4, posts_per_user=6, n_tags=7, seed=99)
        with pytest.raises(CorpusError):
            evaluate_split(trained, other, tiny_split, "test")

    def test_per_post_f1_flag(self, trained, tiny_corpus, tiny_split):
        composed = evaluate_split(trained, tiny_corpus, tiny_split, "test")
        per_post = evaluate_split(trained, tiny_corpus, tiny_split, "test",
                                  per_post_f1=True)
        for k in composed.per_k:
            assert composed.per_k[k][:2] == per_post.per_k[k][:2]

    def test_ablation_override(self, trained, tiny_corpus, tiny_split):
        report = evaluate_split(trained, tiny_corpus, tiny_split, "test",
                                ablation="no_mixer_pooling")
        assert report.mode == "no_mixer_pooling"


class TestReportFormatting:
    REPORT = MetricsReport(mode="full", split="test", n_evaluated=7, n_skipped=0,
                           per_k={1: (0.738, 0.292, 0.418), 5: (0.386, 0.673, 0.490)})

    def test_text_table_has_one_decimal_percentages(self):
        text = format_report_text(self.REPORT)
        assert "73.8" in text and "29.2" in text and "41.8" in text
        assert "49.0" in text
        assert "n=7" in text

    def test_tsv_has_header_and_rows(self):
        tsv = format_report_tsv(self.REPORT)
        lines = tsv.splitlines()
        assert lines[0].startswith("k\tprecision")
        assert lines[1].startswith("1\t73.8")

    def test_sweep_tsv(self):
        tsv = format_sweep_tsv([(1, 0.31), (5, 0.392)])
        assert tsv.splitlines()[0] == "u\tf1_at_5"
        assert "5\t39.2" in tsv
