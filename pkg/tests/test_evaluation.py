import math

import numpy as np
import pytest

from capstyle.corpus import default_spec
from capstyle.evaluation import (EvalReport, EvalRow, bleu3, best_lambda, geomean,
                                 linear_probe, ngram_logprob, pca2d, perplexity,
                                 style_accuracy, train_ngram_lm)


# --- test-local brute-force oracles -----------------------------------------

def bleu3_oracle(cand, refs):
    """Naive recount of clipped precisions, smoothing and brevity penalty."""
    if not cand:
        return 0.0
    logp = 0.0
    for n in (1, 2, 3):
        cgrams = [tuple(cand[i: i + n]) for i in range(len(cand) - n + 1)]
        matches = 0
        for g in set(cgrams):
            in_cand = cgrams.count(g)
            in_refs = max(([tuple(r[i: i + n]) for i in range(len(r) - n + 1)].count(g)
                           for r in refs), default=0)
            matches += min(in_cand, in_refs)
        total = len(cgrams)
        if matches == 0:
            matches, total = 1, total + 1
        logp += math.log(matches / total) / 3
    c = len(cand)
    r = sorted((abs(len(rr) - c), len(rr)) for rr in refs)[0][1]
    bp = 1.0 if c >= r else math.exp(1 - r / c)
    return bp * math.exp(logp)


class TestBleu3:
    def test_perfect_match_is_one(self):
        s = ["the", "cat", "sat", "on", "the", "mat"]
        assert bleu3(s, [list(s)]) == pytest.approx(1.0, abs=1e-12)

    def test_empty_candidate_is_zero(self):
        assert bleu3([], [["a", "b"]]) == 0.0

    def test_hand_case_matches_oracle(self):
        cand = ["the", "cat", "sat", "on", "the", "mat"]
        refs = [["the", "cat", "is", "on", "the", "mat"]]
        assert bleu3(cand, refs) == pytest.approx(bleu3_oracle(cand, refs), abs=1e-9)

    def test_multi_reference_case_matches_oracle(self):
        cand = ["a", "lovely", "dog", "runs"]
        refs = [["a", "dog", "runs"], ["the", "lovely", "dog", "runs", "fast"]]
        assert bleu3(cand, refs) == pytest.approx(bleu3_oracle(cand, refs), abs=1e-9)

    def test_random_cases_match_oracle(self):
        rng = np.random.default_rng(0)
        words = ["a", "b", "c", "d", "e"]
        for _ in range(50):
            cand = [words[i] for i in rng.integers(0, 5, rng.integers(1, 9))]
            refs = [[words[i] for i in rng.integers(0, 5, rng.integers(1, 9))]
                    for _ in range(int(rng.integers(1, 4)))]
            assert bleu3(cand, refs) == pytest.approx(bleu3_oracle(cand, refs), abs=1e-9)

    def test_brevity_penalty_applied(self):
        # short candidate with perfect precisions: score = exp(1 - r/c)
        cand = ["a", "b", "c"]
        ref = ["a", "b", "c", "d", "e", "f"]
        assert bleu3(cand, [ref]) == pytest.approx(math.exp(1 - 6 / 3), rel=1e-9)

    def test_closest_ref_length_tie_prefers_shorter(self):
        # candidate length 3, refs of length 2 and 4: r=2, so no penalty
        cand = ["a", "b", "c"]
        refs = [["a", "b"], ["a", "b", "c", "d"]]
        bp_free = bleu3(cand, refs)
        only_long = bleu3(cand, [["a", "b", "c", "d"]])
        assert bp_free > only_long

    def test_score_in_unit_interval(self):
        rng = np.random.default_rng(1)
        words = ["a", "b", "c"]
        for _ in range(30):
            cand = [words[i] for i in rng.integers(0, 3, rng.integers(1, 7))]
            ref = [words[i] for i in rng.integers(0, 3, rng.integers(1, 7))]
            assert 0.0 <= bleu3(cand, [ref]) <= 1.0


class TestGeomean:
    def test_equal_inputs_fixed_point(self):
        assert geomean(7.0, 7.0) == pytest.approx(7.0, abs=1e-12)

    def test_zero_annihilates(self):
        assert geomean(0.0, 55.0) == 0.0

    def test_negative_rejected(self):
        with pytest.raises(ValueError):
            geomean(-1.0, 4.0)

    def test_hand_value(self):
        assert geomean(4.0, 9.0) == pytest.approx(6.0, abs=1e-12)


class TestNgramPerplexity:
    def test_uniform_unigram_ppl_is_vocab_size(self):
        # every word seen once: additive smoothing cancels, p = 1/|V| exactly
        lm = train_ngram_lm([["a", "b", "c", "d"]], n=1, alpha=0.1)
        assert lm.vocab_size == 4
        assert perplexity(lm, [["a", "b", "c", "d"]]) == pytest.approx(4.0, abs=1e-12)

    def test_bigram_hand_case_matches_count_table(self):
        lm = train_ngram_lm([["a", "b", "a"], ["a", "a"]], n=2, alpha=0.1)
        # counts: (<s>,a)=2 (a,b)=1 (b,a)=1 (a,a)=1; contexts: <s>=2 a=2 b=1; V=2
        want = (math.log((2 + 0.1) / (2 + 0.2))      # <s> a
                + math.log((1 + 0.1) / (2 + 0.2))    # a a
                + math.log((1 + 0.1) / (2 + 0.2)))   # a b
        logp, k = ngram_logprob(lm, ["a", "a", "b"])
        assert k == 3
        assert logp == pytest.approx(want, abs=1e-9)
        assert perplexity(lm, [["a", "a", "b"]]) == pytest.approx(
            math.exp(-want / 3), abs=1e-9)

    def test_unseen_ngram_gets_smoothed_mass(self):
        lm = train_ngram_lm([["a", "b"]], n=2, alpha=0.1)
        logp, _ = ngram_logprob(lm, ["b", "a"])
        assert math.isfinite(logp) and logp < 0

    def test_empty_test_set_is_inf(self):
        lm = train_ngram_lm([["a"]], n=1)
        assert perplexity(lm, []) == float("inf")

    def test_memorized_corpus_has_low_ppl(self):
        corpus = [["a", "b", "c"]] * 50
        lm = train_ngram_lm(corpus, n=3, alpha=0.1)
        assert perplexity(lm, [["a", "b", "c"]]) < perplexity(lm, [["c", "b", "a"]])


class TestStyleAccuracy:
    def test_counts_oracle_hits(self):
        spec = default_spec()
        caps = [["the", "lovely", "cat", "."], ["the", "cat", "."],
                ["the", "gloomy", "dog", "."], ["the", "happy", "dog", "."]]
        assert style_accuracy(caps, "positive", spec) == 0.5
        assert style_accuracy(caps, "factual", spec) == 0.25
        assert style_accuracy([], "positive", spec) == 0.0


class TestPca2d:
    def test_shape_and_centering(self):
        x = np.random.default_rng(0).standard_normal((20, 7))
        out = pca2d(x)
        assert out.shape == (20, 2)
        assert np.allclose(out.mean(axis=0), 0.0, atol=1e-10)

    def test_planar_data_distances_preserved(self):
        # points on a 2-D plane embedded in 6-D keep pairwise distances exactly
        rng = np.random.default_rng(1)
        plane = rng.standard_normal((15, 2))
        basis, _ = np.linalg.qr(rng.standard_normal((6, 2)))
        x = plane @ basis.T
        out = pca2d(x)
        d_in = np.linalg.norm(x[:, None] - x[None, :], axis=-1)
        d_out = np.linalg.norm(out[:, None] - out[None, :], axis=-1)
        assert np.allclose(d_in, d_out, atol=1e-8)

    def test_first_axis_has_most_variance(self):
        out = pca2d(np.random.default_rng(2).standard_normal((50, 5)))
        assert out[:, 0].var() >= out[:, 1].var()


class TestLinearProbe:
    def test_separable_clusters_score_one(self):
        rng = np.random.default_rng(0)
        a = rng.standard_normal((100, 4)) + 8.0
        b = rng.standard_normal((100, 4)) - 8.0
        x = np.concatenate([a, b])
        y = ["pos"] * 100 + ["neg"] * 100
        assert linear_probe(x, y) == 1.0

    def test_shuffled_labels_near_chance(self):
        rng = np.random.default_rng(0)
        a = rng.standard_normal((200, 4)) + 8.0
        b = rng.standard_normal((200, 4)) - 8.0
        x = np.concatenate([a, b])
        y = list(rng.permutation(["pos"] * 200 + ["neg"] * 200))
        assert linear_probe(x, y) < 0.65

    def test_deterministic(self):
        rng = np.random.default_rng(3)
        x = rng.standard_normal((60, 3))
        y = ["a", "b"] * 30
        assert linear_probe(x, y) == linear_probe(x, y)


class TestReport:
    def _report(self):
        rows = [EvalRow("factual", 10, 1.0, 0.9, 1.0, 100.0, 97.0, 3.0),
                EvalRow("positive", 10, 0.5, 0.8, 0.9, 67.1, 90.0, 20.0)]
        return EvalReport(2.0, rows)

    def test_table_header_and_rows(self):
        lines = self._report().table().strip().split("\n")
        assert lines[0] == "Data\tB-3\tcontent\tsACC\tGM1\tGM2\tPPL"
        assert len(lines) == 3 and lines[1].startswith("factual\t")

    def test_summary_is_parseable_kv(self):
        for line in self._report().summary().strip().split("\n"):
            assert "=" in line

    def test_best_lambda_by_styled_gm1(self):
        low = EvalReport(1.0, [EvalRow("positive", 1, 0.2, 0, 0.5, 30.0, 0, 0)])
        high = EvalReport(2.0, [EvalRow("positive", 1, 0.6, 0, 1.0, 80.0, 0, 0)])
        assert best_lambda([low, high]) == 2.0
