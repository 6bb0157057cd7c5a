import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from capstyle import corpus as C
from capstyle.corpus import (FACTUAL, NoiseConfig, Paragraph, RejectedSentence,
                             TokenSeq, adjacent_pairs, build_vocab, corrupt,
                             default_spec, gen_synthetic_corpus, load_corpus,
                             load_spec, normalize, oracle_style, save_corpus,
                             save_spec)


class TestNormalize:
    def test_lowercase_and_punct_split(self):
        assert normalize("A Dog runs.") == ["a", "dog", "runs", "."]

    def test_too_long_rejected(self):
        raw = " ".join(["word"] * 33)
        with pytest.raises(RejectedSentence) as e:
            normalize(raw, max_len=32)
        assert e.value.reason == "too_long"

    def test_exactly_max_len_accepted(self):
        raw = " ".join(["word"] * 32)
        assert len(normalize(raw, max_len=32)) == 32

    def test_empty_rejected_with_reason(self):
        with pytest.raises(RejectedSentence) as e:
            normalize("")
        assert e.value.reason == "empty"
        with pytest.raises(RejectedSentence):
            normalize("   ")

    @given(st.text(alphabet=st.characters(codec="utf-8"), max_size=80))
    @settings(max_examples=200)
    def test_idempotent(self, raw):
        try:
            once = normalize(raw, max_len=64)
        except RejectedSentence:
            return
        assert normalize(" ".join(once), max_len=64) == once


class TestVocab:
    def test_build_contains_all_tokens(self):
        v = build_vocab([["a", "b"], ["a", "c"]], min_count=1)
        for t in ("a", "b", "c"):
            assert t in v.index
        assert len(v) == len(C.RESERVED) + 3

    def test_min_count_drops_to_unk(self):
        v = build_vocab([["a", "b"], ["a", "c"]], min_count=2)
        assert "a" in v.index
        assert "b" not in v.index and "c" not in v.index
        assert v.encode(["b"]).ids == (C.UNK,)

    def test_empty_corpus_errors(self):
        with pytest.raises(ValueError):
            build_vocab([])

    def test_lookup_roundtrip(self):
        v = build_vocab([["a", "b", "c"]])
        for i in range(len(v)):
            assert v.lookup(v.token(i)) == i

    def test_reserved_ids_distinct_and_dense(self):
        v = build_vocab([["x"]])
        ids = {C.PAD, C.BOS, C.EOS, C.UNK, C.CLS}
        assert len(ids) == 5
        assert sorted(v.index.values()) == list(range(len(v)))


class TestAdjacentPairs:
    def test_three_sentences(self):
        s1, s2, s3 = ["a"], ["b"], ["c"]
        assert adjacent_pairs(Paragraph([s1, s2, s3])) == [(s1, s2), (s2, s3)]

    def test_single_sentence_no_pairs(self):
        assert adjacent_pairs(Paragraph([["a"]])) == []

    @given(st.integers(min_value=1, max_value=12))
    def test_count_is_n_minus_1(self, n):
        p = Paragraph([[f"w{i}"] for i in range(n)])
        assert len(adjacent_pairs(p)) == n - 1


class TestCorrupt:
    def test_p_zero_identity(self):
        seq = TokenSeq((5, 6, 7, 8))
        assert corrupt(seq, 0.0, np.random.default_rng(0)) == seq

    def test_p_one_drops_all(self):
        seq = TokenSeq((5, 6, 7, 8))
        assert corrupt(seq, 1.0, np.random.default_rng(0)).ids == ()

    def test_fixed_seed_matches_replayed_rng(self):
        seq = TokenSeq(tuple(range(10, 20)))
        got = corrupt(seq, 0.4, np.random.default_rng(42))
        # independent replay of the same decisions
        keep = np.random.default_rng(42).random(10) >= 0.4
        want = tuple(t for t, k in zip(seq.ids, keep) if k)
        assert got.ids == want

    def test_noise_config_deterministic(self):
        cfg = NoiseConfig(drop_prob=0.5, seed=3)
        seq = TokenSeq(tuple(range(10, 30)))
        assert C.corrupt_with_config(seq, cfg) == C.corrupt_with_config(seq, cfg)

    def test_invalid_prob_rejected(self):
        with pytest.raises(ValueError):
            NoiseConfig(drop_prob=1.5)

    @given(st.floats(min_value=0.0, max_value=1.0), st.integers(0, 2**31))
    @settings(max_examples=50)
    def test_order_preserved_no_insertions(self, p, seed):
        seq = TokenSeq(tuple(range(10, 26)))
        out = corrupt(seq, p, np.random.default_rng(seed))
        it = iter(seq.ids)
        assert all(t in it for t in out.ids)  # subsequence check

    def test_survivor_count_within_3_sigma(self):
        p, k, trials = 0.4, 10, 2000
        seq = TokenSeq(tuple(range(10, 10 + k)))
        rng = np.random.default_rng(0)
        survivors = sum(len(corrupt(seq, p, rng)) for _ in range(trials))
        mean = trials * k * (1 - p)
        sigma = np.sqrt(trials * k * p * (1 - p))
        assert abs(survivors - mean) <= 3 * sigma


class TestSyntheticCorpus:
    def test_counts_and_oracle_agreement(self):
        spec = default_spec()
        spec.paragraphs_per_style = 20
        paras = gen_synthetic_corpus(spec, seed=1)
        # two styles + factual
        assert len(paras) == 60
        for p in paras:
            for s in p.sentences:
                assert oracle_style(s, spec) == p.style_label

    def test_seed_determinism(self):
        spec = default_spec()
        spec.paragraphs_per_style = 5
        a = gen_synthetic_corpus(spec, seed=9)
        b = gen_synthetic_corpus(spec, seed=9)
        assert [p.sentences for p in a] == [p.sentences for p in b]

    def test_marker_rate_one_all_marked(self):
        spec = default_spec()
        spec.paragraphs_per_style = 5
        spec.marker_rate = 1.0
        for p in gen_synthetic_corpus(spec, seed=0):
            if p.style_label == FACTUAL:
                continue
            lex = set(spec.styles[p.style_label])
            for s in p.sentences:
                assert len(lex & set(s)) >= 1

    def test_oracle_tiebreak_and_factual(self):
        spec = default_spec()
        a = spec.styles["positive"][0]
        b = spec.styles["negative"][0]
        assert oracle_style(["the", a, "cat", "."], spec) == "positive"
        assert oracle_style(["the", "cat", "."], spec) == FACTUAL
        # one marker each: earlier style in spec order wins
        assert oracle_style([a, b], spec) == "positive"
        assert oracle_style([a, b, b], spec) == "negative"

    def test_overlapping_lexicons_rejected(self):
        spec = default_spec()
        with pytest.raises(ValueError):
            C.SynthStyleSpec(styles={"a": ["cat"]}, subjects=spec.subjects,
                             verbs=spec.verbs, objects=spec.objects)


class TestFileFormats:
    def test_corpus_roundtrip(self, tmp_path):
        spec = default_spec()
        spec.paragraphs_per_style = 3
        paras = gen_synthetic_corpus(spec, seed=0)
        path = tmp_path / "corpus.txt"
        save_corpus(paras, path)
        loaded = load_corpus(path)
        assert [p.sentences for p in loaded] == [p.sentences for p in paras]

    def test_spec_roundtrip(self, tmp_path):
        spec = default_spec()
        path = tmp_path / "spec.cfg"
        save_spec(spec, path)
        loaded = load_spec(path)
        assert loaded.styles == spec.styles
        assert loaded.subjects == spec.subjects
        assert loaded.marker_rate == spec.marker_rate

    def test_load_skips_overlong_sentences(self, tmp_path):
        path = tmp_path / "c.txt"
        path.write_text("a b c\n" + " ".join(["w"] * 40) + "\n")
        paras = load_corpus(path, max_len=32)
        assert [p.sentences for p in paras] == [[["a", "b", "c"]]]
