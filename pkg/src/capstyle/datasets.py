"""Dataset generation and loading: corpus splits, captions, synthetic visual
features, and the factual reference set, all laid out in one directory."""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np

from . import corpus as C
from .corpus import (FACTUAL, Paragraph, RESERVED, SynthStyleSpec, TokenSeq, Vocab,
                     gen_synthetic_corpus, load_corpus, load_spec, save_corpus,
                     save_spec)
from .visual import (content_word_ids, load_vision_dataset, make_feature_matrix,
                     save_vision_dataset, synth_visual)


def spec_vocab(spec: SynthStyleSpec) -> Vocab:
    """Closed vocabulary of the synthetic world: pools, markers, function words."""
    words = set(spec.content_words()) | {"the", "."}
    for lex in spec.styles.values():
        words |= set(lex)
    return Vocab(RESERVED + sorted(words))


def _split(paragraphs: list[Paragraph], train: float, val: float,
           rng: np.random.Generator):
    order = rng.permutation(len(paragraphs))
    n_train = int(len(order) * train)
    n_val = int(len(order) * val)
    pick = lambda idx: [paragraphs[i] for i in idx]
    return (pick(order[:n_train]), pick(order[n_train: n_train + n_val]),
            pick(order[n_train + n_val:]))


@dataclass
class Dataset:
    spec: SynthStyleSpec
    vocab: Vocab
    train: list[Paragraph]
    val: list[Paragraph]
    test: list[Paragraph]
    captions_train: list[list[str]]
    captions_test: list[list[str]]
    features_train: np.ndarray
    features_test: np.ndarray
    factual_refs: list[list[str]]

    def encode_all(self, sentences: list[list[str]]) -> list[TokenSeq]:
        return [self.vocab.encode(s) for s in sentences]

    def sentences(self, split: str) -> list[tuple[list[str], str]]:
        """(words, oracle label) for every sentence in a split."""
        paras = getattr(self, split)
        out = []
        for p in paras:
            for s in p.sentences:
                out.append((s, C.oracle_style(s, self.spec)))
        return out

    def style_examples(self, style: str, n: int, split: str = "val") -> list[TokenSeq]:
        """The first n split sentences the oracle labels with the style."""
        picked = [w for w, lab in self.sentences(split) if lab == style][:n]
        if len(picked) < n:
            raise ValueError(f"split {split!r} has only {len(picked)} {style!r} sentences")
        return self.encode_all(picked)


def generate_dataset(out_dir: str, spec: SynthStyleSpec, seed: int,
                     d_v: int = 32, sigma: float = 0.1,
                     n_factual_refs: int = 100, max_test_captions: int = 200,
                     train_frac: float = 0.75, val_frac: float = 0.125):
    """Write corpus splits, caption sets, visual features and references."""
    os.makedirs(out_dir, exist_ok=True)
    rng = np.random.default_rng(seed)
    paragraphs = gen_synthetic_corpus(spec, seed)
    train, val, test = _split(paragraphs, train_frac, val_frac, rng)
    save_spec(spec, os.path.join(out_dir, "spec.cfg"))
    save_corpus(train, os.path.join(out_dir, "corpus_train.txt"))
    save_corpus(val, os.path.join(out_dir, "corpus_val.txt"))
    save_corpus(test, os.path.join(out_dir, "corpus_test.txt"))

    vocab = spec_vocab(spec)
    w_fixed = make_feature_matrix(d_v, len(vocab), seed)
    np.ascontiguousarray(w_fixed, dtype="<f4").tofile(os.path.join(out_dir, "wfixed.bin"))
    content_ids = content_word_ids(vocab, spec)

    def factual_sentences(paras):
        return [s for p in paras if p.style_label == FACTUAL for s in p.sentences]

    caps_train = factual_sentences(train)
    caps_test = factual_sentences(test)
    # test captions with unique content triples so retrieval is well-posed
    seen, unique_test = set(), []
    for s in caps_test:
        key = tuple(w for w in s if w in spec.content_words())
        if key not in seen:
            seen.add(key)
            unique_test.append(s)
    caps_test = unique_test[:max_test_captions]
    refs = factual_sentences(val)[:n_factual_refs]

    def write_lines(name, sents):
        with open(os.path.join(out_dir, name), "w", encoding="utf-8") as f:
            for s in sents:
                f.write(" ".join(s) + "\n")

    write_lines("captions_train.txt", caps_train)
    write_lines("captions_test.txt", caps_test)
    write_lines("factual_refs.txt", refs)

    def features(sents, noise):
        return np.stack([synth_visual(vocab.encode(s), w_fixed, content_ids, noise, rng)
                         for s in sents]) if sents else np.zeros((0, d_v), dtype=np.float32)

    save_vision_dataset(os.path.join(out_dir, "vision_train"),
                        features(caps_train, sigma), list(range(len(caps_train))))
    save_vision_dataset(os.path.join(out_dir, "vision_test"),
                        features(caps_test, 0.0), list(range(len(caps_test))))


def load_dataset(data_dir: str, max_len: int = C.DEFAULT_MAX_LEN) -> Dataset:
    spec = load_spec(os.path.join(data_dir, "spec.cfg"))
    vocab = spec_vocab(spec)

    def read_lines(name):
        with open(os.path.join(data_dir, name), encoding="utf-8") as f:
            return [line.split() for line in f if line.strip()]

    train = load_corpus(os.path.join(data_dir, "corpus_train.txt"), max_len)
    val = load_corpus(os.path.join(data_dir, "corpus_val.txt"), max_len)
    test = load_corpus(os.path.join(data_dir, "corpus_test.txt"), max_len)
    for paras in (train, val, test):
        for p in paras:
            p.style_label = C.oracle_style(p.sentences[0], spec)
    feats_train, _ = load_vision_dataset(os.path.join(data_dir, "vision_train"))
    feats_test, _ = load_vision_dataset(os.path.join(data_dir, "vision_test"))
    return Dataset(
        spec=spec, vocab=vocab, train=train, val=val, test=test,
        captions_train=read_lines("captions_train.txt"),
        captions_test=read_lines("captions_test.txt"),
        features_train=feats_train, features_test=feats_test,
        factual_refs=read_lines("factual_refs.txt"),
    )
