"""Text corpus handling: normalization, vocabulary, pairing, noise, synthetic styled data."""

from __future__ import annotations

import re
from collections import Counter
from dataclasses import dataclass, field

import numpy as np

PAD, BOS, EOS, UNK, CLS = 0, 1, 2, 3, 4
PAD_TOK, BOS_TOK, EOS_TOK, UNK_TOK, CLS_TOK = "<pad>", "<bos>", "<eos>", "<unk>", "<cls>"
RESERVED = [PAD_TOK, BOS_TOK, EOS_TOK, UNK_TOK, CLS_TOK]

DEFAULT_MAX_LEN = 32

_PUNCT_RE = re.compile(r"([.,!?;:'\"()])")


class RejectedSentence(Exception):
    """Raised by normalize() when a sentence cannot enter the corpus."""

    def __init__(self, reason: str):
        super().__init__(reason)
        self.reason = reason


def normalize(raw: str, max_len: int = DEFAULT_MAX_LEN) -> list[str]:
    """Lowercase, split punctuation into separate tokens, enforce the length cap.

    Raises RejectedSentence with reason "empty" or "too_long".
    """
    text = _PUNCT_RE.sub(r" \1 ", raw.lower())
    words = text.split()
    if not words:
        raise RejectedSentence("empty")
    if len(words) > max_len:
        raise RejectedSentence("too_long")
    return words


def try_normalize(raw: str, max_len: int = DEFAULT_MAX_LEN) -> list[str] | None:
    try:
        return normalize(raw, max_len)
    except RejectedSentence:
        return None


@dataclass(frozen=True)
class TokenSeq:
    """A normalized sentence as vocabulary ids (no BOS/EOS; K = len(ids))."""

    ids: tuple[int, ...]

    def __len__(self) -> int:
        return len(self.ids)

    def __iter__(self):
        return iter(self.ids)


@dataclass
class Vocab:
    tokens: list[str]
    index: dict[str, int] = field(init=False, repr=False)

    def __post_init__(self):
        assert self.tokens[: len(RESERVED)] == RESERVED, "reserved tokens must lead the table"
        self.index = {t: i for i, t in enumerate(self.tokens)}
        assert len(self.index) == len(self.tokens), "duplicate tokens"

    def __len__(self) -> int:
        return len(self.tokens)

    def lookup(self, token: str) -> int:
        return self.index.get(token, UNK)

    def token(self, i: int) -> str:
        return self.tokens[i]

    def encode(self, words: list[str]) -> TokenSeq:
        return TokenSeq(tuple(self.index.get(w, UNK) for w in words))

    def decode(self, seq: TokenSeq | list[int]) -> list[str]:
        ids = seq.ids if isinstance(seq, TokenSeq) else seq
        return [self.tokens[i] for i in ids if i not in (PAD, BOS, EOS)]

    def save(self, path):
        with open(path, "w", encoding="utf-8") as f:
            for t in self.tokens:
                f.write(t + "\n")

    @staticmethod
    def load(path) -> "Vocab":
        with open(path, encoding="utf-8") as f:
            return Vocab([line.rstrip("\n") for line in f if line.rstrip("\n")])


def build_vocab(sentences: list[list[str]], min_count: int = 1) -> Vocab:
    """Frequency-based vocabulary; words under min_count fall back to UNK."""
    if not sentences:
        raise ValueError("cannot build a vocabulary from an empty corpus")
    counts = Counter(w for s in sentences for w in s)
    kept = sorted(w for w, c in counts.items() if c >= min_count)
    return Vocab(RESERVED + kept)


@dataclass
class Paragraph:
    """Sentences sharing one style. The label is an oracle, hidden from training."""

    sentences: list[list[str]]
    style_label: str | None = None


def adjacent_pairs(paragraph: Paragraph) -> list[tuple[list[str], list[str]]]:
    """All (t_prev, t_cur) pairs of adjacent sentences, in document order."""
    s = paragraph.sentences
    return [(s[i - 1], s[i]) for i in range(1, len(s))]


@dataclass
class NoiseConfig:
    drop_prob: float = 0.4
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.drop_prob <= 1.0:
            raise ValueError(f"drop_prob must be in [0,1], got {self.drop_prob}")


def corrupt(seq: TokenSeq, drop_prob: float, rng: np.random.Generator) -> TokenSeq:
    """Drop each non-reserved token independently with probability drop_prob."""
    if drop_prob == 0.0:
        return seq
    keep = rng.random(len(seq.ids)) >= drop_prob
    ids = tuple(t for t, k in zip(seq.ids, keep) if k or t < len(RESERVED))
    return TokenSeq(ids)


def corrupt_with_config(seq: TokenSeq, cfg: NoiseConfig) -> TokenSeq:
    return corrupt(seq, cfg.drop_prob, np.random.default_rng(cfg.seed))


# ---------------------------------------------------------------------------
# Synthetic two-style corpus with a ground-truth lexicon oracle.

FACTUAL = "factual"


@dataclass
class SynthStyleSpec:
    styles: dict[str, list[str]]          # style name -> marker lexicon
    subjects: list[str]
    verbs: list[str]
    objects: list[str]
    paragraphs_per_style: int = 600
    sentences_per_paragraph: int = 4
    marker_rate: float = 0.6              # chance of filling each optional marker slot

    def __post_init__(self):
        pools = [set(self.subjects), set(self.verbs), set(self.objects)]
        content = set().union(*pools)
        for name, lex in self.styles.items():
            if set(lex) & content:
                raise ValueError(f"style lexicon {name!r} overlaps content pools")
        for other, lex2 in self.styles.items():
            for name, lex in self.styles.items():
                if name < other and set(lex) & set(lex2):
                    raise ValueError(f"lexicons {name!r} and {other!r} overlap")

    @property
    def style_names(self) -> list[str]:
        return list(self.styles.keys())

    def content_words(self) -> set[str]:
        return set(self.subjects) | set(self.verbs) | set(self.objects)


def default_spec() -> SynthStyleSpec:
    return SynthStyleSpec(
        styles={
            "positive": ["lovely", "happy", "bright", "sweet", "gentle",
                         "cheerful", "shiny", "pleasant"],
            "negative": ["gloomy", "broken", "ugly", "rotten", "dreary",
                         "nasty", "bitter", "grim"],
        },
        subjects=["cat", "dog", "bird", "horse", "child", "woman", "man",
                  "fox", "rabbit", "turtle", "farmer", "sailor"],
        verbs=["watches", "follows", "carries", "finds", "paints",
               "chases", "holds", "draws", "feeds", "pulls"],
        objects=["ball", "kite", "wagon", "lantern", "basket", "flag",
                 "drum", "boat", "apple", "stone", "ribbon", "bell"],
    )


def _make_sentence(spec: SynthStyleSpec, style: str, rng: np.random.Generator) -> list[str]:
    subj = spec.subjects[rng.integers(len(spec.subjects))]
    verb = spec.verbs[rng.integers(len(spec.verbs))]
    obj = spec.objects[rng.integers(len(spec.objects))]
    words = ["the", subj, verb, "the", obj, "."]
    if style == FACTUAL:
        return words
    lex = spec.styles[style]
    slots = [1, 4]  # adjective positions before subject and object
    picks = [i for i in slots if rng.random() < spec.marker_rate]
    if not picks:  # styled sentences always carry at least one marker
        picks = [slots[int(rng.integers(len(slots)))]]
    for i in sorted(picks, reverse=True):
        words.insert(i, lex[int(rng.integers(len(lex)))])
    return words


def gen_synthetic_corpus(spec: SynthStyleSpec, seed: int) -> list[Paragraph]:
    """Single-style paragraphs for each style in the spec plus a factual set."""
    rng = np.random.default_rng(seed)
    paragraphs = []
    for style in spec.style_names + [FACTUAL]:
        for _ in range(spec.paragraphs_per_style):
            sents = [_make_sentence(spec, style, rng)
                     for _ in range(spec.sentences_per_paragraph)]
            paragraphs.append(Paragraph(sents, style))
    return paragraphs


def oracle_style(words: list[str], spec: SynthStyleSpec) -> str:
    """Lexicon-hit argmax; factual when no style marker occurs. Ties go to the
    earlier style in spec order."""
    bag = Counter(words)
    best, best_hits = FACTUAL, 0
    for name in spec.style_names:
        hits = sum(bag[w] for w in spec.styles[name])
        if hits > best_hits:
            best, best_hits = name, hits
    return best


# ---------------------------------------------------------------------------
# File formats: one sentence per line, blank line between paragraphs.

def save_corpus(paragraphs: list[Paragraph], path):
    with open(path, "w", encoding="utf-8") as f:
        for i, p in enumerate(paragraphs):
            if i:
                f.write("\n")
            for s in p.sentences:
                f.write(" ".join(s) + "\n")


def load_corpus(path, max_len: int = DEFAULT_MAX_LEN) -> list[Paragraph]:
    paragraphs: list[Paragraph] = []
    current: list[list[str]] = []
    with open(path, encoding="utf-8") as f:
        for line in f:
            line = line.strip()
            if not line:
                if current:
                    paragraphs.append(Paragraph(current))
                    current = []
                continue
            words = try_normalize(line, max_len)
            if words is not None:
                current.append(words)
    if current:
        paragraphs.append(Paragraph(current))
    return paragraphs


def save_spec(spec: SynthStyleSpec, path):
    with open(path, "w", encoding="utf-8") as f:
        for name, lex in spec.styles.items():
            f.write(f"style.{name}={','.join(lex)}\n")
        f.write(f"subjects={','.join(spec.subjects)}\n")
        f.write(f"verbs={','.join(spec.verbs)}\n")
        f.write(f"objects={','.join(spec.objects)}\n")
        f.write(f"paragraphs_per_style={spec.paragraphs_per_style}\n")
        f.write(f"sentences_per_paragraph={spec.sentences_per_paragraph}\n")
        f.write(f"marker_rate={spec.marker_rate}\n")


def load_spec(path) -> SynthStyleSpec:
    styles: dict[str, list[str]] = {}
    kv: dict[str, str] = {}
    with open(path, encoding="utf-8") as f:
        for line in f:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            key, _, val = line.partition("=")
            if key.startswith("style."):
                styles[key[len("style."):]] = val.split(",")
            else:
                kv[key] = val
    return SynthStyleSpec(
        styles=styles,
        subjects=kv["subjects"].split(","),
        verbs=kv["verbs"].split(","),
        objects=kv["objects"].split(","),
        paragraphs_per_style=int(kv["paragraphs_per_style"]),
        sentences_per_paragraph=int(kv["sentences_per_paragraph"]),
        marker_rate=float(kv["marker_rate"]),
    )
