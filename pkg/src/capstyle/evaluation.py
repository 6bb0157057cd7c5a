"""Metrics: style accuracy, BLEU-3, geometric means, content score, n-gram
perplexity, 2-D style-embedding projection, and the full evaluation report."""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass

import numpy as np
import torch

from .checkpoint import System
from .corpus import FACTUAL, SynthStyleSpec, TokenSeq, oracle_style
from .inference import caption as infer_caption
from .inference import source_style, style_delta, target_style
from .model import encode_content


def style_accuracy(captions: list[list[str]], target: str, spec: SynthStyleSpec) -> float:
    """Fraction of captions the lexicon oracle labels as the target style."""
    if not captions:
        return 0.0
    hits = sum(1 for c in captions if oracle_style(c, spec) == target)
    return hits / len(captions)


def _ngrams(tokens: list[str], n: int) -> Counter:
    return Counter(tuple(tokens[i: i + n]) for i in range(len(tokens) - n + 1))


def bleu3(candidate: list[str], references: list[list[str]]) -> float:
    """BLEU with orders 1..3: clipped modified precisions, geometric mean,
    brevity penalty. Orders with zero matches get add-1 smoothing on both
    numerator and denominator."""
    if not candidate:
        return 0.0
    log_p = 0.0
    for n in (1, 2, 3):
        cand = _ngrams(candidate, n)
        best = Counter()
        for ref in references:
            for g, c in _ngrams(ref, n).items():
                best[g] = max(best[g], c)
        matches = sum(min(c, best[g]) for g, c in cand.items())
        total = sum(cand.values())
        if matches == 0:
            matches, total = matches + 1, total + 1
        log_p += math.log(matches / total) / 3.0
    c = len(candidate)
    r = min((len(ref) for ref in references),
            key=lambda L: (abs(L - c), L))
    bp = 1.0 if c > r else math.exp(1 - r / c) if c > 0 else 0.0
    if c == r:
        bp = 1.0
    return bp * math.exp(log_p)


def geomean(a: float, b: float) -> float:
    if a < 0 or b < 0:
        raise ValueError("geometric mean needs nonnegative factors")
    return math.sqrt(a * b)


# ---------------------------------------------------------------------------
# Additive-smoothed n-gram language model (fluency proxy).

_SENT_START = "<s>"


@dataclass
class NgramLM:
    n: int
    alpha: float
    counts: Counter
    context_counts: Counter
    vocab_size: int


def train_ngram_lm(sentences: list[list[str]], n: int = 3, alpha: float = 0.1) -> NgramLM:
    vocab = {w for s in sentences for w in s}
    counts, contexts = Counter(), Counter()
    for s in sentences:
        padded = [_SENT_START] * (n - 1) + list(s)
        for i in range(n - 1, len(padded)):
            gram = tuple(padded[i - n + 1: i + 1])
            counts[gram] += 1
            contexts[gram[:-1]] += 1
    return NgramLM(n, alpha, counts, contexts, len(vocab))


def ngram_logprob(lm: NgramLM, sentence: list[str]) -> tuple[float, int]:
    padded = [_SENT_START] * (lm.n - 1) + list(sentence)
    total = 0.0
    for i in range(lm.n - 1, len(padded)):
        gram = tuple(padded[i - lm.n + 1: i + 1])
        num = lm.counts[gram] + lm.alpha
        den = lm.context_counts[gram[:-1]] + lm.alpha * lm.vocab_size
        total += math.log(num / den)
    return total, len(sentence)


def perplexity(lm: NgramLM, sentences: list[list[str]]) -> float:
    """exp(-(1/K) sum log p(w | context)) over all K tokens."""
    logp, k = 0.0, 0
    for s in sentences:
        lp, n = ngram_logprob(lm, s)
        logp += lp
        k += n
    if k == 0:
        return float("inf")
    return math.exp(-logp / k)


# ---------------------------------------------------------------------------
# Representation diagnostics.

def content_score(system: System, cap: TokenSeq, x) -> float:
    """Cosine between pooled content vectors of the projected visual and the caption."""
    dtype = next(system.lm.parameters()).dtype
    if isinstance(x, np.ndarray):
        x = torch.tensor(np.ascontiguousarray(x))
    x = x.to(dtype)
    if x.dim() == 1:
        x = x.unsqueeze(0)
    with torch.no_grad():
        slots = system.projector(x)
        vh, vm = encode_content(system.lm.content_encoder, vecs=slots)
        th, tm = encode_content(system.lm.content_encoder, seqs=[cap])
        v = (vh * vm.unsqueeze(-1).to(dtype)).sum(1) / vm.sum(1, keepdim=True).to(dtype)
        t = (th * tm.unsqueeze(-1).to(dtype)).sum(1) / tm.sum(1, keepdim=True).to(dtype)
    num = float((v * t).sum())
    den = float(v.norm() * t.norm())
    return num / den if den > 0 else 0.0


def pca2d(vectors: np.ndarray) -> np.ndarray:
    """Mean-centered projection onto the top-2 principal directions."""
    x = np.asarray(vectors, dtype=np.float64)
    x = x - x.mean(axis=0, keepdims=True)
    _, _, vt = np.linalg.svd(x, full_matrices=False)
    return x @ vt[:2].T


def linear_probe(vectors: np.ndarray, labels: list, train_frac: float = 0.5,
                 seed: int = 0) -> float:
    """Held-out accuracy of a logistic separator on the style vectors."""
    from sklearn.linear_model import LogisticRegression

    x = np.asarray(vectors, dtype=np.float64)
    y = np.asarray(labels)
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(x))
    cut = int(len(x) * train_frac)
    tr, te = order[:cut], order[cut:]
    clf = LogisticRegression(max_iter=1000, random_state=0)
    clf.fit(x[tr], y[tr])
    return float(clf.score(x[te], y[te]))


# ---------------------------------------------------------------------------
# Full report.

@dataclass
class EvalRow:
    style: str
    count: int
    bleu: float
    content: float
    sacc: float
    gm1: float
    gm2: float
    ppl: float


@dataclass
class EvalReport:
    lam: float
    rows: list[EvalRow]

    def mean_gm1(self) -> float:
        return sum(r.gm1 for r in self.rows) / len(self.rows)

    def table(self) -> str:
        header = "Data\tB-3\tcontent\tsACC\tGM1\tGM2\tPPL"
        lines = [header]
        for r in self.rows:
            lines.append(f"{r.style}\t{r.bleu:.4f}\t{r.content:.4f}\t{r.sacc:.4f}"
                         f"\t{r.gm1:.4f}\t{r.gm2:.4f}\t{r.ppl:.4f}")
        return "\n".join(lines) + "\n"

    def summary(self) -> str:
        lines = [f"lambda={self.lam}"]
        for r in self.rows:
            for k in ("count", "bleu", "content", "sacc", "gm1", "gm2", "ppl"):
                lines.append(f"{r.style}.{k}={getattr(r, k)}")
        return "\n".join(lines) + "\n"


def evaluate(system: System, spec: SynthStyleSpec, features: np.ndarray,
             references: list[list[str]], examples: dict[str, list[TokenSeq]],
             factual_refs: list[TokenSeq], lam: float,
             fluency_lm: NgramLM | None = None, max_len: int = 32) -> EvalReport:
    """Generate captions per style and fill the metric table.

    GM1 pairs style accuracy with BLEU-3, GM2 with the content score; both
    factors are mapped to a 0..100 scale before the geometric mean."""
    s_src = source_style(system, factual_refs)
    rows = []
    styles = [FACTUAL] + [s for s in examples if s != FACTUAL]
    for style in styles:
        if style == FACTUAL:
            s = s_src
        else:
            s = style_delta(target_style(system, examples[style]), s_src, lam)
        caps = infer_caption(system, features, s, max_len=max_len)
        words = [system.vocab.decode(c) for c in caps]
        sacc = style_accuracy(words, style, spec)
        bleu = sum(bleu3(w, [r]) for w, r in zip(words, references)) / len(words)
        cscore = sum(content_score(system, c, features[i])
                     for i, c in enumerate(caps)) / len(caps)
        gm1 = geomean(sacc * 100, bleu * 100)
        gm2 = geomean(sacc * 100, 100 * (cscore + 1) / 2)
        ppl = perplexity(fluency_lm, words) if fluency_lm is not None else float("nan")
        rows.append(EvalRow(style, len(caps), bleu, cscore, sacc, gm1, gm2, ppl))
    return EvalReport(lam, rows)


def scan_lambda(system: System, spec: SynthStyleSpec, features, references,
                examples, factual_refs, lams, fluency_lm=None,
                max_len: int = 32) -> list[EvalReport]:
    return [evaluate(system, spec, features, references, examples, factual_refs,
                     lam, fluency_lm, max_len) for lam in lams]


def best_lambda(reports: list[EvalReport]) -> float:
    """The scan winner by mean GM1 over the styled rows."""
    def score(rep):
        styled = [r for r in rep.rows if r.style != FACTUAL] or rep.rows
        return sum(r.gm1 for r in styled) / len(styled)

    return max(reports, key=score).lam
