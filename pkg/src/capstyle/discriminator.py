"""Contrastive style discriminator: CLS-pooled sentence embeddings and the
in-batch softmax probability used for the style-discrimination loss."""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn as nn

from .corpus import CLS, TokenSeq
from .model import Encoder, ModelConfig, pad_batch


@dataclass
class DiscriminatorConfig:
    vocab_size: int
    d_model: int = 32
    layers: int = 2
    n_heads: int = 4
    d_ff: int = 64
    max_pos: int = 64
    tau: float = 0.1
    seed: int = 1

    def __post_init__(self):
        if self.tau <= 0:
            raise ValueError("temperature tau must be > 0")

    def encoder_config(self) -> ModelConfig:
        return ModelConfig(vocab_size=self.vocab_size, d_model=self.d_model,
                           enc_layers=self.layers, dec_layers=1, n_heads=self.n_heads,
                           d_ff=self.d_ff, max_pos=self.max_pos, seed=self.seed)


class StyleDiscriminator(nn.Module):
    def __init__(self, cfg: DiscriminatorConfig):
        super().__init__()
        self.cfg = cfg
        torch.manual_seed(cfg.seed)
        self.encoder = Encoder(cfg.encoder_config())

    @property
    def device(self):
        return next(self.parameters()).device

    def embed(self, seqs: list[TokenSeq]) -> torch.Tensor:
        """Sentence embedding = hidden state at a prepended CLS position."""
        if any(len(s) == 0 for s in seqs):
            raise ValueError("cannot embed an empty sequence")
        with_cls = [TokenSeq((CLS,) + s.ids) for s in seqs]
        ids, mask = pad_batch(with_cls, device=self.device)
        return self.encoder(ids=ids, key_mask=mask)[:, 0, :]

    def embed_soft(self, probs: torch.Tensor, mask: torch.Tensor = None) -> torch.Tensor:
        """Embedding of soft token sequences (B, T, |V|); input vectors are
        probability-weighted mixtures of embedding rows, so gradients reach the
        probabilities. A one-hot input reproduces embed() exactly."""
        B, T, V = probs.shape
        if V != self.cfg.vocab_size:
            raise ValueError("probability rows must span the vocabulary")
        x = probs.to(self.encoder.embed.weight.dtype) @ self.encoder.embed.weight
        cls_vec = self.encoder.embed.weight[CLS].expand(B, 1, -1)
        x = torch.cat([cls_vec, x], dim=1)
        if mask is None:
            full = torch.ones(B, T + 1, dtype=torch.bool, device=x.device)
        else:
            full = torch.cat([torch.ones(B, 1, dtype=torch.bool, device=x.device), mask], dim=1)
        return self.encoder(vecs=x, key_mask=full)[:, 0, :]


def cosine(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    na, nb = a.norm(dim=-1), b.norm(dim=-1)
    if bool((na == 0).any()) or bool((nb == 0).any()):
        raise ValueError("zero-norm embedding")
    return (a * b).sum(-1) / (na * nb)


def similarity(disc: StyleDiscriminator, a: TokenSeq, b: TokenSeq) -> float:
    with torch.no_grad():
        emb = disc.embed([a, b])
    return float(cosine(emb[0], emb[1]))


def _pairwise_cosine(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    a = a / a.norm(dim=-1, keepdim=True)
    b = b / b.norm(dim=-1, keepdim=True)
    return a @ b.T


def contrastive_loss(disc: StyleDiscriminator, anchors: list[TokenSeq],
                     positives: list[TokenSeq], tau: float) -> torch.Tensor:
    """InfoNCE over the batch: each anchor's positive against all other positives."""
    if len(anchors) < 2:
        raise ValueError("contrastive loss needs a batch of at least 2 pairs")
    ea = disc.embed(anchors)
    ep = disc.embed(positives)
    logits = _pairwise_cosine(ea, ep) / tau
    targets = torch.arange(len(anchors), device=logits.device)
    return nn.functional.cross_entropy(logits, targets)


def match_probability(disc: StyleDiscriminator, t_prime_probs: torch.Tensor,
                      t_prime_mask: torch.Tensor, candidates: list[TokenSeq],
                      tau: float) -> torch.Tensor:
    """Softmax probabilities that each candidate is the style match of t'.

    t_prime_probs: (B, T, |V|) soft sequences; candidates: len-C list. Returns
    (B, C) rows summing to 1. Gradients flow only through the probabilities;
    the discriminator is used frozen.
    """
    ea = disc.embed_soft(t_prime_probs, t_prime_mask)
    with torch.no_grad():
        ec = disc.embed(candidates)
    sims = _pairwise_cosine(ea, ec) / tau
    return torch.softmax(sims, dim=-1)


def style_loss(disc: StyleDiscriminator, t_prime_probs: torch.Tensor,
               t_prime_mask: torch.Tensor, donors: list[TokenSeq],
               tau: float) -> torch.Tensor:
    """-log D(t', t_j) with the other donors in the batch as negatives.

    A single candidate makes the probability 1 and the loss 0 (degenerate)."""
    if len(donors) < 2:
        import warnings

        warnings.warn("style loss with no negatives is identically 0", stacklevel=2)
    probs = match_probability(disc, t_prime_probs, t_prime_mask, donors, tau)
    diag = probs.diagonal() if probs.shape[0] == probs.shape[1] else probs[:, 0]
    return -torch.log(diag).mean()


def train_discriminator(disc: StyleDiscriminator, pairs: list[tuple[TokenSeq, TokenSeq]],
                        epochs: int = 3, batch_size: int = 32, lr: float = 1e-3,
                        seed: int = 0, log=None) -> list[float]:
    """Contrastive pre-training on adjacent-sentence pairs. Returns per-step losses."""
    import numpy as np

    opt = torch.optim.Adam(disc.parameters(), lr=lr)
    rng = np.random.default_rng(seed)
    losses = []
    for _ in range(epochs):
        order = rng.permutation(len(pairs))
        for start in range(0, len(order) - 1, batch_size):
            idx = order[start: start + batch_size]
            if len(idx) < 2:
                continue
            anchors = [pairs[i][0] for i in idx]
            positives = [pairs[i][1] for i in idx]
            loss = contrastive_loss(disc, anchors, positives, disc.cfg.tau)
            opt.zero_grad()
            loss.backward()
            opt.step()
            losses.append(float(loss.detach()))
            if log is not None:
                log(len(losses), float(loss))
    return losses
