"""Few-shot stylized generation: style vectors from user examples, the delta
rule, and decoding for visual inputs or text transfer."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import torch

from .checkpoint import System
from .corpus import TokenSeq, corrupt
from .model import encode_content, extract_style, fuse, greedy_decode


@dataclass
class DeltaConfig:
    lam: float = 2.0                # stylization strength; the delta-rule scale
    source_refs: list[TokenSeq] = field(default_factory=list)

    def __post_init__(self):
        if not self.source_refs:
            raise ValueError("source-style reference set must be nonempty")


def target_style(system: System, examples: list[TokenSeq]) -> torch.Tensor:
    """Mean of the style vectors of the user-supplied examples."""
    if not examples:
        raise ValueError("need at least one style example")
    with torch.no_grad():
        vecs = extract_style(system.lm.style_encoder, examples)
    return vecs.mean(0)


def source_style(system: System, factual_refs: list[TokenSeq]) -> torch.Tensor:
    """Style vector of the factual reference set (same pooling as target_style)."""
    return target_style(system, factual_refs)


def style_delta(s_tgt: torch.Tensor, s_src: torch.Tensor, lam: float) -> torch.Tensor:
    """s = lam * (s_tgt - s_src) + s_src."""
    if s_tgt.shape != s_src.shape:
        raise ValueError("style vector width mismatch")
    return lam * (s_tgt - s_src) + s_src


@torch.no_grad()
def caption(system: System, x: np.ndarray | torch.Tensor, style: torch.Tensor,
            max_len: int = 32) -> list[TokenSeq]:
    """Greedy captions for a batch of visual features under one style vector."""
    dtype = next(system.lm.parameters()).dtype
    if isinstance(x, np.ndarray):
        x = torch.tensor(np.ascontiguousarray(x))
    x = x.to(dtype)
    if x.dim() == 1:
        x = x.unsqueeze(0)
    slots = system.projector(x)
    memory, mask = encode_content(system.lm.content_encoder, vecs=slots)
    return greedy_decode(system.lm.generator, fuse(memory, style), mask, max_len=max_len)


@torch.no_grad()
def transfer(system: System, texts: list[TokenSeq], style: torch.Tensor,
             p_infer: float = 0.0, seed: int = 0, max_len: int = 32) -> list[TokenSeq]:
    """Rewrite text under a style vector; no corruption by default at inference."""
    if p_infer > 0:
        rng = np.random.default_rng(seed)
        texts = [corrupt(t, p_infer, rng) for t in texts]
    memory, mask = encode_content(system.lm.content_encoder, seqs=texts)
    return greedy_decode(system.lm.generator, fuse(memory, style), mask, max_len=max_len)
