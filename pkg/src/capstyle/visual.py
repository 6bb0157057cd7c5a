"""Synthetic visual features and the projection module mapping them into the
language embedding space through learnable constant query slots."""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np
import torch
import torch.nn as nn

from .corpus import SynthStyleSpec, TokenSeq, Vocab
from .model import EncoderLayer, ModelConfig, sinusoidal_positions


@dataclass
class ProjectionConfig:
    d_v: int = 32
    d_model: int = 64
    layers: int = 1
    n_heads: int = 4
    d_ff: int = 128
    n_const: int = 8
    max_frames: int = 4
    seed: int = 2

    def __post_init__(self):
        if self.n_const < 1:
            raise ValueError("n_const must be >= 1")

    def encoder_layer_config(self) -> ModelConfig:
        return ModelConfig(vocab_size=2, d_model=self.d_model, enc_layers=self.layers,
                           dec_layers=1, n_heads=self.n_heads, d_ff=self.d_ff,
                           max_pos=self.max_frames + self.n_const, seed=self.seed)


class VisualProjector(nn.Module):
    """Transformer over [linear(x) ; constant slots]; the final hidden states at
    the constant positions are the adapted visual content vectors."""

    def __init__(self, cfg: ProjectionConfig):
        super().__init__()
        self.cfg = cfg
        torch.manual_seed(cfg.seed)
        layer_cfg = cfg.encoder_layer_config()
        self.in_proj = nn.Linear(cfg.d_v, cfg.d_model)
        self.constants = nn.Parameter(torch.randn(cfg.n_const, cfg.d_model) * 0.02)
        self.layers = nn.ModuleList(EncoderLayer(layer_cfg) for _ in range(cfg.layers))
        self.ln_f = nn.LayerNorm(cfg.d_model)
        self.register_buffer(
            "pos", sinusoidal_positions(cfg.max_frames + cfg.n_const, cfg.d_model))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        """x: (B, d_v) single features or (B, F, d_v) frame stacks -> (B, n_const, d_model)."""
        if x.dim() == 2:
            x = x.unsqueeze(1)
        if x.shape[-1] != self.cfg.d_v:
            raise ValueError(f"expected visual width {self.cfg.d_v}, got {x.shape[-1]}")
        if x.shape[1] > self.cfg.max_frames:
            raise ValueError("too many frames")
        B, F, _ = x.shape
        dtype = self.in_proj.weight.dtype
        h = torch.cat([self.in_proj(x.to(dtype)),
                       self.constants.expand(B, -1, -1)], dim=1)
        h = h + self.pos[: h.shape[1]].to(dtype)
        for layer in self.layers:
            h = layer(h)
        return self.ln_f(h)[:, F:, :]


def project(projector: VisualProjector, x: torch.Tensor) -> torch.Tensor:
    return projector(x)


# ---------------------------------------------------------------------------
# Synthetic features: a frozen random projection of the caption's content words.

def content_word_ids(vocab: Vocab, spec: SynthStyleSpec) -> np.ndarray:
    ids = sorted(vocab.lookup(w) for w in spec.content_words() if w in vocab.index)
    return np.array(ids, dtype=np.int64)


def make_feature_matrix(d_v: int, vocab_size: int, seed: int) -> np.ndarray:
    """Frozen random map from bag-of-words space to feature space, fixed per dataset."""
    rng = np.random.default_rng(seed)
    return rng.standard_normal((d_v, vocab_size)).astype(np.float32)


def synth_visual(caption: TokenSeq, w_fixed: np.ndarray, content_ids: np.ndarray,
                 sigma: float, rng: np.random.Generator) -> np.ndarray:
    """x = W . bag_of_words(caption restricted to content words) + noise.

    Style markers and function words contribute nothing, so captions differing
    only in style produce identical noiseless features."""
    bow = np.zeros(w_fixed.shape[1], dtype=np.float32)
    content = set(content_ids.tolist())
    for t in caption.ids:
        if t in content:
            bow[t] += 1.0
    x = w_fixed @ bow
    if sigma > 0:
        x = x + sigma * rng.standard_normal(x.shape).astype(np.float32)
    return x.astype(np.float32)


def synth_video(caption: TokenSeq, w_fixed: np.ndarray, content_ids: np.ndarray,
                sigma: float, rng: np.random.Generator, frames: int) -> np.ndarray:
    """Several noisy views of the same caption, stacked as frames."""
    return np.stack([synth_visual(caption, w_fixed, content_ids, sigma, rng)
                     for _ in range(frames)])


# ---------------------------------------------------------------------------
# Vision dataset file: a manifest of caption line numbers plus one binary blob
# of little-endian float32 features with a shape header.

_MAGIC = b"CSVF"


def save_vision_dataset(path_prefix: str, features: np.ndarray, caption_lines: list[int]):
    feats = np.ascontiguousarray(features, dtype="<f4")
    with open(path_prefix + ".bin", "wb") as f:
        f.write(_MAGIC)
        f.write(struct.pack("<B", feats.ndim))
        for d in feats.shape:
            f.write(struct.pack("<I", d))
        f.write(feats.tobytes())
    with open(path_prefix + ".manifest", "w", encoding="utf-8") as f:
        for i, line in enumerate(caption_lines):
            f.write(f"{i}\t{line}\n")


def load_vision_dataset(path_prefix: str) -> tuple[np.ndarray, list[int]]:
    with open(path_prefix + ".bin", "rb") as f:
        if f.read(4) != _MAGIC:
            raise ValueError(f"{path_prefix}.bin is not a vision dataset blob")
        ndim = struct.unpack("<B", f.read(1))[0]
        shape = tuple(struct.unpack("<I", f.read(4))[0] for _ in range(ndim))
        feats = np.frombuffer(f.read(), dtype="<f4").reshape(shape)
    lines = []
    with open(path_prefix + ".manifest", encoding="utf-8") as f:
        for row in f:
            _, line = row.split("\t")
            lines.append(int(line))
    return feats, lines
