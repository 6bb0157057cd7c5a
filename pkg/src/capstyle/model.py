"""Tiny transformer encoder-decoder: content extractor, style extractor, generator.

Both extractors are encoders with identical initial weights; they diverge during
training. The generator is a decoder that cross-attends over content vectors to
which a style vector has been added.
"""

from __future__ import annotations

import copy
import math
from dataclasses import dataclass

import torch
import torch.nn as nn

from .corpus import BOS, EOS, PAD, TokenSeq

NEG_INF = float("-inf")


@dataclass
class ModelConfig:
    vocab_size: int
    d_model: int = 64
    enc_layers: int = 2
    dec_layers: int = 2
    n_heads: int = 4
    d_ff: int = 128
    max_pos: int = 64
    seed: int = 0

    def __post_init__(self):
        if self.d_model % self.n_heads != 0:
            raise ValueError(f"d_model={self.d_model} not divisible by n_heads={self.n_heads}")
        for name in ("vocab_size", "d_model", "enc_layers", "dec_layers",
                     "n_heads", "d_ff", "max_pos"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")


def sinusoidal_positions(max_pos: int, d_model: int) -> torch.Tensor:
    pe = torch.zeros(max_pos, d_model)
    position = torch.arange(max_pos, dtype=torch.float).unsqueeze(1)
    div = torch.exp(torch.arange(0, d_model, 2).float() * (-math.log(10000.0) / d_model))
    pe[:, 0::2] = torch.sin(position * div)
    pe[:, 1::2] = torch.cos(position * div[: pe[:, 1::2].shape[1]])
    return pe


class MultiHeadAttention(nn.Module):
    def __init__(self, d_model: int, n_heads: int):
        super().__init__()
        self.n_heads = n_heads
        self.d_head = d_model // n_heads
        self.q_proj = nn.Linear(d_model, d_model)
        self.k_proj = nn.Linear(d_model, d_model)
        self.v_proj = nn.Linear(d_model, d_model)
        self.out_proj = nn.Linear(d_model, d_model)

    def forward(self, q, kv, key_mask=None, causal=False):
        # q: (B, Tq, d); kv: (B, Tk, d); key_mask: (B, Tk) True = valid
        B, Tq, _ = q.shape
        Tk = kv.shape[1]
        qh = self.q_proj(q).view(B, Tq, self.n_heads, self.d_head).transpose(1, 2)
        kh = self.k_proj(kv).view(B, Tk, self.n_heads, self.d_head).transpose(1, 2)
        vh = self.v_proj(kv).view(B, Tk, self.n_heads, self.d_head).transpose(1, 2)
        scores = qh @ kh.transpose(-2, -1) / math.sqrt(self.d_head)
        if key_mask is not None:
            scores = scores.masked_fill(~key_mask[:, None, None, :], NEG_INF)
        if causal:
            tri = torch.ones(Tq, Tk, dtype=torch.bool, device=q.device).tril()
            scores = scores.masked_fill(~tri, NEG_INF)
        attn = torch.softmax(scores, dim=-1)
        out = (attn @ vh).transpose(1, 2).reshape(B, Tq, -1)
        return self.out_proj(out)


class FeedForward(nn.Module):
    def __init__(self, d_model: int, d_ff: int):
        super().__init__()
        self.fc1 = nn.Linear(d_model, d_ff)
        self.fc2 = nn.Linear(d_ff, d_model)

    def forward(self, x):
        return self.fc2(torch.relu(self.fc1(x)))


class EncoderLayer(nn.Module):
    # pre-LN keeps tiny models stable without warmup
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.ln1 = nn.LayerNorm(cfg.d_model)
        self.attn = MultiHeadAttention(cfg.d_model, cfg.n_heads)
        self.ln2 = nn.LayerNorm(cfg.d_model)
        self.ffn = FeedForward(cfg.d_model, cfg.d_ff)

    def forward(self, x, key_mask=None):
        h = self.ln1(x)
        x = x + self.attn(h, h, key_mask=key_mask)
        return x + self.ffn(self.ln2(x))


class DecoderLayer(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.ln1 = nn.LayerNorm(cfg.d_model)
        self.self_attn = MultiHeadAttention(cfg.d_model, cfg.n_heads)
        self.ln2 = nn.LayerNorm(cfg.d_model)
        self.cross_attn = MultiHeadAttention(cfg.d_model, cfg.n_heads)
        self.ln3 = nn.LayerNorm(cfg.d_model)
        self.ffn = FeedForward(cfg.d_model, cfg.d_ff)

    def forward(self, x, memory, self_mask=None, memory_mask=None):
        h = self.ln1(x)
        x = x + self.self_attn(h, h, key_mask=self_mask, causal=True)
        x = x + self.cross_attn(self.ln2(x), memory, key_mask=memory_mask)
        return x + self.ffn(self.ln3(x))


class Encoder(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        self.embed = nn.Embedding(cfg.vocab_size, cfg.d_model, padding_idx=PAD)
        self.register_buffer("pos", sinusoidal_positions(cfg.max_pos, cfg.d_model))
        self.layers = nn.ModuleList(EncoderLayer(cfg) for _ in range(cfg.enc_layers))
        self.ln_f = nn.LayerNorm(cfg.d_model)

    def forward(self, ids=None, vecs=None, key_mask=None):
        """Encode token ids or pre-embedded vectors (B, T, d_model)."""
        if (ids is None) == (vecs is None):
            raise ValueError("provide exactly one of ids, vecs")
        if ids is not None:
            if ids.shape[1] > self.cfg.max_pos:
                raise ValueError("sequence exceeds max positions")
            x = self.embed(ids)
        else:
            if vecs.shape[-1] != self.cfg.d_model:
                raise ValueError(f"expected width {self.cfg.d_model}, got {vecs.shape[-1]}")
            x = vecs
        x = x + self.pos[: x.shape[1]].to(x.dtype)
        for layer in self.layers:
            x = layer(x, key_mask=key_mask)
        return self.ln_f(x)


class Decoder(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        self.embed = nn.Embedding(cfg.vocab_size, cfg.d_model, padding_idx=PAD)
        self.register_buffer("pos", sinusoidal_positions(cfg.max_pos, cfg.d_model))
        self.layers = nn.ModuleList(DecoderLayer(cfg) for _ in range(cfg.dec_layers))
        self.ln_f = nn.LayerNorm(cfg.d_model)
        self.out_proj = nn.Linear(cfg.d_model, cfg.vocab_size)

    def forward(self, prefix_ids, memory, prefix_mask=None, memory_mask=None):
        if prefix_ids.shape[1] > self.cfg.max_pos:
            raise ValueError("prefix exceeds max positions")
        x = self.embed(prefix_ids) + self.pos[: prefix_ids.shape[1]].to(memory.dtype)
        for layer in self.layers:
            x = layer(x, memory, self_mask=prefix_mask, memory_mask=memory_mask)
        return self.out_proj(self.ln_f(x))


class StyledLM(nn.Module):
    """Bundle of style extractor (E_s), content extractor (E_c) and generator (G)."""

    GROUPS = ("E_s", "E_c", "G")

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        torch.manual_seed(cfg.seed)
        self.content_encoder = Encoder(cfg)
        self.generator = Decoder(cfg)
        # identical initial weights, differentiated by training
        self.style_encoder = copy.deepcopy(self.content_encoder)

    def group(self, name: str) -> nn.Module:
        return {"E_s": self.style_encoder, "E_c": self.content_encoder,
                "G": self.generator}[name]


class ParameterGroups:
    """Named, freezable sets of trainable arrays across all modules."""

    def __init__(self):
        self._modules: dict[str, nn.Module] = {}
        self._frozen: dict[str, bool] = {}

    def add(self, name: str, module: nn.Module):
        self._modules[name] = module
        self._frozen[name] = False

    def names(self) -> list[str]:
        return list(self._modules)

    def module(self, name: str) -> nn.Module:
        if name not in self._modules:
            raise KeyError(f"unknown parameter group {name!r}")
        return self._modules[name]

    def set_frozen(self, name: str, flag: bool):
        self.module(name).requires_grad_(not flag)
        self._frozen[name] = flag

    def is_frozen(self, name: str) -> bool:
        if name not in self._frozen:
            raise KeyError(f"unknown parameter group {name!r}")
        return self._frozen[name]

    def named_arrays(self, name: str) -> dict[str, torch.Tensor]:
        return dict(self.module(name).named_parameters())

    def trainable_parameters(self, names=None):
        names = names if names is not None else self.names()
        for n in names:
            if not self._frozen[n]:
                yield from self.module(n).parameters()


# ---------------------------------------------------------------------------
# Batching helpers and the core operations.

def pad_batch(seqs: list[TokenSeq], bos=False, eos=False,
              device=None, dtype=torch.long) -> tuple[torch.Tensor, torch.Tensor]:
    """Right-pad to a common length. Returns (ids, valid_mask)."""
    rows = []
    for s in seqs:
        ids = list(s.ids)
        if bos:
            ids = [BOS] + ids
        if eos:
            ids = ids + [EOS]
        rows.append(ids)
    width = max((len(r) for r in rows), default=0) or 1
    ids = torch.full((len(rows), width), PAD, dtype=dtype, device=device)
    mask = torch.zeros(len(rows), width, dtype=torch.bool, device=device)
    for i, r in enumerate(rows):
        if not r:       # empty content still occupies one BOS position
            r = [BOS]
        ids[i, : len(r)] = torch.tensor(r, dtype=dtype, device=device)
        mask[i, : len(r)] = True
    return ids, mask


def encode_content(encoder: Encoder, seqs: list[TokenSeq] = None,
                   vecs: torch.Tensor = None, key_mask=None):
    """Content vectors for token sequences or visual slots. Returns (memory, mask)."""
    if seqs is not None:
        ids, mask = pad_batch(seqs, device=next(encoder.parameters()).device)
        return encoder(ids=ids, key_mask=mask), mask
    if key_mask is None:
        key_mask = torch.ones(vecs.shape[:2], dtype=torch.bool, device=vecs.device)
    return encoder(vecs=vecs, key_mask=key_mask), key_mask


def extract_style(encoder: Encoder, seqs: list[TokenSeq]) -> torch.Tensor:
    """Mean-pooled hidden states; one style vector per sequence. (B, d_model)."""
    if any(len(s) == 0 for s in seqs):
        raise ValueError("cannot extract style from an empty sequence")
    ids, mask = pad_batch(seqs, device=next(encoder.parameters()).device)
    hidden = encoder(ids=ids, key_mask=mask)
    m = mask.unsqueeze(-1).to(hidden.dtype)
    return (hidden * m).sum(1) / m.sum(1)


def fuse(content: torch.Tensor, style: torch.Tensor) -> torch.Tensor:
    """Add the style vector to every content position."""
    if content.shape[-1] != style.shape[-1]:
        raise ValueError("content/style width mismatch")
    if style.dim() == 1:
        return content + style
    return content + style.unsqueeze(-2)


def decode_logits(generator: Decoder, fused: torch.Tensor, prefix_ids: torch.Tensor,
                  prefix_mask=None, memory_mask=None) -> torch.Tensor:
    return generator(prefix_ids, fused, prefix_mask=prefix_mask, memory_mask=memory_mask)


def sequence_cross_entropy(logits: torch.Tensor, targets: torch.Tensor) -> torch.Tensor:
    """-sum_n log softmax(logits_n)[target_n], PAD positions excluded.

    2-D logits (T, V): scalar. 3-D (B, T, V): per-sequence sums, shape (B,).
    """
    squeeze = logits.dim() == 2
    if squeeze:
        logits, targets = logits.unsqueeze(0), targets.unsqueeze(0)
    logp = torch.log_softmax(logits, dim=-1)
    picked = logp.gather(-1, targets.clamp(min=0).unsqueeze(-1)).squeeze(-1)
    valid = (targets != PAD).to(logp.dtype)
    loss = -(picked * valid).sum(-1)
    return loss.squeeze(0) if squeeze else loss


def teacher_forcing_loss(generator: Decoder, fused: torch.Tensor, memory_mask,
                         targets: list[TokenSeq]) -> torch.Tensor:
    """Mean over the batch of per-sequence summed cross-entropy (targets + EOS)."""
    device = fused.device
    inp, inp_mask = pad_batch(targets, bos=True, device=device)
    out, _ = pad_batch(targets, eos=True, device=device)
    logits = generator(inp, fused, prefix_mask=inp_mask, memory_mask=memory_mask)
    return sequence_cross_entropy(logits, out).mean()


@torch.no_grad()
def greedy_decode(generator: Decoder, fused: torch.Tensor, memory_mask=None,
                  max_len: int = 32) -> list[TokenSeq]:
    """Deterministic argmax decoding from BOS until EOS or max_len.

    Ties break toward the lowest token id (torch.argmax picks the first max).
    """
    from .corpus import CLS

    B = fused.shape[0]
    device = fused.device
    prefix = torch.full((B, 1), BOS, dtype=torch.long, device=device)
    done = torch.zeros(B, dtype=torch.bool, device=device)
    outputs: list[list[int]] = [[] for _ in range(B)]
    for _ in range(max_len):
        logits = generator(prefix, fused, memory_mask=memory_mask)
        last = logits[:, -1, :].clone()
        last[:, [PAD, BOS, CLS]] = NEG_INF  # structural ids are never generated
        nxt = last.argmax(dim=-1)
        for i in range(B):
            if not done[i]:
                if nxt[i].item() == EOS:
                    done[i] = True
                else:
                    outputs[i].append(int(nxt[i]))
        if bool(done.all()):
            break
        step = torch.where(done, torch.full_like(nxt, PAD), nxt)
        prefix = torch.cat([prefix, step.unsqueeze(1)], dim=1)
    return [TokenSeq(tuple(o)) for o in outputs]
