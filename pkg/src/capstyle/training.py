"""Loss functions, the two-stage training procedure, and finite-difference
gradient checking."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import torch

from .checkpoint import System, save_checkpoint
from .corpus import Paragraph, TokenSeq, Vocab, adjacent_pairs, corrupt
from .discriminator import StyleDiscriminator, style_loss
from .model import (StyledLM, encode_content, extract_style, fuse, greedy_decode,
                    pad_batch, teacher_forcing_loss)
from .visual import VisualProjector


@dataclass
class Stage1Config:
    epochs: int = 20
    batch_size: int = 32
    lr_es: float = 5e-4
    lr_ec: float = 5e-4
    lr_g: float = 5e-4
    drop_prob: float = 0.4
    tau: float = 0.1
    use_dr: bool = True
    use_nbt: bool = True
    use_style: bool = True
    seed: int = 0
    max_decode_len: int = 16

    def __post_init__(self):
        if not (self.use_dr or self.use_nbt or self.use_style):
            raise ValueError("at least one stage-1 loss must be enabled")


@dataclass
class Stage2Config:
    epochs: int = 20
    batch_size: int = 32
    lr_m: float = 1e-3
    lr_other: float = 5e-4
    use_cap: bool = True
    use_v2l: bool = True
    multitask: bool = True
    drop_prob: float = 0.4
    tau: float = 0.1
    seed: int = 0
    max_decode_len: int = 16

    def __post_init__(self):
        if self.lr_m <= 0 or self.lr_other <= 0:
            raise ValueError("learning rates must be > 0")


@dataclass
class LossReport:
    step: int
    losses: dict[str, float]
    grad_norms: dict[str, float] = field(default_factory=dict)

    def line(self) -> str:
        parts = [f"step={self.step}"]
        parts += [f"{k}={v:.6f}" for k, v in self.losses.items()]
        parts += [f"gnorm_{k}={v:.6f}" for k, v in self.grad_norms.items()]
        return "\t".join(parts)


# ---------------------------------------------------------------------------
# Stage-1 text losses.

def _styled_memory(lm: StyledLM, content_seqs: list[TokenSeq],
                   style_seqs: list[TokenSeq]):
    memory, mask = encode_content(lm.content_encoder, seqs=content_seqs)
    style = extract_style(lm.style_encoder, style_seqs)
    return fuse(memory, style), mask


def loss_dr(lm: StyledLM, pairs: list[tuple[TokenSeq, TokenSeq]],
            drop_prob: float, rng: np.random.Generator) -> torch.Tensor:
    """Reconstruct t_cur from its corrupted form plus the style of t_prev."""
    prev = [p for p, _ in pairs]
    cur = [c for _, c in pairs]
    corrupted = [corrupt(c, drop_prob, rng) for c in cur]
    fused, mask = _styled_memory(lm, corrupted, prev)
    return teacher_forcing_loss(lm.generator, fused, mask, cur)


def nbt_pass1(lm: StyledLM, cur: list[TokenSeq], donors: list[TokenSeq],
              drop_prob: float, rng: np.random.Generator,
              max_decode_len: int) -> tuple[list[TokenSeq], list[TokenSeq]]:
    """Gradient-free transfer of corrupted t_cur into the donor's style."""
    corrupted = [corrupt(c, drop_prob, rng) for c in cur]
    with torch.no_grad():
        fused, mask = _styled_memory(lm, corrupted, donors)
        t_prime = greedy_decode(lm.generator, fused, mask, max_len=max_decode_len)
    return corrupted, t_prime


def loss_nbt(lm: StyledLM, pairs: list[tuple[TokenSeq, TokenSeq]],
             t_prime: list[TokenSeq]) -> torch.Tensor:
    """Translate t' back to the original style; gradients flow through this pass only."""
    prev = [p for p, _ in pairs]
    cur = [c for _, c in pairs]
    fused, mask = _styled_memory(lm, t_prime, prev)
    return teacher_forcing_loss(lm.generator, fused, mask, cur)


def soft_regeneration(lm: StyledLM, corrupted: list[TokenSeq], donors: list[TokenSeq],
                      t_prime: list[TokenSeq]):
    """Re-run the transfer pass with gradient, teacher-forced on the decoded t',
    yielding soft token rows so the style loss can reach the generator."""
    device = next(lm.parameters()).device
    fused, mem_mask = _styled_memory(lm, corrupted, donors)
    prefix, prefix_mask = pad_batch(t_prime, bos=True, device=device)
    logits = lm.generator(prefix, fused, prefix_mask=prefix_mask, memory_mask=mem_mask)
    probs = torch.softmax(logits, dim=-1)
    # row n is the distribution that generated token n of t'; empty decodes keep
    # the single first-step row so the sequence is never empty
    out_mask = torch.zeros(len(t_prime), prefix.shape[1], dtype=torch.bool, device=device)
    for i, tp in enumerate(t_prime):
        out_mask[i, : max(len(tp), 1)] = True
    return probs, out_mask


def loss_style(lm: StyledLM, disc: StyleDiscriminator,
               pairs: list[tuple[TokenSeq, TokenSeq]], donors: list[TokenSeq],
               drop_prob: float, rng: np.random.Generator, tau: float,
               max_decode_len: int, precomputed=None) -> torch.Tensor:
    """-log D(t', t_j): t' should look like the donor's style to the frozen
    discriminator, with the other donors in the batch as negatives."""
    cur = [c for _, c in pairs]
    if precomputed is not None:
        corrupted, t_prime = precomputed
    else:
        corrupted, t_prime = nbt_pass1(lm, cur, donors, drop_prob, rng, max_decode_len)
    probs, mask = soft_regeneration(lm, corrupted, donors, t_prime)
    return style_loss(disc, probs, mask[:, : probs.shape[1]], donors, tau)


def loss_text(lm: StyledLM, disc: StyleDiscriminator,
              pairs: list[tuple[TokenSeq, TokenSeq]], donors: list[TokenSeq],
              cfg: Stage1Config, rng: np.random.Generator) -> tuple[torch.Tensor, dict]:
    """Average of the enabled stage-1 losses."""
    components: dict[str, torch.Tensor] = {}
    cur = [c for _, c in pairs]
    precomputed = None
    if cfg.use_nbt or cfg.use_style:
        precomputed = nbt_pass1(lm, cur, donors, cfg.drop_prob, rng, cfg.max_decode_len)
    if cfg.use_dr:
        components["dr"] = loss_dr(lm, pairs, cfg.drop_prob, rng)
    if cfg.use_nbt:
        components["nbt"] = loss_nbt(lm, pairs, precomputed[1])
    if cfg.use_style:
        components["style"] = loss_style(lm, disc, pairs, donors, cfg.drop_prob,
                                         rng, cfg.tau, cfg.max_decode_len, precomputed)
    total = sum(components.values()) / len(components)
    return total, components


# ---------------------------------------------------------------------------
# Stage-2 visual losses.

def _masked_meanpool(hidden: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
    m = mask.unsqueeze(-1).to(hidden.dtype)
    return (hidden * m).sum(1) / m.sum(1)


def loss_cap(lm: StyledLM, projector: VisualProjector, x: torch.Tensor,
             y_cur: list[TokenSeq], y_prev: list[TokenSeq]) -> torch.Tensor:
    """Caption from projected visual content plus the style of another factual caption."""
    slots = projector(x)
    memory, mask = encode_content(lm.content_encoder, vecs=slots)
    style = extract_style(lm.style_encoder, y_prev)
    return teacher_forcing_loss(lm.generator, fuse(memory, style), mask, y_cur)


def loss_v2l(lm: StyledLM, projector: VisualProjector, x: torch.Tensor,
             y: list[TokenSeq]) -> torch.Tensor:
    """Squared L2 between mean-pooled content vectors of the projected visual
    and of its factual caption."""
    slots = projector(x)
    vis_hidden, vis_mask = encode_content(lm.content_encoder, vecs=slots)
    txt_hidden, txt_mask = encode_content(lm.content_encoder, seqs=y)
    diff = _masked_meanpool(vis_hidden, vis_mask) - _masked_meanpool(txt_hidden, txt_mask)
    return (diff ** 2).sum(-1).mean()


def loss_visual(lm: StyledLM, projector: VisualProjector, x: torch.Tensor,
                y_cur: list[TokenSeq], y_prev: list[TokenSeq],
                use_cap: bool = True, use_v2l: bool = True) -> tuple[torch.Tensor, dict]:
    components: dict[str, torch.Tensor] = {}
    if use_cap:
        components["cap"] = loss_cap(lm, projector, x, y_cur, y_prev)
    if use_v2l:
        components["v2l"] = loss_v2l(lm, projector, x, y_cur)
    if not components:
        raise ValueError("no visual loss enabled")
    return sum(components.values()) / len(components), components


def total_loss(visual: torch.Tensor, text: torch.Tensor) -> torch.Tensor:
    """Multi-task objective: the sum of the two task losses."""
    return visual + text


# ---------------------------------------------------------------------------
# Batch preparation.

def paired_corpus(paragraphs: list[Paragraph], vocab: Vocab
                  ) -> list[tuple[TokenSeq, TokenSeq, int]]:
    """(t_prev, t_cur, paragraph index) for every adjacent pair in the corpus."""
    out = []
    for pi, p in enumerate(paragraphs):
        for prev, cur in adjacent_pairs(p):
            out.append((vocab.encode(prev), vocab.encode(cur), pi))
    return out


def sample_donors(batch: list[tuple[TokenSeq, TokenSeq, int]],
                  all_pairs: list[tuple[TokenSeq, TokenSeq, int]],
                  rng: np.random.Generator) -> list[TokenSeq]:
    """One style donor per item, drawn from a different paragraph."""
    donors = []
    for _, _, pi in batch:
        for _ in range(20):
            j = int(rng.integers(len(all_pairs)))
            if all_pairs[j][2] != pi:
                break
        donors.append(all_pairs[j][0])
    return donors


def _batches(n: int, batch_size: int, rng: np.random.Generator):
    order = rng.permutation(n)
    for start in range(0, n, batch_size):
        idx = order[start: start + batch_size]
        if len(idx) >= 2:
            yield idx


# ---------------------------------------------------------------------------
# Training loops.

class DivergenceError(RuntimeError):
    pass


def _check_finite(value: float, report: LossReport):
    if not math.isfinite(value):
        raise DivergenceError(f"non-finite loss at step {report.step}: {report.line()}")


def _grad_norms(system: System, names) -> dict[str, float]:
    norms = {}
    for n in names:
        total = 0.0
        for p in system.groups.module(n).parameters():
            if p.grad is not None:
                total += float((p.grad ** 2).sum())
        norms[n] = math.sqrt(total)
    return norms


def train_stage1(system: System, paragraphs: list[Paragraph], cfg: Stage1Config,
                 out_path: str = None, log=None) -> list[LossReport]:
    """Optimize the text losses over adjacent-sentence pairs; D stays frozen."""
    torch.manual_seed(cfg.seed)
    rng = np.random.default_rng(cfg.seed)
    system.groups.set_frozen("D", True)
    for name in ("E_s", "E_c", "G"):
        system.groups.set_frozen(name, False)
    opt = torch.optim.Adam([
        {"params": list(system.lm.style_encoder.parameters()), "lr": cfg.lr_es},
        {"params": list(system.lm.content_encoder.parameters()), "lr": cfg.lr_ec},
        {"params": list(system.lm.generator.parameters()), "lr": cfg.lr_g},
    ])
    pairs = paired_corpus(paragraphs, system.vocab)
    reports = []
    for _ in range(cfg.epochs):
        for idx in _batches(len(pairs), cfg.batch_size, rng):
            batch = [pairs[i] for i in idx]
            donors = sample_donors(batch, pairs, rng)
            loss, comps = loss_text(system.lm, system.disc,
                                    [(p, c) for p, c, _ in batch], donors, cfg, rng)
            opt.zero_grad()
            loss.backward()
            opt.step()
            system.step += 1
            report = LossReport(system.step,
                                {"text": float(loss.detach()),
                                 **{k: float(v.detach()) for k, v in comps.items()}},
                                _grad_norms(system, ("E_s", "E_c", "G")))
            _check_finite(float(loss.detach()), report)
            reports.append(report)
            if log is not None:
                log(report)
    if out_path is not None:
        save_checkpoint(system, out_path)
    return reports


def train_stage2(system: System, features: np.ndarray, captions: list[TokenSeq],
                 paragraphs: list[Paragraph], cfg: Stage2Config,
                 out_path: str = None, log=None) -> list[LossReport]:
    """Multi-task fine-tuning: visual captioning plus text style injection.

    The style extractor and the discriminator are frozen throughout. With
    multitask disabled the whole language model is frozen and only the visual
    projection module trains (the "w/o MultiTask" ablation)."""
    torch.manual_seed(cfg.seed)
    rng = np.random.default_rng(cfg.seed)
    system.groups.set_frozen("E_s", True)
    system.groups.set_frozen("D", True)
    system.groups.set_frozen("E_c", not cfg.multitask)
    system.groups.set_frozen("G", not cfg.multitask)
    system.groups.set_frozen("M", False)
    param_groups = [{"params": list(system.projector.parameters()), "lr": cfg.lr_m}]
    if cfg.multitask:
        param_groups.append({
            "params": list(system.lm.content_encoder.parameters())
            + list(system.lm.generator.parameters()),
            "lr": cfg.lr_other})
    opt = torch.optim.Adam(param_groups)

    device = next(system.lm.parameters()).device
    dtype = next(system.lm.parameters()).dtype
    feats = torch.tensor(np.ascontiguousarray(features), device=device, dtype=dtype)
    pairs = paired_corpus(paragraphs, system.vocab) if cfg.multitask else []
    s1 = Stage1Config(drop_prob=cfg.drop_prob, tau=cfg.tau, seed=cfg.seed,
                      max_decode_len=cfg.max_decode_len)
    reports = []
    for _ in range(cfg.epochs):
        for idx in _batches(len(captions), cfg.batch_size, rng):
            y_cur = [captions[i] for i in idx]
            y_prev = [captions[i] for i in np.roll(idx, 1)]
            vis, vcomps = loss_visual(system.lm, system.projector, feats[idx],
                                      y_cur, y_prev, cfg.use_cap, cfg.use_v2l)
            comps = {k: float(v.detach()) for k, v in vcomps.items()}
            if cfg.multitask:
                tidx = rng.permutation(len(pairs))[: len(idx)]
                tbatch = [pairs[i] for i in tidx]
                donors = sample_donors(tbatch, pairs, rng)
                text, tcomps = loss_text(system.lm, system.disc,
                                         [(p, c) for p, c, _ in tbatch], donors, s1, rng)
                comps.update({k: float(v.detach()) for k, v in tcomps.items()})
                loss = total_loss(vis, text)
                comps["text"] = float(text.detach())
            else:
                loss = vis
            comps["visual"] = float(vis.detach())
            opt.zero_grad()
            loss.backward()
            opt.step()
            system.step += 1
            report = LossReport(system.step, {"total": float(loss.detach()), **comps},
                                _grad_norms(system, ("M", "E_c", "G")))
            _check_finite(float(loss.detach()), report)
            reports.append(report)
            if log is not None:
                log(report)
    if out_path is not None:
        save_checkpoint(system, out_path)
    return reports


# ---------------------------------------------------------------------------
# Finite-difference gradient checking.

def collect_params(modules) -> list[torch.Tensor]:
    params = []
    for m in modules:
        params.extend(p for p in m.parameters() if p.requires_grad)
    return params


def analytic_grads(loss_fn, params) -> list[torch.Tensor]:
    for p in params:
        p.grad = None
    loss = loss_fn()
    loss.backward()
    return [p.grad.detach().clone() if p.grad is not None else torch.zeros_like(p)
            for p in params]


@torch.no_grad()
def numerical_grads(loss_fn, params, eps: float = 1e-5) -> list[torch.Tensor]:
    grads = []
    for p in params:
        g = torch.zeros_like(p)
        flat = p.view(-1)
        gflat = g.view(-1)
        for i in range(flat.numel()):
            orig = float(flat[i])
            flat[i] = orig + eps
            hi = float(loss_fn())
            flat[i] = orig - eps
            lo = float(loss_fn())
            flat[i] = orig
            gflat[i] = (hi - lo) / (2 * eps)
        grads.append(g)
    return grads


def max_rel_error(ga: list[torch.Tensor], gn: list[torch.Tensor],
                  floor: float = 1e-4) -> float:
    """Worst |analytic - numerical| / (max(|analytic|, |numerical|) + floor).

    The additive floor keeps round-off on near-zero gradients from dominating
    while still flagging any error of the gradient's own magnitude."""
    worst = 0.0
    for a, n in zip(ga, gn):
        denom = torch.maximum(a.abs(), n.abs()) + floor
        worst = max(worst, float(((a - n).abs() / denom).max()))
    return worst


def grad_check(loss_fn, modules, eps: float = 1e-5) -> float:
    """Central differences over every trainable scalar; worst relative error."""
    params = collect_params(modules)
    ga = analytic_grads(loss_fn, params)
    gn = numerical_grads(loss_fn, params, eps)
    return max_rel_error(ga, gn)
