"""Finite-difference verification of every training loss on a tiny
(sub-2k-parameter per path) configuration, at 32- and 64-bit."""

from __future__ import annotations

import numpy as np
import torch

from .checkpoint import System
from .corpus import RESERVED, TokenSeq, Vocab, corrupt
from .discriminator import DiscriminatorConfig
from .model import ModelConfig
from .training import (analytic_grads, collect_params, loss_cap, loss_dr, loss_nbt,
                       loss_style, loss_v2l, max_rel_error, nbt_pass1,
                       numerical_grads)
from .visual import ProjectionConfig

TOY_VOCAB = Vocab(RESERVED + ["cat", "dog", "runs", "sits", "red", "blue"])


def toy_system(dtype=torch.float64) -> System:
    v = len(TOY_VOCAB)
    model_cfg = ModelConfig(vocab_size=v, d_model=6, enc_layers=1, dec_layers=1,
                            n_heads=2, d_ff=12, max_pos=12, seed=0)
    disc_cfg = DiscriminatorConfig(vocab_size=v, d_model=6, layers=1, n_heads=2,
                                   d_ff=12, max_pos=12, tau=0.5, seed=1)
    proj_cfg = ProjectionConfig(d_v=5, d_model=6, layers=1, n_heads=2, d_ff=12,
                                n_const=2, max_frames=2, seed=2)
    return System.build(TOY_VOCAB, model_cfg, disc_cfg, proj_cfg).to_dtype(dtype)


def copy_params(src: System, dst: System):
    for ps, pd in zip(src.lm.parameters(), dst.lm.parameters()):
        pd.data = ps.data.to(pd.dtype)
    for ps, pd in zip(src.projector.parameters(), dst.projector.parameters()):
        pd.data = ps.data.to(pd.dtype)
    for ps, pd in zip(src.disc.parameters(), dst.disc.parameters()):
        pd.data = ps.data.to(pd.dtype)


def _fixtures(reference: System):
    """Deterministic inputs shared by every closure; the noisy-back-translation
    output t' is decoded once on the reference system and then held fixed."""
    enc = TOY_VOCAB.encode
    pairs = [(enc(["cat", "runs"]), enc(["red", "cat", "runs"])),
             (enc(["dog", "sits"]), enc(["blue", "dog", "sits"]))]
    donors = [enc(["blue", "dog"]), enc(["red", "cat"])]
    rng = np.random.default_rng(7)
    corrupted = [corrupt(c, 0.4, rng) for _, c in pairs]
    _, t_prime = nbt_pass1(reference.lm, [c for _, c in pairs], donors, 0.0,
                           np.random.default_rng(7), max_decode_len=6)
    t_prime = [tp if len(tp) else TokenSeq((enc(["cat"]).ids[0],)) for tp in t_prime]
    rng2 = np.random.default_rng(11)
    x = torch.tensor(rng2.standard_normal((2, 5)))
    return {"pairs": pairs, "donors": donors, "corrupted": corrupted,
            "t_prime": t_prime, "x": x,
            "y_cur": [enc(["cat", "runs"]), enc(["dog", "sits"])],
            "y_prev": [enc(["dog", "sits"]), enc(["cat", "runs"])]}


def loss_closures(system: System, fx: dict) -> dict[str, tuple]:
    """name -> (closure, modules whose gradients are checked)."""
    lm, disc, proj = system.lm, system.disc, system.projector
    x = fx["x"].to(next(lm.parameters()).dtype)
    rng0 = lambda: np.random.default_rng(3)

    def dr():
        return loss_dr(lm, fx["pairs"], 0.4, rng0())

    def nbt():
        return loss_nbt(lm, fx["pairs"], fx["t_prime"])

    def style():
        return loss_style(lm, disc, fx["pairs"], fx["donors"], 0.0, rng0(), 0.5,
                          6, precomputed=(fx["corrupted"], fx["t_prime"]))

    def cap():
        return loss_cap(lm, proj, x, fx["y_cur"], fx["y_prev"])

    def v2l():
        return loss_v2l(lm, proj, x, fx["y_cur"])

    def text():
        return (dr() + nbt() + style()) / 3

    def visual():
        return (cap() + v2l()) / 2

    def total():
        return visual() + text()

    lm_groups = [lm.style_encoder, lm.content_encoder, lm.generator]
    return {
        "dr": (dr, lm_groups),
        "nbt": (nbt, lm_groups),
        "style": (style, lm_groups),
        "cap": (cap, [proj, lm.content_encoder, lm.generator]),
        "v2l": (v2l, [proj, lm.content_encoder]),
        "text_combined": (text, lm_groups),
        "visual_combined": (visual, [proj, lm.content_encoder, lm.generator]),
        "total_combined": (total, [proj, lm.content_encoder, lm.generator]),
    }


def run_suite(eps: float = 1e-5) -> dict[str, dict[str, float]]:
    """Worst relative error per loss: float64 analytic vs central differences,
    and float32 analytic vs the same float64 numerical reference."""
    s64 = toy_system(torch.float64)
    fx = _fixtures(s64)
    s32 = toy_system(torch.float32)
    copy_params(s64, s32)
    closures64 = loss_closures(s64, fx)
    closures32 = loss_closures(s32, fx)
    results = {}
    for name, (fn64, mods64) in closures64.items():
        params64 = collect_params(mods64)
        gn = numerical_grads(fn64, params64, eps)
        ga64 = analytic_grads(fn64, params64)
        fn32, mods32 = closures32[name]
        ga32 = analytic_grads(fn32, collect_params(mods32))
        gn_as32 = [g.to(torch.float32) for g in gn]
        results[name] = {
            "err64": max_rel_error(ga64, gn),
            "err32": max_rel_error(ga32, gn_as32),
        }
    return results
