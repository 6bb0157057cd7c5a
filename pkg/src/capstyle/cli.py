"""Command-line entry point: data generation, training stages, inference,
evaluation, ablations, gradient checks, and embedding export."""

from __future__ import annotations

import argparse
import os
import sys
import time

import numpy as np
import torch

from . import __version__
from .checkpoint import System, load_checkpoint, save_checkpoint
from .config import (Config, disc_config, load_config, model_config, proj_config,
                     stage1_config, stage2_config)
from .corpus import FACTUAL, default_spec, load_spec, try_normalize
from .datasets import Dataset, generate_dataset, load_dataset
from .discriminator import train_discriminator
from .evaluation import (best_lambda, evaluate, pca2d, scan_lambda, train_ngram_lm)
from .gradsuite import run_suite
from .inference import caption, source_style, style_delta, target_style, transfer
from .model import extract_style
from .training import train_stage1, train_stage2


class CliError(Exception):
    pass


def _require(path: str) -> str:
    if not os.path.exists(path):
        raise CliError(f"missing file: {path}")
    return path


def _write_manifest(out_dir: str, args, cfg: Config, started: float,
                    checkpoints: list[str]):
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "run_manifest.txt"), "w", encoding="utf-8") as f:
        f.write(f"command={args.command}\n")
        f.write(f"version=capstyle-{__version__}\n")
        f.write(f"config_hash={cfg.digest()}\n")
        f.write(f"seed={getattr(args, 'seed', None)}\n")
        for c in checkpoints:
            f.write(f"checkpoint={c}\n")
        f.write(f"start={started:.3f}\n")
        f.write(f"end={time.time():.3f}\n")


def _load_examples(path: str, dataset_vocab, max_len: int):
    _require(path)
    seqs = []
    with open(path, encoding="utf-8") as f:
        for line in f:
            words = try_normalize(line, max_len) if line.strip() else None
            if words:
                seqs.append(dataset_vocab.encode(words))
    if not seqs:
        raise CliError(f"no usable sentences in {path}")
    return seqs


def _style_vector(system, args, cfg: Config):
    max_len = cfg.get_int("data.max_len")
    examples = _load_examples(args.examples, system.vocab, max_len)
    refs = _load_examples(args.refs, system.vocab, max_len)
    s_tgt = target_style(system, examples)
    s_src = source_style(system, refs)
    return style_delta(s_tgt, s_src, args.lam)


def _log_writer(path: str):
    f = open(path, "w", encoding="utf-8")

    def log(report):
        f.write(report.line() + "\n")

    return log, f


# ---------------------------------------------------------------------------
# Commands.

def cmd_gen_data(args, cfg: Config):
    spec = load_spec(_require(args.spec)) if args.spec else default_spec()
    generate_dataset(
        args.out, spec, args.seed,
        d_v=cfg.get_int("data.d_v"), sigma=cfg.get_float("data.sigma"),
        n_factual_refs=cfg.get_int("data.factual_refs"),
        max_test_captions=cfg.get_int("data.max_test_captions"))
    return []


def _fresh_system(cfg: Config, dataset: Dataset) -> System:
    vocab = dataset.vocab
    return System.build(vocab, model_config(cfg, len(vocab)),
                        disc_config(cfg, len(vocab)), proj_config(cfg))


def cmd_train_discriminator(args, cfg: Config):
    dataset = load_dataset(_require(args.data), cfg.get_int("data.max_len"))
    system = _fresh_system(cfg, dataset)
    from .training import paired_corpus

    pairs = [(p, c) for p, c, _ in paired_corpus(dataset.train, system.vocab)]
    train_discriminator(system.disc, pairs, epochs=cfg.get_int("disc.epochs"),
                        batch_size=cfg.get_int("disc.batch_size"),
                        lr=cfg.get_float("disc.lr"), seed=args.seed)
    ckpt = os.path.join(args.out, "checkpoint")
    save_checkpoint(system, ckpt)
    return [ckpt]


def cmd_train_stage1(args, cfg: Config):
    dataset = load_dataset(_require(args.data), cfg.get_int("data.max_len"))
    system = load_checkpoint(_require(args.checkpoint))
    s1 = stage1_config(cfg, args.seed)
    os.makedirs(args.out, exist_ok=True)
    log, f = _log_writer(os.path.join(args.out, "train.log"))
    ckpt = os.path.join(args.out, "checkpoint")
    try:
        train_stage1(system, dataset.train, s1, out_path=ckpt, log=log)
    finally:
        f.close()
    return [ckpt]


def cmd_train_stage2(args, cfg: Config, override_multitask=None):
    dataset = load_dataset(_require(args.data), cfg.get_int("data.max_len"))
    system = load_checkpoint(_require(args.checkpoint))
    s2 = stage2_config(cfg, args.seed)
    if override_multitask is not None:
        s2.multitask = override_multitask
    captions = dataset.encode_all(dataset.captions_train)
    os.makedirs(args.out, exist_ok=True)
    log, f = _log_writer(os.path.join(args.out, "train.log"))
    ckpt = os.path.join(args.out, "checkpoint")
    try:
        train_stage2(system, dataset.features_train, captions, dataset.train, s2,
                     out_path=ckpt, log=log)
    finally:
        f.close()
    return [ckpt]


def cmd_caption(args, cfg: Config):
    system = load_checkpoint(_require(args.checkpoint))
    from .visual import load_vision_dataset

    _require(args.visual + ".bin")
    feats, _ = load_vision_dataset(args.visual)
    style = _style_vector(system, args, cfg)
    caps = caption(system, feats, style, max_len=cfg.get_int("infer.max_len"))
    lines = [f"{i}\t{' '.join(system.vocab.decode(c))}" for i, c in enumerate(caps)]
    _emit(args, lines, "captions.tsv")
    return []


def cmd_transfer(args, cfg: Config):
    system = load_checkpoint(_require(args.checkpoint))
    max_len = cfg.get_int("data.max_len")
    texts = _load_examples(args.text, system.vocab, max_len)
    style = _style_vector(system, args, cfg)
    outs = transfer(system, texts, style, p_infer=cfg.get_float("infer.p"),
                    max_len=cfg.get_int("infer.max_len"))
    lines = [f"{i}\t{' '.join(system.vocab.decode(t))}" for i, t in enumerate(outs)]
    _emit(args, lines, "transfers.tsv")
    return []


def _emit(args, lines, name):
    if getattr(args, "out", None):
        os.makedirs(args.out, exist_ok=True)
        with open(os.path.join(args.out, name), "w", encoding="utf-8") as f:
            f.write("\n".join(lines) + "\n")
    else:
        print("\n".join(lines))


def _eval_inputs(system, dataset: Dataset, cfg: Config, n_examples: int):
    examples = {s: dataset.style_examples(s, n_examples, "val")
                for s in dataset.spec.style_names}
    factual_refs = dataset.encode_all(dataset.factual_refs)
    fluency = train_ngram_lm([w for p in dataset.train for w in p.sentences],
                             n=cfg.get_int("eval.ngram_n"),
                             alpha=cfg.get_float("eval.ngram_alpha"))
    return examples, factual_refs, fluency


def cmd_eval(args, cfg: Config):
    system = load_checkpoint(_require(args.checkpoint))
    dataset = load_dataset(_require(args.data), cfg.get_int("data.max_len"))
    n_ex = args.examples_per_style or cfg.get_int("eval.examples_per_style")
    examples, refs, fluency = _eval_inputs(system, dataset, cfg, n_ex)
    feats = dataset.features_test
    references = dataset.captions_test
    os.makedirs(args.out, exist_ok=True)
    if args.scan_lambda:
        lo, hi = args.scan_lambda.split("..")
        lams = list(range(int(lo), int(hi) + 1))
        reports = scan_lambda(system, dataset.spec, feats, references, examples,
                              refs, lams, fluency, cfg.get_int("infer.max_len"))
        with open(os.path.join(args.out, "scan.tsv"), "w", encoding="utf-8") as f:
            f.write("lambda\tmean_gm1\n")
            for rep in reports:
                styled = [r for r in rep.rows if r.style != FACTUAL] or rep.rows
                f.write(f"{rep.lam}\t{sum(r.gm1 for r in styled)/len(styled):.4f}\n")
        lam = best_lambda(reports)
        report = next(r for r in reports if r.lam == lam)
    else:
        lam = args.lam if args.lam is not None else cfg.get_float("infer.lambda")
        report = evaluate(system, dataset.spec, feats, references, examples, refs,
                          lam, fluency, cfg.get_int("infer.max_len"))
    with open(os.path.join(args.out, "report.tsv"), "w", encoding="utf-8") as f:
        f.write(report.table())
    with open(os.path.join(args.out, "summary.txt"), "w", encoding="utf-8") as f:
        f.write(report.summary())
    return []


ABLATION_ROWS = ("dr", "nbt", "style", "v2l", "multitask")


def cmd_ablate(args, cfg: Config):
    """Train both stages with one component removed, then evaluate."""
    if args.row not in ABLATION_ROWS:
        raise CliError(f"unknown ablation row: {args.row}")
    if args.row in ("dr", "nbt", "style"):
        cfg.override(f"stage1.use_{args.row}", 0)
    if args.row == "v2l":
        cfg.override("stage2.use_v2l", 0)
    multitask = args.row != "multitask"

    stage1_out = os.path.join(args.out, "stage1")
    stage2_out = os.path.join(args.out, "stage2")
    ns = argparse.Namespace(**vars(args))
    ns.out = stage1_out
    cmd_train_stage1(ns, cfg)
    ns = argparse.Namespace(**vars(args))
    ns.checkpoint = os.path.join(stage1_out, "checkpoint")
    ns.out = stage2_out
    cmd_train_stage2(ns, cfg, override_multitask=multitask)
    ns = argparse.Namespace(**vars(args))
    ns.checkpoint = os.path.join(stage2_out, "checkpoint")
    ns.out = args.out
    ns.scan_lambda = None
    ns.lam = getattr(args, "lam", None)
    ns.examples_per_style = None
    cmd_eval(ns, cfg)
    return [os.path.join(stage2_out, "checkpoint")]


def cmd_grad_check(args, cfg: Config):
    results = run_suite()
    lines = ["loss\terr32\terr64"]
    ok = True
    for name, errs in results.items():
        lines.append(f"{name}\t{errs['err32']:.3e}\t{errs['err64']:.3e}")
        ok = ok and errs["err32"] <= 1e-3 and errs["err64"] <= 1e-5
    _emit(args, lines, "grad_check.tsv")
    if not ok:
        raise CliError("gradient check exceeded tolerance")
    return []


def cmd_embed_viz(args, cfg: Config):
    system = load_checkpoint(_require(args.checkpoint))
    dataset = load_dataset(_require(args.data), cfg.get_int("data.max_len"))
    sentences = dataset.sentences(args.split)
    seqs = dataset.encode_all([w for w, _ in sentences])
    with torch.no_grad():
        vecs = extract_style(system.lm.style_encoder, seqs).cpu().numpy()
    coords = pca2d(np.asarray(vecs))
    lines = [f"{x:.6f}\t{y:.6f}\t{lab}"
             for (x, y), (_, lab) in zip(coords, sentences)]
    _emit(args, lines, "style_embeddings.tsv")
    return []


# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="capstyle")
    p.add_argument("--config", help="flat key=value config file overriding defaults")
    p.add_argument("--seed", type=int, default=0)
    sub = p.add_subparsers(dest="command", required=True)

    def add(name, **kwargs):
        sp = sub.add_parser(name, **kwargs)
        return sp

    sp = add("gen-data")
    sp.add_argument("--spec", help="synthesis spec file (defaults to built-in)")
    sp.add_argument("--out", required=True)

    for name in ("train-discriminator", "train-stage1", "train-stage2"):
        sp = add(name)
        sp.add_argument("--data", required=True)
        sp.add_argument("--out", required=True)
        if name != "train-discriminator":
            sp.add_argument("--checkpoint", required=True)

    sp = add("caption")
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--visual", required=True, help="vision dataset path prefix")
    sp.add_argument("--examples", required=True)
    sp.add_argument("--refs", required=True, help="factual reference sentences")
    sp.add_argument("--lambda", dest="lam", type=float, default=2.0)
    sp.add_argument("--out")

    sp = add("transfer")
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--text", required=True)
    sp.add_argument("--examples", required=True)
    sp.add_argument("--refs", required=True)
    sp.add_argument("--lambda", dest="lam", type=float, default=2.0)
    sp.add_argument("--out")

    sp = add("eval")
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--data", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--lambda", dest="lam", type=float)
    sp.add_argument("--scan-lambda", dest="scan_lambda", help="A..B inclusive")
    sp.add_argument("--examples-per-style", type=int, dest="examples_per_style")

    sp = add("ablate")
    sp.add_argument("--data", required=True)
    sp.add_argument("--checkpoint", required=True, help="discriminator checkpoint")
    sp.add_argument("--out", required=True)
    sp.add_argument("--ablate", dest="row", required=True, choices=ABLATION_ROWS)
    sp.add_argument("--lambda", dest="lam", type=float)

    sp = add("grad-check")
    sp.add_argument("--out")

    sp = add("embed-viz")
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--data", required=True)
    sp.add_argument("--out")
    sp.add_argument("--split", default="val", choices=("train", "val", "test"))

    return p


COMMANDS = {
    "gen-data": cmd_gen_data,
    "train-discriminator": cmd_train_discriminator,
    "train-stage1": cmd_train_stage1,
    "train-stage2": cmd_train_stage2,
    "caption": cmd_caption,
    "transfer": cmd_transfer,
    "eval": cmd_eval,
    "ablate": cmd_ablate,
    "grad-check": cmd_grad_check,
    "embed-viz": cmd_embed_viz,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    started = time.time()
    try:
        if args.config is not None:
            _require(args.config)
        cfg = load_config(args.config)
        checkpoints = COMMANDS[args.command](args, cfg)
        if getattr(args, "out", None):
            _write_manifest(args.out, args, cfg, started, checkpoints)
    except (CliError, OSError, ValueError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
