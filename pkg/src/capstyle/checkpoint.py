"""Checkpoint directories: a plain-text manifest, the vocabulary, and one
little-endian float32 blob per named parameter. Round-trips are bit-exact."""

from __future__ import annotations

import dataclasses
import os
import shutil
import tempfile
from dataclasses import dataclass

import numpy as np
import torch

from .corpus import Vocab
from .discriminator import DiscriminatorConfig, StyleDiscriminator
from .model import ModelConfig, ParameterGroups, StyledLM
from .visual import ProjectionConfig, VisualProjector

FORMAT_VERSION = 1


@dataclass
class System:
    """Everything trainable plus the vocabulary, addressed by group name."""

    vocab: Vocab
    model_cfg: ModelConfig
    disc_cfg: DiscriminatorConfig
    proj_cfg: ProjectionConfig
    lm: StyledLM
    projector: VisualProjector
    disc: StyleDiscriminator
    groups: ParameterGroups
    step: int = 0

    @staticmethod
    def build(vocab: Vocab, model_cfg: ModelConfig, disc_cfg: DiscriminatorConfig,
              proj_cfg: ProjectionConfig) -> "System":
        lm = StyledLM(model_cfg)
        projector = VisualProjector(proj_cfg)
        disc = StyleDiscriminator(disc_cfg)
        groups = ParameterGroups()
        for name in StyledLM.GROUPS:
            groups.add(name, lm.group(name))
        groups.add("M", projector)
        groups.add("D", disc)
        return System(vocab, model_cfg, disc_cfg, proj_cfg, lm, projector, disc, groups)

    def to_dtype(self, dtype) -> "System":
        for m in (self.lm, self.projector, self.disc):
            m.to(dtype)
        return self


def _blob_name(group: str, param: str) -> str:
    return f"{group}__{param.replace('.', '_')}.bin"


def _write_config(lines: list[str], prefix: str, cfg):
    for f in dataclasses.fields(cfg):
        lines.append(f"{prefix}.{f.name}={getattr(cfg, f.name)}")


def _read_config(kv: dict[str, str], prefix: str, cls):
    kwargs = {}
    for f in dataclasses.fields(cls):
        raw = kv[f"{prefix}.{f.name}"]
        kwargs[f.name] = f.type_converter(raw) if hasattr(f, "type_converter") else \
            (float(raw) if f.type in (float, "float") else int(raw))
    return cls(**kwargs)


def save_checkpoint(system: System, path: str):
    """Atomic write: assemble in a temp dir, then rename into place."""
    parent = os.path.dirname(os.path.abspath(path)) or "."
    os.makedirs(parent, exist_ok=True)
    tmp = tempfile.mkdtemp(prefix=".ckpt-", dir=parent)
    try:
        lines = [f"format={FORMAT_VERSION}", f"step={system.step}"]
        _write_config(lines, "model", system.model_cfg)
        _write_config(lines, "disc", system.disc_cfg)
        _write_config(lines, "proj", system.proj_cfg)
        for g in system.groups.names():
            lines.append(f"group.{g}.frozen={int(system.groups.is_frozen(g))}")
        for g in system.groups.names():
            for pname, tensor in system.groups.named_arrays(g).items():
                arr = np.ascontiguousarray(
                    tensor.detach().to(torch.float32).cpu().numpy(), dtype="<f4")
                blob = _blob_name(g, pname)
                shape = ",".join(str(d) for d in arr.shape)
                lines.append(f"param.{g}.{pname}={shape}|{blob}")
                arr.tofile(os.path.join(tmp, blob))
        with open(os.path.join(tmp, "manifest.txt"), "w", encoding="utf-8") as f:
            f.write("\n".join(lines) + "\n")
        system.vocab.save(os.path.join(tmp, "vocab.txt"))
        if os.path.isdir(path):
            shutil.rmtree(path)
        os.replace(tmp, path)
    except Exception:
        shutil.rmtree(tmp, ignore_errors=True)
        raise


def _parse_manifest(path: str) -> dict[str, str]:
    kv = {}
    with open(path, encoding="utf-8") as f:
        for line in f:
            line = line.rstrip("\n")
            if line:
                key, _, val = line.partition("=")
                kv[key] = val
    return kv


def load_checkpoint(path: str) -> System:
    kv = _parse_manifest(os.path.join(path, "manifest.txt"))
    if int(kv["format"]) != FORMAT_VERSION:
        raise ValueError(f"unsupported checkpoint format {kv['format']}")
    vocab = Vocab.load(os.path.join(path, "vocab.txt"))
    model_cfg = _read_config(kv, "model", ModelConfig)
    disc_kwargs = {f.name: (float(kv[f"disc.{f.name}"]) if f.name == "tau"
                            else int(kv[f"disc.{f.name}"]))
                   for f in dataclasses.fields(DiscriminatorConfig)}
    disc_cfg = DiscriminatorConfig(**disc_kwargs)
    proj_cfg = _read_config(kv, "proj", ProjectionConfig)
    system = System.build(vocab, model_cfg, disc_cfg, proj_cfg)
    system.step = int(kv["step"])
    for g in system.groups.names():
        params = system.groups.named_arrays(g)
        for pname, tensor in params.items():
            spec = kv[f"param.{g}.{pname}"]
            shape_s, _, blob = spec.partition("|")
            shape = tuple(int(d) for d in shape_s.split(",")) if shape_s else ()
            arr = np.fromfile(os.path.join(path, blob), dtype="<f4").reshape(shape)
            with torch.no_grad():
                tensor.copy_(torch.from_numpy(arr.copy()))
        system.groups.set_frozen(g, bool(int(kv[f"group.{g}.frozen"])))
    return system


def group_blob_bytes(path: str, group: str) -> bytes:
    """Concatenated raw bytes of one group's blobs, for byte-identity checks."""
    kv = _parse_manifest(os.path.join(path, "manifest.txt"))
    chunks = []
    for key in sorted(kv):
        if key.startswith(f"param.{group}."):
            blob = kv[key].partition("|")[2]
            with open(os.path.join(path, blob), "rb") as f:
                chunks.append(f.read())
    return b"".join(chunks)
