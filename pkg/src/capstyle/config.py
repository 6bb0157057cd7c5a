"""Flat key-value configuration: packaged defaults, file overrides, CLI overrides."""

from __future__ import annotations

import hashlib
from importlib import resources

from .discriminator import DiscriminatorConfig
from .model import ModelConfig
from .training import Stage1Config, Stage2Config
from .visual import ProjectionConfig


class Config:
    def __init__(self, values: dict[str, str]):
        self.values = values

    def get(self, key: str, default=None) -> str:
        return self.values.get(key, default)

    def get_int(self, key: str) -> int:
        return int(self.values[key])

    def get_float(self, key: str) -> float:
        return float(self.values[key])

    def get_bool(self, key: str) -> bool:
        return self.values[key].lower() in ("1", "true", "yes")

    def override(self, key: str, value):
        self.values[key] = str(value)

    def text(self) -> str:
        return "\n".join(f"{k}={v}" for k, v in sorted(self.values.items())) + "\n"

    def digest(self) -> str:
        return hashlib.sha256(self.text().encode()).hexdigest()[:16]


def parse_kv(text: str) -> dict[str, str]:
    values = {}
    for line in text.splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        key, _, val = line.partition("=")
        values[key.strip()] = val.strip()
    return values


def load_config(path: str | None = None) -> Config:
    """Packaged defaults, overlaid by the given file if any."""
    base = resources.files("capstyle").joinpath("default.cfg").read_text()
    values = parse_kv(base)
    if path is not None:
        with open(path, encoding="utf-8") as f:
            values.update(parse_kv(f.read()))
    return Config(values)


def model_config(cfg: Config, vocab_size: int) -> ModelConfig:
    return ModelConfig(
        vocab_size=vocab_size,
        d_model=cfg.get_int("model.d_model"),
        enc_layers=cfg.get_int("model.enc_layers"),
        dec_layers=cfg.get_int("model.dec_layers"),
        n_heads=cfg.get_int("model.n_heads"),
        d_ff=cfg.get_int("model.d_ff"),
        max_pos=cfg.get_int("model.max_pos"),
        seed=cfg.get_int("model.seed"),
    )


def disc_config(cfg: Config, vocab_size: int) -> DiscriminatorConfig:
    return DiscriminatorConfig(
        vocab_size=vocab_size,
        d_model=cfg.get_int("disc.d_model"),
        layers=cfg.get_int("disc.layers"),
        n_heads=cfg.get_int("disc.n_heads"),
        d_ff=cfg.get_int("disc.d_ff"),
        max_pos=cfg.get_int("model.max_pos"),
        tau=cfg.get_float("disc.tau"),
        seed=cfg.get_int("disc.seed"),
    )


def proj_config(cfg: Config) -> ProjectionConfig:
    return ProjectionConfig(
        d_v=cfg.get_int("data.d_v"),
        d_model=cfg.get_int("model.d_model"),
        layers=cfg.get_int("proj.layers"),
        n_heads=cfg.get_int("proj.n_heads"),
        d_ff=cfg.get_int("proj.d_ff"),
        n_const=cfg.get_int("proj.n_const"),
        max_frames=cfg.get_int("proj.max_frames"),
        seed=cfg.get_int("proj.seed"),
    )


def stage1_config(cfg: Config, seed: int | None = None) -> Stage1Config:
    return Stage1Config(
        epochs=cfg.get_int("stage1.epochs"),
        batch_size=cfg.get_int("stage1.batch_size"),
        lr_es=cfg.get_float("stage1.lr"),
        lr_ec=cfg.get_float("stage1.lr"),
        lr_g=cfg.get_float("stage1.lr"),
        drop_prob=cfg.get_float("stage1.drop_prob"),
        tau=cfg.get_float("disc.tau"),
        use_dr=cfg.get_bool("stage1.use_dr"),
        use_nbt=cfg.get_bool("stage1.use_nbt"),
        use_style=cfg.get_bool("stage1.use_style"),
        seed=cfg.get_int("stage1.seed") if seed is None else seed,
        max_decode_len=cfg.get_int("stage1.max_decode_len"),
    )


def stage2_config(cfg: Config, seed: int | None = None) -> Stage2Config:
    return Stage2Config(
        epochs=cfg.get_int("stage2.epochs"),
        batch_size=cfg.get_int("stage2.batch_size"),
        lr_m=cfg.get_float("stage2.lr_m"),
        lr_other=cfg.get_float("stage2.lr_other"),
        use_cap=cfg.get_bool("stage2.use_cap"),
        use_v2l=cfg.get_bool("stage2.use_v2l"),
        multitask=cfg.get_bool("stage2.multitask"),
        drop_prob=cfg.get_float("stage1.drop_prob"),
        tau=cfg.get_float("disc.tau"),
        seed=cfg.get_int("stage2.seed") if seed is None else seed,
        max_decode_len=cfg.get_int("stage1.max_decode_len"),
    )
