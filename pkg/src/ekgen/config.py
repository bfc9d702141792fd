"""Pipeline configuration: one flat dataclass, JSON file + key=value overrides."""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, fields
from pathlib import Path

from .graph2seq import MODES


class ConfigError(ValueError):
    pass


@dataclass
class PipelineConfig:
    seed: int = 0
    token_mode: str = "char"          # char | word
    min_chapter_tokens: int = 1000
    min_freq: int = 1
    overlap_threshold: float = 0.5
    K: int = 5
    # embedding training
    d_f: int = 768
    lambda0: float = 0.5
    lambda1: float = 1.0
    lambda2: float = 0.3
    eps_ls: float = 0.1
    alpha: float = 0.0                # triplet margin
    lambda_r: float = 1.0
    encoder_kind: str = "hashed"      # hashed | attention
    phase1_steps: int = 150
    phase2_steps: int = 60
    embed_lr: float = 0.05
    rn_lr: float = 0.01
    # generator
    d_model: int = 768
    n_heads: int = 4
    encoder_layers: int = 6
    decoder_layers: int = 6
    bilstm_layers: int = 2
    gat_layers: int = 2
    mode: str = "GAT_VE"
    beam: int = 4
    max_len: int = 50
    max_passage: int = 256
    warmup: int = 5000
    g2s_steps: int = 2000
    batch_size: int = 8
    lr_scale: float = 1.0
    # synth
    synth_chapters: int = 3
    synth_entities: int = 6
    synth_passages: int = 60
    synth_comments: int = 5

    def validate(self):
        if self.lambda1 <= 0:
            raise ConfigError("lambda1 must be positive")
        for name in ("lambda0", "lambda2", "lambda_r", "alpha", "eps_ls",
                     "overlap_threshold", "lr_scale"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be non-negative")
        for name in ("K", "d_f", "d_model", "n_heads", "encoder_layers",
                     "decoder_layers", "bilstm_layers", "gat_layers", "beam",
                     "max_len", "max_passage", "warmup", "phase1_steps",
                     "g2s_steps", "batch_size", "min_chapter_tokens", "min_freq"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if self.eps_ls >= 1.0:
            raise ConfigError("eps_ls must be < 1")
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}")
        if self.token_mode not in ("char", "word"):
            raise ConfigError("token_mode must be 'char' or 'word'")
        if self.encoder_kind not in ("hashed", "attention"):
            raise ConfigError("encoder_kind must be 'hashed' or 'attention'")
        if self.d_model % (2 * self.n_heads):
            raise ConfigError("d_model must be divisible by 2*n_heads")
        return self

    @property
    def lambdas(self) -> tuple[float, float, float]:
        return (self.lambda0, self.lambda1, self.lambda2)

    def to_json(self) -> str:
        return json.dumps(dataclasses.asdict(self), sort_keys=True)


DESK_OVERRIDES = {
    "d_f": 64, "d_model": 64, "encoder_layers": 2, "decoder_layers": 2,
    "min_chapter_tokens": 50, "warmup": 50, "phase1_steps": 150,
    "phase2_steps": 40, "g2s_steps": 400, "batch_size": 8,
}

PRESETS = {"desk": DESK_OVERRIDES, "paper": {}}


def load_config(path=None, preset: str | None = None,
                overrides: list[str] | None = None,
                seed: int | None = None) -> PipelineConfig:
    valid = {f.name: f.type for f in fields(PipelineConfig)}
    data: dict = {}
    if path:
        raw = json.loads(Path(path).read_text(encoding="utf-8"))
        for key in raw:
            if key not in valid:
                raise ConfigError(
                    f"unknown config key {key!r}; valid keys: {sorted(valid)}")
        data.update(raw)
    cfg = PipelineConfig(**data)
    if preset:
        if preset not in PRESETS:
            raise ConfigError(f"unknown preset {preset!r}; valid: {sorted(PRESETS)}")
        for k, v in PRESETS[preset].items():
            if not path or k not in data:
                setattr(cfg, k, v)
    for item in overrides or []:
        if "=" not in item:
            raise ConfigError(f"override {item!r} must look like key=value")
        key, val = item.split("=", 1)
        key = key.strip().replace("-", "_")
        if key not in valid:
            raise ConfigError(
                f"unknown config key {key!r}; valid keys: {sorted(valid)}")
        current = getattr(cfg, key)
        caster = type(current)
        try:
            setattr(cfg, key, caster(json.loads(val)) if caster is not str else val)
        except (json.JSONDecodeError, TypeError, ValueError) as e:
            raise ConfigError(f"bad value for {key}: {val!r}") from e
    if seed is not None:
        cfg.seed = seed
    return cfg.validate()
