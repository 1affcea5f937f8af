"""Flat ``key = value`` configuration files (TOML syntax).

Model keys: hidden, layers, heads, interaction_layers, num_prompts, max_len,
template ("default" | "hard" | "soft"), soft_tokens, ffn_mult, prompt_agnostic.
Training keys: lr, warmup, epochs, batch_size, lambda1, lambda2, seed, mode
("full" | "locate_only"), freeze_encoder, matching ("dynamic" | "static"),
label_expansion, upper_limit, boundary_negatives, clip_norm.
"""
from __future__ import annotations

import dataclasses
from pathlib import Path

import tomli

from .model import ModelConfig
from .training import TrainConfig

MODEL_KEYS = {f.name for f in dataclasses.fields(ModelConfig)} - {"vocab_size", "num_types"}
TRAIN_KEYS = {f.name for f in dataclasses.fields(TrainConfig)} - {"betas"}

ABLATIONS = {
    "none": {},
    "static": {"matching": "static"},
    "one_to_one": {"label_expansion": False},
    "no_mask": {"prompt_agnostic": False},
}


class ConfigError(ValueError):
    pass


def parse_config(text: str) -> dict:
    try:
        data = tomli.loads(text)
    except tomli.TOMLDecodeError as exc:
        raise ConfigError(str(exc)) from None
    unknown = set(data) - MODEL_KEYS - TRAIN_KEYS
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    for k, v in data.items():
        if isinstance(v, (dict, list)):
            raise ConfigError(f"config is flat; key {k!r} holds a {type(v).__name__}")
    return data


def load_config(path: str | Path | None) -> dict:
    if path is None:
        return {}
    return parse_config(Path(path).read_text(encoding="utf-8"))


def _fmt(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, str):
        return '"' + v.replace("\\", "\\\\").replace('"', '\\"') + '"'
    return repr(v)


def dump_config(values: dict) -> str:
    return "".join(f"{k} = {_fmt(v)}\n" for k, v in values.items() if v is not None)


def split_config(values: dict, ablation: str = "none") -> tuple[dict, dict]:
    if ablation not in ABLATIONS:
        raise ConfigError(f"unknown ablation {ablation!r}; choose from {list(ABLATIONS)}")
    merged = {**values, **ABLATIONS[ablation]}
    return ({k: v for k, v in merged.items() if k in MODEL_KEYS},
            {k: v for k, v in merged.items() if k in TRAIN_KEYS})


def build_configs(values: dict, vocab_size: int, num_types: int, ablation: str = "none") -> tuple[ModelConfig, TrainConfig]:
    model_kw, train_kw = split_config(values, ablation)
    try:
        return ModelConfig(vocab_size=vocab_size, num_types=num_types, **model_kw), TrainConfig(**train_kw)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from None
