"""Flat dotted-key run configuration.

One schema covers model, training, data, and run-directory settings.  The
file format is plain text, one "key = value" per line with # comments; the
canonical dump writes every key in sorted order, so dump -> parse -> dump
is byte-identical and the config hash names the run directory.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

from .model import ModelConfig
from .training import TrainConfig


class ConfigError(ValueError):
    """Unknown key, malformed line, or invalid value."""


@dataclass(frozen=True)
class Field:
    kind: str  # int | float | bool | str | ints
    default: object


SCHEMA = {
    "model.n_time_bins": Field("int", 8),
    "model.msa_dim": Field("int", 16),
    "model.msa_heads": Field("int", 16),
    "model.msa_enabled": Field("bool", True),
    "model.channels": Field("ints", (32, 64, 96)),
    "model.smoothnet_depth": Field("int", 2),
    "model.kernel_taps": Field("int", 25),
    "model.kernel_head_depths": Field("ints", (1, 1, 2)),
    "model.reverse_negates_polarity": Field("bool", True),
    "model.seed": Field("int", 0),
    "train.lr_initial": Field("float", 8e-4),
    "train.lr_halving_period": Field("int", 8),
    "train.epochs": Field("int", 36),
    "train.batch_size": Field("int", 6),
    "train.beta1": Field("float", 0.9),
    "train.beta2": Field("float", 0.999),
    "train.loss": Field("str", "charbonnier"),
    "train.seed": Field("int", 0),
    "train.checkpoint_every": Field("int", 1),
    "train.val_every": Field("int", 1),
    "train.grad_clip": Field("float", 1.0),
    "data.root": Field("str", "data"),
    "data.height": Field("int", 64),
    "data.width": Field("int", 64),
    "data.n_train": Field("int", 8),
    "data.n_val": Field("int", 2),
    "data.n_test": Field("int", 2),
    "data.n_substeps": Field("int", 32),
    "data.threshold": Field("float", 0.15),
    "data.noise": Field("float", 0.0),
    "data.speed": Field("float", 1.0),
    "data.seed": Field("int", 0),
    "run.out_dir": Field("str", "runs"),
}


def parse_value(key: str, text: str):
    if key not in SCHEMA:
        raise ConfigError(f"unknown config key {key!r}")
    kind = SCHEMA[key].kind
    text = text.strip()
    try:
        if kind == "int":
            return int(text)
        if kind == "float":
            return float(text)
        if kind == "bool":
            if text not in ("true", "false"):
                raise ValueError("expected true or false")
            return text == "true"
        if kind == "ints":
            return tuple(int(part) for part in text.split(","))
        return text
    except ValueError as exc:
        raise ConfigError(f"{key}: cannot parse {text!r} as {kind} ({exc})") from exc


def format_value(key: str, value) -> str:
    kind = SCHEMA[key].kind
    if kind == "bool":
        return "true" if value else "false"
    if kind == "ints":
        return ",".join(str(int(v)) for v in value)
    if kind == "float":
        return repr(float(value))
    return str(value)


def default_config() -> dict:
    return {key: field.default for key, field in SCHEMA.items()}


def parse_config_text(text: str) -> dict:
    """Parse key = value lines into a partial config dict."""
    out = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, _, value = line.partition("=")
        key = key.strip()
        out[key] = parse_value(key, value)
    return out


def load_config(path=None, overrides=None) -> dict:
    """Defaults, then the config file, then override pairs; returns the full
    validated config dict."""
    cfg = default_config()
    if path is not None:
        with open(path) as fh:
            cfg.update(parse_config_text(fh.read()))
    for key, text in overrides or []:
        cfg[key] = parse_value(key, text)
    return cfg


def dump_config(cfg: dict) -> str:
    unknown = set(cfg) - set(SCHEMA)
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    lines = [f"{key} = {format_value(key, cfg[key])}" for key in sorted(SCHEMA)]
    return "\n".join(lines) + "\n"


def config_hash(cfg: dict) -> str:
    return hashlib.sha256(dump_config(cfg).encode()).hexdigest()[:12]


def to_model_config(cfg: dict) -> ModelConfig:
    try:
        return ModelConfig(
            n_time_bins=cfg["model.n_time_bins"],
            msa_dim=cfg["model.msa_dim"],
            msa_heads=cfg["model.msa_heads"],
            msa_enabled=cfg["model.msa_enabled"],
            channels=cfg["model.channels"],
            smoothnet_depth=cfg["model.smoothnet_depth"],
            kernel_taps=cfg["model.kernel_taps"],
            kernel_head_depths=cfg["model.kernel_head_depths"],
            reverse_negates_polarity=cfg["model.reverse_negates_polarity"],
            seed=cfg["model.seed"],
        )
    except ValueError as exc:
        raise ConfigError(f"invalid model config: {exc}") from exc


def to_train_config(cfg: dict) -> TrainConfig:
    try:
        return TrainConfig(
            lr_initial=cfg["train.lr_initial"],
            lr_halving_period=cfg["train.lr_halving_period"],
            epochs=cfg["train.epochs"],
            batch_size=cfg["train.batch_size"],
            beta1=cfg["train.beta1"],
            beta2=cfg["train.beta2"],
            loss=cfg["train.loss"],
            seed=cfg["train.seed"],
            checkpoint_every=cfg["train.checkpoint_every"],
            val_every=cfg["train.val_every"],
            grad_clip=cfg["train.grad_clip"],
        )
    except ValueError as exc:
        raise ConfigError(f"invalid train config: {exc}") from exc
