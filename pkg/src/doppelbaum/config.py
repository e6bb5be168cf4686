"""Run configuration: named presets, YAML files and ``section.key=value`` overrides."""

from __future__ import annotations

import copy
from importlib import resources

import yaml

from .decoding import DecodeConfig
from .model import ModelConfig
from .training import TrainConfig

PRESETS = ("desk", "paper")
SECTIONS = {"vocab": None, "model": ModelConfig, "train": TrainConfig, "decode": DecodeConfig}


def load_preset(name):
    if name not in PRESETS:
        raise ValueError(f"unknown preset {name!r}; choose from {PRESETS}")
    text = resources.files("doppelbaum").joinpath("configs").joinpath(f"{name}.yaml").read_text("utf-8")
    return yaml.safe_load(text)


def _check(cfg, origin):
    if not isinstance(cfg, dict):
        raise ValueError(f"{origin}: expected a mapping at top level")
    for key, value in cfg.items():
        if key == "seed":
            continue
        if key not in SECTIONS:
            raise ValueError(f"{origin}: unknown section {key!r}")
        if not isinstance(value, dict):
            raise ValueError(f"{origin}: section {key!r} must be a mapping")


def merge(base, extra):
    out = copy.deepcopy(base)
    for key, value in extra.items():
        if isinstance(value, dict):
            out.setdefault(key, {}).update(value)
        else:
            out[key] = value
    return out


def parse_override(text):
    """``train.max_steps=100`` -> {"train": {"max_steps": 100}}; values are YAML scalars."""
    key, sep, raw = text.partition("=")
    if not sep or not key:
        raise ValueError(f"override {text!r} is not of the form section.key=value")
    value = yaml.safe_load(raw) if raw else ""
    if key == "seed":
        return {"seed": value}
    section, dot, name = key.partition(".")
    if not dot or section not in SECTIONS or not name:
        raise ValueError(f"override {text!r}: key must be seed or one of "
                         f"{', '.join(s + '.<name>' for s in SECTIONS)}")
    return {section: {name: value}}


def resolve(preset="desk", config_path=None, overrides=()):
    """Preset, then the config file, then each override in order."""
    cfg = load_preset(preset)
    if config_path:
        with open(config_path, encoding="utf-8") as fh:
            extra = yaml.safe_load(fh) or {}
        _check(extra, config_path)
        cfg = merge(cfg, extra)
    for item in overrides:
        cfg = merge(cfg, item if isinstance(item, dict) else parse_override(item))
    _check(cfg, "configuration")
    return cfg


def _build(cls, section, values):
    names = {f.name for f in cls.__dataclass_fields__.values()}
    unknown = sorted(set(values) - names)
    if unknown:
        raise ValueError(f"unknown {section} option(s): {', '.join(unknown)}")
    return cls(**values)


def model_config(cfg, vocab_size):
    return _build(ModelConfig, "model", dict(cfg.get("model", {}), vocab_size=vocab_size))


def train_config(cfg):
    return _build(TrainConfig, "train", dict(cfg.get("train", {}), seed=cfg.get("seed", 1128)))


def decode_config(cfg):
    return _build(DecodeConfig, "decode", dict(cfg.get("decode", {})))


def vocab_size(cfg):
    return int(cfg.get("vocab", {}).get("size", 1000))
