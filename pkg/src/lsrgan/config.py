"""Flat ``key = value`` run-configuration files.

Bare keys set ``TrainConfig`` fields, ``synth.<field>`` keys set
``SynthSpec`` fields, and ``data`` / ``out`` / ``checkpoint`` are paths.
Unknown keys are rejected.
"""
from __future__ import annotations

from dataclasses import fields

from .data import SynthSpec
from .training import TrainConfig

PATH_KEYS = ("data", "out", "checkpoint")


class ConfigError(ValueError):
    """Invalid configuration key or value."""


def _coerce(type_name, raw, key):
    t = str(type_name).replace(" ", "")
    optional = "None" in t.split("|")
    base = [p for p in t.split("|") if p != "None"][0]
    if optional and raw.lower() in ("none", "null", ""):
        return None
    try:
        if base == "int":
            return int(raw)
        if base == "float":
            return float(raw)
        if base == "bool":
            if raw.lower() in ("1", "true", "yes", "on"):
                return True
            if raw.lower() in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        return raw
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {raw!r} as {base}") from None


_TRAIN_TYPES = {f.name: f.type for f in fields(TrainConfig)}
_SYNTH_TYPES = {f.name: f.type for f in fields(SynthSpec)}


def parse_pairs(pairs, source="<flags>"):
    """Split ``key=value`` strings (with optional line numbers) into sections."""
    train, synth, paths = {}, {}, {}
    for lineno, text in pairs:
        where = f"{source}:{lineno}" if lineno else source
        if "=" not in text:
            raise ConfigError(f"{where}: expected key = value, got {text!r}")
        key, raw = (s.strip() for s in text.split("=", 1))
        if key in PATH_KEYS:
            paths[key] = raw
        elif key.startswith("synth."):
            name = key[len("synth."):]
            if name not in _SYNTH_TYPES:
                raise ConfigError(f"{where}: unknown key {key!r}")
            synth[name] = _coerce(_SYNTH_TYPES[name], raw, key)
        elif key in _TRAIN_TYPES:
            train[key] = _coerce(_TRAIN_TYPES[key], raw, key)
        else:
            raise ConfigError(f"{where}: unknown key {key!r}")
    return train, synth, paths


def read_config_file(path):
    pairs = []
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if line:
                pairs.append((lineno, line))
    return parse_pairs(pairs, source=str(path))


def build_train_config(values, **overrides):
    merged = {**values, **{k: v for k, v in overrides.items() if v is not None}}
    try:
        return TrainConfig(**merged)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from None


def build_synth_spec(values, **overrides):
    merged = {**values, **{k: v for k, v in overrides.items() if v is not None}}
    try:
        spec = SynthSpec(**merged)
        spec.validate()
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from None
    return spec


# desk-scale preset used by the synthetic acceptance runs
DESK = {
    "epochs": 100,
    "lr": 1e-3,
    "hidden_g": 128,
    "hidden_d": 128,
    "noise_dim": 16,
    "output_activation": "tanh",
}
