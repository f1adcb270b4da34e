"""Flat key-value run configuration with dotted sections.

File format: one ``key = value`` per line, ``#`` comments allowed. Every key
has a default matching the training protocol; unknown keys are rejected.
The fully resolved config is echoed to ``config.resolved`` in the output
directory before any work starts.
"""
from __future__ import annotations

from pathlib import Path

from .errors import ConfigError
from .model import ModelConfig
from .training import TrainConfig

DEFAULTS: dict[str, object] = {
    "seed": 42,
    "model.n_qubits": 4,
    "model.n_layers": 2,
    "model.connectivity": "ring",
    "model.quantum_enabled": True,
    "model.gradient_method": "adjoint",
    "model.attention_heads": 4,
    "train.lr0": 1e-4,
    "train.gamma": 0.9,
    "train.batch_size": 16,
    "train.max_epochs": 25,
    "train.patience": 7,
    "train.beta1": 0.9,
    "train.beta2": 0.999,
    "train.eps": 1e-8,
}


def _coerce(key: str, value: str):
    default = DEFAULTS[key]
    if isinstance(default, bool):
        low = value.strip().lower()
        if low in ("true", "1", "yes"):
            return True
        if low in ("false", "0", "no"):
            return False
        raise ConfigError(f"{key} expects a boolean, got {value!r}")
    if isinstance(default, int):
        try:
            return int(value)
        except ValueError as exc:
            raise ConfigError(f"{key} expects an integer, got {value!r}") from exc
    if isinstance(default, float):
        try:
            return float(value)
        except ValueError as exc:
            raise ConfigError(f"{key} expects a number, got {value!r}") from exc
    return value.strip()


def parse_config_file(path) -> dict:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    out: dict[str, object] = {}
    for lineno, line in enumerate(path.read_text().splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise ConfigError(f"{path}:{lineno}: expected 'key = value'")
        key, value = (s.strip() for s in stripped.split("=", 1))
        if key not in DEFAULTS:
            raise ConfigError(f"{path}:{lineno}: unknown config key {key!r}")
        out[key] = _coerce(key, value)
    return out


def resolve_config(file_path=None, overrides=None) -> dict:
    """defaults <- config file <- command-line overrides."""
    cfg = dict(DEFAULTS)
    if file_path is not None:
        cfg.update(parse_config_file(file_path))
    for key, value in (overrides or {}).items():
        if key not in DEFAULTS:
            raise ConfigError(f"unknown config key {key!r}")
        cfg[key] = _coerce(key, value) if isinstance(value, str) else value
    return cfg


def dump_config(cfg: dict, extra: dict | None = None) -> str:
    merged = dict(cfg)
    if extra:
        merged.update(extra)
    lines = []
    for key in sorted(merged):
        value = merged[key]
        if isinstance(value, bool):
            value = "true" if value else "false"
        lines.append(f"{key} = {value}")
    return "\n".join(lines) + "\n"


def model_config_from(cfg: dict) -> ModelConfig:
    mc = ModelConfig(
        n_qubits=cfg["model.n_qubits"],
        n_layers=cfg["model.n_layers"],
        connectivity=cfg["model.connectivity"],
        quantum_enabled=cfg["model.quantum_enabled"],
        gradient_method=cfg["model.gradient_method"],
        attention_heads=cfg["model.attention_heads"],
    )
    mc.validate()
    return mc


def train_config_from(cfg: dict) -> TrainConfig:
    tc = TrainConfig(
        lr0=cfg["train.lr0"],
        gamma=cfg["train.gamma"],
        batch_size=cfg["train.batch_size"],
        max_epochs=cfg["train.max_epochs"],
        patience=cfg["train.patience"],
        beta1=cfg["train.beta1"],
        beta2=cfg["train.beta2"],
        eps=cfg["train.eps"],
        seed=cfg["seed"],
    )
    tc.validate()
    return tc
