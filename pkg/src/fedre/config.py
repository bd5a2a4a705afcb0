"""Experiment configuration: plain ``key = value`` text with optional
``[section]`` headers (purely organisational; keys share one namespace).

Command-line flags override file values. Every key, its type and default is
listed in ``FIELDS`` below and in the README.
"""

from __future__ import annotations

import dataclasses
import math
import os
from dataclasses import dataclass, field
from pathlib import Path

from .errors import ConfigError


@dataclass
class ExperimentConfig:
    seed: int = 0
    # data
    data: str = ""
    n_samples: int = 320
    n_test: int = 64
    height: int = 16
    width: int = 16
    tamper_min: int = 3
    tamper_max: int = 6
    psi_count_min: int = 1
    psi_count_max: int = 4
    psi_size_min: int = 2
    psi_size_max: int = 6
    noise: float = 0.05
    tamper_boost: float = 0.4
    texture_seed: int = 7
    # model
    arch: str = "conv"
    hidden: tuple = (4,)
    # federation
    clients: int = 4
    fraction: float = 1.0
    rounds: int = 10
    lr: float = 0.005
    aggregation: str = "pda"
    alpha_floor: float = 1e-3
    public_per_format: int = 5
    # privacy
    epsilon: float = 50.0
    delta: float = 1e-5
    clip: tuple = (0.2,)
    s_floor: float = 1e-6
    allocation: str = "psi"
    uniform_psi: bool = False
    psi_samples: int = 10
    fd_step: float = 1e-4
    # attack
    attack_iterations: int = 2000
    attack_step: float = 0.1
    attack_method: str = "weight-fd"
    attack_seed: int = 0
    attack_index: int = 0
    # output
    output: str = field(default_factory=lambda: os.environ.get("FEDRE_OUTPUT_DIR", "fedre-out"))

    @property
    def layer_count(self) -> int:
        return len(self.hidden) + 1


CHOICES = {
    "arch": ("conv", "dense"),
    "aggregation": ("fedavg", "pda"),
    "allocation": ("psi", "uniform"),
    "attack_method": ("pixel-fd", "weight-fd"),
}

FIELDS = {f.name: f for f in dataclasses.fields(ExperimentConfig)}


def _convert(key: str, raw: str, line: int | None):
    f = FIELDS[key]
    default = f.default if f.default is not dataclasses.MISSING else f.default_factory()
    raw = raw.strip()
    try:
        if isinstance(default, bool):
            low = raw.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return math.inf if raw.lower() in ("inf", "infinity") else float(raw)
        if isinstance(default, tuple):
            kind = type(default[0])
            parts = [p.strip() for p in raw.split(",") if p.strip()]
            if not parts:
                raise ValueError
            return tuple(kind(p) for p in parts)
        return raw
    except ValueError:
        want = type(default).__name__ if not isinstance(default, tuple) else f"comma list of {type(default[0]).__name__}"
        raise ConfigError(f"{key}: cannot parse {raw!r} as {want}", line) from None


def _checks(cfg: ExperimentConfig):
    L = cfg.layer_count
    yield cfg.n_samples >= 1, "n_samples", "must be positive"
    yield cfg.n_test >= 1, "n_test", "must be positive"
    yield cfg.n_test < cfg.n_samples, "n_test", "must leave samples for training"
    yield cfg.height >= 1 and cfg.width >= 1, "height", "image extents must be positive"
    yield all(h >= 1 for h in cfg.hidden), "hidden", "layer widths must be positive"
    yield cfg.clients >= 1, "clients", "must be at least 1"
    yield 0 < cfg.fraction <= 1, "fraction", "must lie in (0, 1]"
    yield cfg.rounds >= 0, "rounds", "must be non-negative"
    yield cfg.lr > 0, "lr", "must be positive"
    yield cfg.alpha_floor > 0, "alpha_floor", "must be positive"
    yield cfg.public_per_format >= 1, "public_per_format", "must be at least 1"
    yield cfg.epsilon > 0, "epsilon", "must be positive or inf"
    yield 0 < cfg.delta < 1, "delta", "must lie in (0, 1)"
    yield all(c > 0 for c in cfg.clip), "clip", "thresholds must be positive"
    yield len(cfg.clip) in (1, L), "clip", f"{len(cfg.clip)} thresholds given but the model has {L} layers"
    yield cfg.s_floor >= 0, "s_floor", "must be non-negative"
    yield cfg.psi_samples >= 1, "psi_samples", "must be at least 1"
    yield cfg.fd_step > 0, "fd_step", "must be positive"
    yield cfg.attack_iterations >= 0, "attack_iterations", "must be non-negative"
    yield cfg.attack_step > 0, "attack_step", "must be positive"
    yield cfg.attack_index >= 0, "attack_index", "must be non-negative"
    for key, allowed in CHOICES.items():
        yield getattr(cfg, key) in allowed, key, f"must be one of {', '.join(allowed)}"


def validate(cfg: ExperimentConfig, lines: dict | None = None) -> ExperimentConfig:
    lines = lines or {}
    for ok, key, msg in _checks(cfg):
        if not ok:
            raise ConfigError(f"{key}: {msg}", lines.get(key))
    return cfg


def parse_text(text: str) -> tuple[dict, dict]:
    """Parse config text into ``(values, line_numbers)`` keyed by field name."""
    values, lines = {}, {}
    for no, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("[") and line.endswith("]"):
            continue
        if "=" not in line:
            raise ConfigError(f"expected 'key = value', got {raw.strip()!r}", no)
        key, value = (p.strip() for p in line.split("=", 1))
        key = key.replace("-", "_")
        if key not in FIELDS:
            raise ConfigError(f"unknown key {key!r}", no)
        if key in values:
            raise ConfigError(f"duplicate key {key!r} (first set on line {lines[key]})", no)
        values[key] = _convert(key, value, no)
        lines[key] = no
    return values, lines


def parse_config(path=None, overrides: dict | None = None) -> ExperimentConfig:
    """Load ``path`` (optional), apply string ``overrides``, validate."""
    values, lines = {}, {}
    if path is not None:
        p = Path(path)
        if not p.is_file():
            raise ConfigError(f"config file {str(p)!r} does not exist")
        values, lines = parse_text(p.read_text())
    for key, raw in (overrides or {}).items():
        key = key.replace("-", "_")
        if key not in FIELDS:
            raise ConfigError(f"unknown key {key!r}")
        values[key] = raw if not isinstance(raw, str) else _convert(key, raw, None)
        lines.pop(key, None)
    return validate(ExperimentConfig(**values), lines)


def to_text(cfg: ExperimentConfig) -> str:
    out = []
    for name in FIELDS:
        v = getattr(cfg, name)
        if isinstance(v, tuple):
            v = ",".join(repr(x) if isinstance(x, float) else str(x) for x in v)
        elif isinstance(v, bool):
            v = "true" if v else "false"
        elif isinstance(v, float):
            v = "inf" if math.isinf(v) else repr(v)
        out.append(f"{name} = {v}")
    return "\n".join(out) + "\n"
