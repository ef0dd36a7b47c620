"""Experiment configuration: flat ``key=value`` files with a typed schema.

Blank lines and ``#`` comments are ignored.  Every key must be known and
every value must parse as its declared type; ``dump`` writes the canonical
form (all keys, schema order) that lands in each run directory.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from pathlib import Path

from .training import MODES


class ConfigError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    mode: str = "mle"
    seed: int = 0
    train_corpus: str = ""
    eval_corpus: str = ""
    unlabeled_corpus: str = ""
    init_checkpoint: str = ""
    teacher_checkpoint: str = ""
    output_dir: str = "runs/default"
    vocab_size: int = 0  # 0: infer from the training corpus
    lam: float = 0.1
    gamma: float = 0.1
    train_beam_size: int = 8
    eval_beam_size: int = 8
    max_symbols_per_frame: int = 3
    learning_rate: float = 1e-3
    pretrain_steps: int = 3000
    finetune_steps: int = 1000
    batch_size: int = 8
    eval_interval: int = 100
    eval_limit: int = 200
    grad_clip: float = 5.0
    hidden: int = 64
    embed: int = 32
    log_throughput: bool = True

    @property
    def steps(self) -> int:
        return self.pretrain_steps if self.mode == "mle" else self.finetune_steps

    def validate(self) -> "ExperimentConfig":
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {', '.join(MODES)}, got {self.mode!r}")
        if self.mode == "o1_distill" and not self.teacher_checkpoint:
            raise ConfigError("mode o1_distill requires teacher_checkpoint")
        if self.mode != "o1_distill" and self.teacher_checkpoint:
            raise ConfigError("teacher_checkpoint is only valid in mode o1_distill")
        if self.mode in ("embr", "o1") and not self.init_checkpoint:
            raise ConfigError(f"mode {self.mode} fine-tunes a baseline: init_checkpoint is required")
        if not self.train_corpus or not self.eval_corpus:
            raise ConfigError("train_corpus and eval_corpus are required")
        if self.vocab_size < 0:
            raise ConfigError("vocab_size must be >= 0")
        if self.lam < 0 or self.gamma < 0:
            raise ConfigError("lambda and gamma must be >= 0")
        if self.train_beam_size < 1 or self.eval_beam_size < 1:
            raise ConfigError("beam sizes must be >= 1")
        for name in ("max_symbols_per_frame", "batch_size", "eval_interval", "hidden", "embed"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        for name in ("pretrain_steps", "finetune_steps", "eval_limit"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be >= 0")
        if self.learning_rate <= 0:
            raise ConfigError("learning_rate must be > 0")
        return self


# file key -> dataclass field, where they differ
_ALIASES = {"lambda": "lam"}
_FIELD_KEYS = {v: k for k, v in _ALIASES.items()}
_FIELDS = {f.name: f for f in dataclasses.fields(ExperimentConfig)}


def _convert(name: str, raw: str):
    kind = _FIELDS[name].type
    raw = raw.strip()
    try:
        if kind == "bool":
            lowered = raw.lower()
            if lowered not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(raw)
            return lowered in ("true", "1", "yes")
        if kind == "int":
            return int(raw)
        if kind == "float":
            return float(raw)
    except ValueError:
        raise ConfigError(f"{_FIELD_KEYS.get(name, name)}: expected {kind}, got {raw!r}") from None
    return raw


def parse_assignments(lines, source: str = "<config>") -> dict:
    values = {}
    for lineno, line in enumerate(lines, start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected key=value, got {line!r}")
        key, raw = (s.strip() for s in line.split("=", 1))
        name = _ALIASES.get(key, key)
        if name not in _FIELDS:
            raise ConfigError(f"{source}:{lineno}: unknown key {key!r}")
        try:
            values[name] = _convert(name, raw)
        except ConfigError as exc:
            raise ConfigError(f"{source}:{lineno}: {exc}") from None
    return values


def load_config(path=None, overrides=(), **extra) -> ExperimentConfig:
    """Read ``path`` (optional), then apply ``key=value`` overrides and keyword values."""
    values = {}
    if path is not None:
        text = Path(path).read_text()
        values.update(parse_assignments(text.splitlines(), str(path)))
    values.update(parse_assignments(overrides, "<override>"))
    for key, value in extra.items():
        name = _ALIASES.get(key, key)
        if name not in _FIELDS:
            raise ConfigError(f"unknown key {key!r}")
        values[name] = value
    return ExperimentConfig(**values)


def dump(config: ExperimentConfig) -> str:
    lines = []
    for f in dataclasses.fields(config):
        value = getattr(config, f.name)
        if isinstance(value, bool):
            value = str(value).lower()
        elif isinstance(value, float):
            value = repr(value)
        lines.append(f"{_FIELD_KEYS.get(f.name, f.name)}={value}")
    return "\n".join(lines) + "\n"
