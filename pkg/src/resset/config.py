"""Model/training configuration and the flat ``key=value`` config file format.

Lines look like ``hidden_dim = 32``; ``#`` starts a comment. Values are
parsed according to the dataclass field type, and unknown keys are errors.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Any, TypeVar

from .interaction import MODES

TASKS = ("readmission", "disease", "treatment")
POOLINGS = ("mean", "last", "exp_smooth")
MODELS = ("resset", "flat-lstm", "bow")
MULTILABEL_LOSSES = ("masked_softmax", "sigmoid_bce")


class ConfigError(ValueError):
    pass


@dataclass
class ModelConfig:
    model: str = "resset"
    task: str = "readmission"
    embed_dim: int = 32
    hidden_dim: int = 32
    interaction: str = "subtractive"
    pooling: str = "last"
    exp_alpha: float = 0.1
    epsilon: float = 1e-6
    max_visits: int = 10
    max_tokens: int = 100
    dropout: float = 0.5
    state_reg_beta: float = 0.0
    head_layers: int = 1
    multilabel_loss: str = "masked_softmax"
    topk_max: int = 3

    def validate(self) -> None:
        _choice("model", self.model, MODELS)
        _choice("task", self.task, TASKS)
        _choice("interaction", self.interaction, MODES)
        _choice("pooling", self.pooling, POOLINGS)
        _choice("multilabel_loss", self.multilabel_loss, MULTILABEL_LOSSES)
        if self.embed_dim < 1 or self.hidden_dim < 1:
            raise ConfigError("embed_dim and hidden_dim must be >= 1")
        if not 0.0 <= self.exp_alpha <= 1.0:
            raise ConfigError("exp_alpha must lie in [0, 1]")
        if not self.epsilon > 0:
            raise ConfigError("epsilon must be positive")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError("dropout must lie in [0, 1)")
        if self.state_reg_beta < 0:
            raise ConfigError("state_reg_beta must be >= 0")
        if self.max_visits < 1 or self.max_tokens < 1:
            raise ConfigError("max_visits and max_tokens must be >= 1")
        if self.head_layers < 1:
            raise ConfigError("head_layers must be >= 1")
        if self.topk_max < 1:
            raise ConfigError("topk_max must be >= 1")


@dataclass
class TrainConfig(ModelConfig):
    lr: float = 0.01
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    epochs: int = 20
    batch_size: int = 16
    seed: int = 0
    fold_count: int = 5
    l2: float = 1e-3
    backend: str = "fused"

    def validate(self) -> None:
        super().validate()
        if not self.lr > 0:
            raise ConfigError("lr must be positive")
        for name in ("adam_beta1", "adam_beta2"):
            if not 0.0 <= getattr(self, name) < 1.0:
                raise ConfigError(f"{name} must lie in [0, 1)")
        if self.epochs < 0 or self.batch_size < 1:
            raise ConfigError("epochs must be >= 0 and batch_size >= 1")
        if self.fold_count < 2:
            raise ConfigError("fold_count must be >= 2")
        if self.l2 < 0:
            raise ConfigError("l2 must be >= 0")
        _choice("backend", self.backend, ("fused", "graph"))


def _choice(name: str, value: str, allowed) -> None:
    if value not in allowed:
        raise ConfigError(f"{name} must be one of {', '.join(allowed)}; got {value!r}")


C = TypeVar("C")


def _convert(raw: str, typ: Any, key: str):
    typ = typ if isinstance(typ, type) else {"int": int, "float": float, "str": str, "bool": bool}.get(str(typ), str)
    try:
        if typ is bool:
            low = raw.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if typ is int:
            return int(raw)
        if typ is float:
            return float(raw)
    except ValueError:
        raise ConfigError(f"bad value for {key}: {raw!r}") from None
    return raw


def parse_config(text: str, cls: type[C], **overrides) -> C:
    types = {f.name: f.type for f in fields(cls)}  # type: ignore[arg-type]
    values: dict[str, Any] = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key=value")
        key, raw = (s.strip() for s in line.split("=", 1))
        if key not in types:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        values[key] = _convert(raw, types[key], key)
    values.update({k: v for k, v in overrides.items() if v is not None})
    cfg = cls(**values)
    if hasattr(cfg, "validate"):
        cfg.validate()
    return cfg


def load_config(path: str | Path | None, cls: type[C], **overrides) -> C:
    text = Path(path).read_text(encoding="utf-8") if path else ""
    return parse_config(text, cls, **overrides)


def dump_config(cfg) -> str:
    return "".join(f"{k} = {v}\n" for k, v in dataclasses.asdict(cfg).items())
