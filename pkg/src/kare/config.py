"""Centralized configuration for kare.

Two layers live here:

- process-level settings read from the environment at import time
  (``KARE_CONFIG``, ``KARE_DATA_DIR``, ``KARE_JOBS``);
- :class:`ModelConfig`, the hyperparameter tree every command and checkpoint
  shares. It is written as flat ``section.key = value`` text, so a config file,
  a ``--set`` override and the text embedded in a checkpoint are one format.
"""

from __future__ import annotations

import dataclasses
import os
import re
import types
import typing
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Mapping, Optional, Sequence, Tuple

from kare.errors import ConfigError
from kare.lexicon import MatcherConfig

# a "#" starts a comment at line start or after whitespace
_COMMENT = re.compile(r"(?:^|\s)#.*$")

KARE_CONFIG: Optional[str] = os.getenv("KARE_CONFIG") or None
DATA_DIR = Path(os.getenv("KARE_DATA_DIR", "data"))
JOBS = int(os.getenv("KARE_JOBS", "1"))


@dataclass(frozen=True)
class EmbeddingSection:
    dim: int = 300
    trainable: bool = False
    path: str = ""


@dataclass(frozen=True)
class PositionSection:
    dim: int = 30
    clip: int = 50


@dataclass(frozen=True)
class CnnSection:
    windows: Tuple[int, ...] = (2, 3, 4)
    filters: int = 50


@dataclass(frozen=True)
class AttentionSection:
    dim: int = 100


@dataclass(frozen=True)
class ContextSection:
    provider: str = "surrogate"  # surrogate | external
    layer: int = -1  # >=1: that layer; <=0: counted from the top (-1 is L-1)
    pool: str = "mean"  # mean | cls | attention
    trainable: bool = True
    positions: bool = False  # concatenate entity positions to token states
    path: str = ""


@dataclass(frozen=True)
class SurrogateConfig:
    """Desk-scale transformer standing in for a pre-trained contextual encoder."""

    layers: int = 4
    heads: int = 4
    hidden: int = 128
    ff: int = 256
    max_len: int = 128
    dropout: float = 0.0


@dataclass(frozen=True)
class FusionSection:
    dim: int = 128


@dataclass(frozen=True)
class ModelSection:
    use_context: bool = True
    use_cnn: bool = True
    use_position_embedding: bool = True
    use_position_attention: bool = True
    use_entity_branch: bool = True
    fusion: str = "gated"  # gated | concat
    attention: str = "position"  # position | vanilla


@dataclass(frozen=True)
class TrainSection:
    epochs: int = 50
    batch_size: int = 32
    lr: float = 1e-3
    context_lr: float = 1e-3
    patience: int = 5
    seed: int = 13
    class_weighting: str = "none"  # none | inverse
    dropout: float = 0.0
    ratios: Tuple[float, ...] = (0.8, 0.1, 0.1)


_CHOICES: Dict[str, Tuple[str, ...]] = {
    "context.provider": ("surrogate", "external"),
    "context.pool": ("mean", "cls", "attention"),
    "model.fusion": ("gated", "concat"),
    "model.attention": ("position", "vanilla"),
    "train.class_weighting": ("none", "inverse"),
}


@dataclass(frozen=True)
class ModelConfig:
    """Every hyperparameter and ablation switch of the pipeline."""

    lexicon: MatcherConfig = field(default_factory=MatcherConfig)
    embedding: EmbeddingSection = field(default_factory=EmbeddingSection)
    position: PositionSection = field(default_factory=PositionSection)
    cnn: CnnSection = field(default_factory=CnnSection)
    attention: AttentionSection = field(default_factory=AttentionSection)
    context: ContextSection = field(default_factory=ContextSection)
    surrogate: SurrogateConfig = field(default_factory=SurrogateConfig)
    fusion: FusionSection = field(default_factory=FusionSection)
    model: ModelSection = field(default_factory=ModelSection)
    train: TrainSection = field(default_factory=TrainSection)

    # --- flat key access ---------------------------------------------------------
    def items(self) -> Dict[str, Any]:
        """All settings as ``{"section.key": value}``, sorted by key."""
        out: Dict[str, Any] = {}
        for sec in dataclasses.fields(self):
            section = getattr(self, sec.name)
            for f in dataclasses.fields(section):
                out[f"{sec.name}.{f.name}"] = getattr(section, f.name)
        return dict(sorted(out.items()))

    def get(self, key: str) -> Any:
        section, name = _split_key(key)
        if not hasattr(self, section) or name not in _field_types(
            type(getattr(self, section))
        ):
            raise ConfigError(f"unknown config key: {key}")
        return getattr(getattr(self, section), name)

    def with_values(self, values: Mapping[str, Any]) -> "ModelConfig":
        """Return a copy with ``values`` applied; strings are parsed per field type."""
        grouped: Dict[str, Dict[str, Any]] = {}
        for key, raw in values.items():
            section, name = _split_key(key)
            if section not in {f.name for f in dataclasses.fields(self)}:
                raise ConfigError(f"unknown config key: {key}")
            hints = _field_types(type(getattr(self, section)))
            if name not in hints:
                raise ConfigError(f"unknown config key: {key}")
            value = _coerce(key, raw, hints[name]) if isinstance(raw, str) else raw
            grouped.setdefault(section, {})[name] = value
        updated = {
            section: dataclasses.replace(getattr(self, section), **changes)
            for section, changes in grouped.items()
        }
        return dataclasses.replace(self, **updated)

    # --- canonical text ----------------------------------------------------------
    def to_text(self) -> str:
        """Canonical ``section.key = value`` text (sorted, one setting per line)."""
        return "".join(f"{k} = {_format(v)}\n" for k, v in self.items().items())

    @classmethod
    def from_text(
        cls, text: str, overrides: Sequence[str] = (), source: str = "<text>"
    ) -> "ModelConfig":
        values: Dict[str, str] = {}
        for lineno, raw in enumerate(text.splitlines(), start=1):
            line = _COMMENT.sub("", raw).strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{source}:{lineno}: expected 'key = value'")
            key, value = (part.strip() for part in line.split("=", 1))
            values[key] = value
        for item in overrides:
            if "=" not in item:
                raise ConfigError(f"--set expects key=value, got {item!r}")
            key, value = (part.strip() for part in item.split("=", 1))
            values[key] = value
        cfg = cls().with_values(values)
        cfg.validate()
        return cfg

    @classmethod
    def load(
        cls, path: Optional[Path | str] = None, overrides: Sequence[str] = ()
    ) -> "ModelConfig":
        """Load from ``path`` (or ``KARE_CONFIG``); defaults when neither is set."""
        chosen = path if path is not None else KARE_CONFIG
        if chosen is None:
            return cls.from_text("", overrides)
        p = Path(chosen)
        if not p.exists():
            raise ConfigError(f"config file not found: {p}")
        return cls.from_text(p.read_text(encoding="utf-8"), overrides, source=str(p))

    def validate(self) -> None:
        m = self.model
        if not (m.use_context or m.use_cnn):
            raise ConfigError("at least one of model.use_context/model.use_cnn")
        if not (m.use_context or m.use_entity_branch):
            raise ConfigError(
                "at least one of model.use_context/model.use_entity_branch"
            )
        for key, allowed in _CHOICES.items():
            if self.get(key) not in allowed:
                raise ConfigError(f"{key} must be one of {', '.join(allowed)}")
        s = self.surrogate
        if s.layers < 1 or s.heads < 1 or s.hidden % s.heads:
            raise ConfigError("surrogate.hidden must be divisible by surrogate.heads")
        layer = self.context.layer
        index = layer if layer >= 1 else s.layers + layer
        if self.context.provider == "surrogate" and not 1 <= index <= s.layers:
            raise ConfigError(
                f"context.layer {layer} out of range for {s.layers} surrogate layer(s)"
            )
        if self.context.positions and self.context.pool == "cls":
            raise ConfigError("context.positions needs context.pool mean or attention")
        if not self.cnn.windows or any(w < 1 for w in self.cnn.windows):
            raise ConfigError("cnn.windows must be a non-empty list of sizes >= 1")
        if self.lexicon.max_ngram < 1 or self.lexicon.max_distance < 0:
            raise ConfigError("lexicon.max_ngram >= 1 and lexicon.max_distance >= 0")
        for key in (
            "embedding.dim",
            "position.dim",
            "position.clip",
            "cnn.filters",
            "attention.dim",
            "fusion.dim",
            "train.batch_size",
        ):
            if self.get(key) < 1:
                raise ConfigError(f"{key} must be >= 1")
        ratios = self.train.ratios
        if len(ratios) != 3 or any(r <= 0 for r in ratios):
            raise ConfigError("train.ratios must be three positive values")
        if abs(sum(ratios) - 1) > 1e-9:
            raise ConfigError("train.ratios must sum to 1")


def _split_key(key: str) -> Tuple[str, str]:
    if key.count(".") != 1:
        raise ConfigError(f"unknown config key: {key}")
    section, name = key.split(".")
    return section, name


def _field_types(cls: type) -> Dict[str, Any]:
    return typing.get_type_hints(cls)


def _coerce(key: str, raw: str, tp: Any) -> Any:
    text = raw.strip()
    origin = typing.get_origin(tp)
    args = typing.get_args(tp)
    try:
        if tp is bool:
            lowered = text.lower()
            if lowered in ("true", "yes", "1", "on"):
                return True
            if lowered in ("false", "no", "0", "off"):
                return False
            raise ValueError(text)
        if tp is int:
            return int(text)
        if tp is float:
            return float(text)
        if tp is str:
            return text
        if origin is tuple:
            item = args[0]
            return tuple(item(p.strip()) for p in text.split(",") if p.strip())
        if origin in (typing.Union, types.UnionType):
            if text.lower() in ("none", ""):
                return None
            inner = next(a for a in args if a is not type(None))
            return _coerce(key, text, inner)
    except ValueError:
        raise ConfigError(f"{key}: invalid value {raw!r}") from None
    raise ConfigError(f"{key}: unsupported type {tp!r}")


def _format(value: Any) -> str:
    if value is None:
        return "none"
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, tuple):
        return ",".join(_format(v) for v in value)
    return str(value)
