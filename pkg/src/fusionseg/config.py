"""Plain ``key=value`` run configuration files (one setting per line, ``#`` comments)."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional

from .network import StreamConfig
from .training import TrainConfig

PATH_KEYS = ("frames", "flow", "boxes", "masks", "checkpoints", "output")
OUTPUT_KEYS = ("output", "checkpoints")


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    stream: StreamConfig = field(default_factory=StreamConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    paths: dict[str, Path] = field(default_factory=dict)

    @property
    def seed(self) -> int:
        return self.train.seed


def _coerce(raw: str, current: Any, key: str) -> Any:
    try:
        if isinstance(current, tuple):
            return tuple(int(t) for t in raw.replace(",", " ").split())
        if isinstance(current, bool):
            return raw.lower() in ("1", "true", "yes")
        if isinstance(current, int):
            return int(raw)
        if isinstance(current, float):
            return float(raw)
    except ValueError as exc:
        raise ConfigError(f"bad value for {key}: {raw!r}") from exc
    return raw


def parse_config(text: str, base: Optional[Path] = None) -> RunConfig:
    stream_kw: dict[str, Any] = {}
    train_kw: dict[str, Any] = {}
    paths: dict[str, Path] = {}
    stream_defaults = StreamConfig()
    train_defaults = TrainConfig()
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key=value, got {line!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if key in StreamConfig.field_names():
            stream_kw[key] = _coerce(value, getattr(stream_defaults, key), key)
        elif key in TrainConfig.field_names():
            train_kw[key] = _coerce(value, getattr(train_defaults, key), key)
        elif key in PATH_KEYS:
            p = Path(value)
            paths[key] = p if p.is_absolute() or base is None else base / p
        else:
            raise ConfigError(f"unknown config key: {key}")
    try:
        cfg = RunConfig(StreamConfig(**stream_kw), TrainConfig(**train_kw), paths)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc
    for key, p in paths.items():
        if key not in OUTPUT_KEYS and not p.exists():
            raise ConfigError(f"config path {key}={p} does not exist")
    return cfg


def load_config(path: Optional[str | Path], seed: Optional[int] = None) -> RunConfig:
    if path is None:
        cfg = RunConfig()
    else:
        path = Path(path)
        cfg = parse_config(path.read_text(), base=path.parent)
    if seed is not None:
        cfg.train = dataclasses.replace(cfg.train, seed=seed)
    return cfg
