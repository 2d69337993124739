"""JSON run configuration for the command-line tools.

A config file is a JSON object with up to four sections, every key
optional::

    {
      "training":    {...TrainConfig fields except "propagation"...},
      "propagation": {"sigma": null, "k_top": 32, "enabled_after_epoch": 30},
      "scene":       {...SceneSpec fields..., "count": 10},
      "paths":       {"val_scenes": null}
    }

Unknown keys are rejected and type errors name the offending JSON path.
"""

import dataclasses
import json
import typing
from dataclasses import dataclass, field, replace
from typing import Optional

from .core import SceneSpec
from .propagation import PropagationConfig
from .training import TrainConfig


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class PathsConfig:
    val_scenes: Optional[str] = None


@dataclass(frozen=True)
class RunConfig:
    training: TrainConfig = field(default_factory=TrainConfig)
    propagation: PropagationConfig = field(default_factory=PropagationConfig)
    scene: SceneSpec = field(default_factory=SceneSpec)
    num_scenes: int = 10
    paths: PathsConfig = field(default_factory=PathsConfig)

    def train_config(self):
        """TrainConfig carrying this config's propagation section."""
        return replace(self.training, propagation=self.propagation)


def _check_type(value, tp, where):
    optional = False
    if typing.get_origin(tp) is typing.Union:
        args = [a for a in typing.get_args(tp) if a is not type(None)]
        optional = len(args) < len(typing.get_args(tp))
        tp = args[0]
    if value is None:
        if optional:
            return None
        raise ConfigError(f"{where}: expected {tp.__name__}, got null")
    if tp is float:
        ok = isinstance(value, (int, float)) and not isinstance(value, bool)
        value = float(value) if ok else value
    elif tp is int:
        ok = isinstance(value, int) and not isinstance(value, bool)
    else:
        ok = isinstance(value, tp)
    if not ok:
        raise ConfigError(f"{where}: expected {tp.__name__}, got {type(value).__name__}")
    return value


def _section(cls, obj, where, skip=(), extra=None):
    extra = extra or {}
    if not isinstance(obj, dict):
        raise ConfigError(f"{where}: expected an object")
    hints = typing.get_type_hints(cls)
    known = {f.name for f in dataclasses.fields(cls) if f.name not in skip}
    kwargs, extras = {}, {}
    for key, value in obj.items():
        path = f"{where}.{key}"
        if key in extra:
            extras[key] = _check_type(value, extra[key], path)
        elif key in known:
            kwargs[key] = _check_type(value, hints[key], path)
        else:
            raise ConfigError(f"unknown key: {path}")
    try:
        return cls(**kwargs), extras
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where}: {exc}") from None


def config_from_dict(doc):
    if not isinstance(doc, dict):
        raise ConfigError("config: expected a JSON object")
    unknown = set(doc) - {"training", "propagation", "scene", "paths"}
    if unknown:
        raise ConfigError(f"unknown key: {sorted(unknown)[0]}")
    training, _ = _section(TrainConfig, doc.get("training", {}), "training", skip=("propagation",))
    prop, _ = _section(PropagationConfig, doc.get("propagation", {}), "propagation")
    scene, extras = _section(SceneSpec, doc.get("scene", {}), "scene", extra={"count": int})
    paths, _ = _section(PathsConfig, doc.get("paths", {}), "paths")
    count = extras.get("count", 10)
    if count < 1:
        raise ConfigError("scene.count: must be positive")
    return RunConfig(training, prop, scene, count, paths)


def parse_config(path=None):
    """Load and validate a config file; ``None`` gives all defaults."""
    if path is None:
        return RunConfig()
    try:
        with open(path) as f:
            doc = json.load(f)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from None
    return config_from_dict(doc)
