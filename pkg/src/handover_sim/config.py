"""Episode configuration and strict dict/JSON conversion for config dataclasses."""

from __future__ import annotations

import json
import types
import typing
from dataclasses import dataclass, field, fields, is_dataclass, replace
from enum import Enum
from typing import Any

import numpy as np

from .core import ConfigError
from .fsm import FsmConfig
from .human import HumanConfig, LogNormal
from .percept import DEFAULT_PRIORS, TABLE_RECALL, RecognizerModel, build_confusion_matrix
from .servo import ServoConfig


@dataclass(frozen=True)
class SceneConfig:
    """Workspace geometry. None of these values come from a measured setup."""

    storage_lo: tuple[float, float, float] = (0.30, -0.30, 0.0)
    storage_hi: tuple[float, float, float] = (0.70, 0.30, 0.6)
    table_height: float = 0.0
    home_pose: tuple[float, float, float] = (0.50, 0.0, 0.35)
    delivery_point: tuple[float, float, float] = (0.0, 0.60, 0.25)
    transfer_speed: float = 0.25
    part_spacing: float = 0.08

    def __post_init__(self):
        if any(lo >= hi for lo, hi in zip(self.storage_lo[:2], self.storage_hi[:2])):
            raise ConfigError("scene.storage_lo must be below storage_hi", "scene.storage_lo")
        if not self.storage_lo[2] <= self.table_height <= self.storage_hi[2]:
            raise ConfigError("scene.table_height outside storage box", "scene.table_height")
        if self.transfer_speed <= 0:
            raise ConfigError("scene.transfer_speed must be > 0", "scene.transfer_speed")
        if self.part_spacing < 0:
            raise ConfigError("scene.part_spacing must be >= 0", "scene.part_spacing")


@dataclass(frozen=True)
class RecognizerConfig:
    recall: tuple[float, ...] = TABLE_RECALL
    priors: tuple[float, ...] = DEFAULT_PRIORS
    beta: float = 0.6
    policy: str = "no_assembly_bias"
    confusion: tuple[tuple[float, ...], ...] | None = None
    window_len: int = 16
    frame_rate: float = 10.0
    no_assembly_scale: float = 0.15
    epsilon: float = 0.3
    trained_frame_rate: float = 10.0
    rate_slope: float = 1.0

    def __post_init__(self):
        try:
            self.model()
        except ValueError as exc:
            raise ConfigError(f"recognizer: {exc}", "recognizer") from None

    def confusion_matrix(self) -> np.ndarray:
        if self.confusion is not None:
            return np.array(self.confusion, dtype=float)
        return build_confusion_matrix(self.recall, self.priors, self.beta, self.policy)

    def model(self) -> RecognizerModel:
        return RecognizerModel(
            confusion=self.confusion_matrix(),
            window_len=self.window_len,
            frame_rate=self.frame_rate,
            no_assembly_scale=self.no_assembly_scale,
            epsilon=self.epsilon,
            trained_frame_rate=self.trained_frame_rate,
            rate_slope=self.rate_slope,
        )


@dataclass(frozen=True)
class LatencyConfig:
    """Fixed transport delays (s) on the perception -> controller and controller -> gripper links."""

    percept_to_fsm: float = 0.0
    command: float = 0.0

    def __post_init__(self):
        if self.percept_to_fsm < 0 or self.command < 0:
            raise ConfigError("latencies must be >= 0", "latency")


TASKS = ("assembly", "handover")
FAILURE_POLICIES = ("abort", "continue")


@dataclass(frozen=True)
class EpisodeConfig:
    seed: int = 0
    task: str = "assembly"
    legs: int = 4
    episode_timeout: float = 600.0
    failure_policy: str = "abort"
    record_servo: bool = True
    dump_grids: bool = False
    servo: ServoConfig = field(default_factory=ServoConfig)
    recognizer: RecognizerConfig = field(default_factory=RecognizerConfig)
    human: HumanConfig = field(default_factory=HumanConfig)
    fsm: FsmConfig = field(default_factory=FsmConfig)
    scene: SceneConfig = field(default_factory=SceneConfig)
    latency: LatencyConfig = field(default_factory=LatencyConfig)

    def __post_init__(self):
        if self.task not in TASKS:
            raise ConfigError(f"task must be one of {TASKS}, got {self.task!r}", "task")
        if self.failure_policy not in FAILURE_POLICIES:
            raise ConfigError(f"failure_policy must be one of {FAILURE_POLICIES}", "failure_policy")
        if not 1 <= self.legs <= 4:
            raise ConfigError(f"legs must lie in 1..4, got {self.legs}", "legs")
        if not self.episode_timeout > 0:
            raise ConfigError("episode_timeout must be > 0", "episode_timeout")

    def with_mode(self, mode: str) -> EpisodeConfig:
        return replace(self, human=replace(self.human, mode=mode))

    def with_seed(self, seed: int) -> EpisodeConfig:
        return replace(self, seed=int(seed))

    @classmethod
    def oracle(cls, seed: int = 0, **kw) -> EpisodeConfig:
        """Fault-free settings: perfect recognizer, noise-free servo, certain grasps."""
        identity = tuple(tuple(1.0 if i == j else 0.0 for j in range(8)) for i in range(8))
        return cls(
            seed=seed,
            servo=ServoConfig(sigma_value=0.0, sigma_control=0.0, p_mech=1.0),
            recognizer=RecognizerConfig(confusion=identity),
            human=HumanConfig(atypical_probability=0.0),
            **kw,
        )

    def to_dict(self) -> dict[str, Any]:
        return to_dict(self)

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> EpisodeConfig:
        return from_dict(cls, data)


# --- generic conversion ---------------------------------------------------


def to_dict(obj: Any) -> Any:
    if is_dataclass(obj) and not isinstance(obj, type):
        return {f.name: to_dict(getattr(obj, f.name)) for f in fields(obj)}
    if isinstance(obj, Enum):
        return obj.value
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (list, tuple)):
        return [to_dict(v) for v in obj]
    if isinstance(obj, dict):
        return {str(k): to_dict(v) for k, v in obj.items()}
    if isinstance(obj, np.generic):
        return obj.item()
    return obj


def _join(path: str, key: str) -> str:
    return f"{path}.{key}" if path else key


def _coerce(tp: Any, value: Any, path: str) -> Any:
    origin = typing.get_origin(tp)
    args = typing.get_args(tp)
    if origin in (typing.Union, types.UnionType):
        if value is None and type(None) in args:
            return None
        last: Exception | None = None
        for arg in args:
            if arg is type(None):
                continue
            try:
                return _coerce(arg, value, path)
            except ConfigError as exc:
                last = exc
        raise last or ConfigError(f"bad value at '{path}'", path)
    if isinstance(tp, type) and is_dataclass(tp):
        if not isinstance(value, dict):
            raise ConfigError(f"'{path}' must be an object", path)
        return from_dict(tp, value, path)
    if origin is tuple:
        if not isinstance(value, (list, tuple)):
            raise ConfigError(f"'{path}' must be a list", path)
        if len(args) == 2 and args[1] is Ellipsis:
            return tuple(_coerce(args[0], v, f"{path}[{i}]") for i, v in enumerate(value))
        if len(args) != len(value):
            raise ConfigError(f"'{path}' must have {len(args)} entries", path)
        return tuple(_coerce(a, v, f"{path}[{i}]") for i, (a, v) in enumerate(zip(args, value)))
    if origin is dict:
        if not isinstance(value, dict):
            raise ConfigError(f"'{path}' must be an object", path)
        return {str(k): _coerce(args[1], v, _join(path, str(k))) for k, v in value.items()}
    if tp is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"'{path}' must be a number, got {value!r}", path)
        return float(value)
    if tp is int:
        if isinstance(value, bool) or not isinstance(value, int):
            if isinstance(value, float) and value.is_integer():
                return int(value)
            raise ConfigError(f"'{path}' must be an integer, got {value!r}", path)
        return value
    if tp is bool:
        if not isinstance(value, bool):
            raise ConfigError(f"'{path}' must be true/false, got {value!r}", path)
        return value
    if tp is str:
        if not isinstance(value, str):
            raise ConfigError(f"'{path}' must be a string, got {value!r}", path)
        return value
    return value


def from_dict(cls: type, data: dict[str, Any], path: str = "") -> Any:
    """Build dataclass ``cls`` from plain data; unknown keys are rejected by dotted path."""
    if not isinstance(data, dict):
        raise ConfigError(f"'{path or '<root>'}' must be an object", path or None)
    hints = typing.get_type_hints(cls)
    names = {f.name for f in fields(cls) if f.init}
    for key in data:
        if key not in names:
            where = _join(path, key)
            raise ConfigError(f"unknown config key '{where}'", where)
    kwargs = {k: _coerce(hints[k], v, _join(path, k)) for k, v in data.items()}
    try:
        return cls(**kwargs)
    except ConfigError as exc:
        key = exc.key
        if key and path and not key.startswith(path):
            key = _join(path, key.split(".", 1)[-1]) if "." in key else _join(path, key)
        raise ConfigError(str(exc), key or path or None) from None
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid '{path or '<root>'}': {exc}", path or None) from None


def apply_overrides(data: dict[str, Any], overrides: list[str]) -> dict[str, Any]:
    """Apply ``dotted.key=value`` overrides; values parse as JSON, else stay strings."""
    out = json.loads(json.dumps(data))
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not key=value", item)
        key, raw = item.split("=", 1)
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw
        node = out
        parts = key.strip().split(".")
        for p in parts[:-1]:
            nxt = node.get(p)
            if nxt is None:
                nxt = node[p] = {}
            if not isinstance(nxt, dict):
                raise ConfigError(f"cannot override inside non-object '{p}'", key)
            node = nxt
        node[parts[-1]] = value
    return out


def default_config_dict() -> dict[str, Any]:
    return to_dict(EpisodeConfig())


__all__ = [
    "SceneConfig",
    "RecognizerConfig",
    "LatencyConfig",
    "EpisodeConfig",
    "LogNormal",
    "to_dict",
    "from_dict",
    "apply_overrides",
    "default_config_dict",
]
