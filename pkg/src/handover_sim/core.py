"""Shared vocabulary: actions, robot states, simulation time, scene and events."""

from __future__ import annotations

import zlib
from dataclasses import dataclass, field, replace
from enum import Enum, IntEnum
from fractions import Fraction
from functools import lru_cache
from typing import Any

import numpy as np

SCHEMA_VERSION = 1

US_PER_S = 1_000_000


class ContractViolation(RuntimeError):
    """A caller broke an operation's precondition (a driver bug, never data)."""


class ConfigError(ValueError):
    """Invalid configuration; ``key`` names the offending dotted path when known."""

    def __init__(self, message: str, key: str | None = None):
        super().__init__(message)
        self.key = key


class _Named:
    """Stable lower_snake_case names for trace and config serialization."""

    @property
    def key(self) -> str:
        return self.name.lower()  # type: ignore[attr-defined]

    @classmethod
    def parse(cls, value):
        if isinstance(value, cls):
            return value
        try:
            return cls[str(value).upper()]  # type: ignore[index]
        except KeyError:
            raise ValueError(f"unknown {cls.__name__} name: {value!r}") from None


class AtomicAction(_Named, IntEnum):
    NO_ASSEMBLY_ACTION = 0
    REACH = 1
    FLIP_TABLETOP = 2
    FLIP_TABLE = 3
    SPIN_LEG = 4
    ALIGN_LEG = 5
    ROTATE_TABLE = 6
    HUMAN_GRASP = 7


N_ACTIONS = len(AtomicAction)


class RobotFsmState(_Named, Enum):
    HOME = "home"
    REACH_AND_GRASP = "reach_and_grasp"
    PASS = "pass"
    IDLE = "idle"
    HANDOVER = "handover"
    FINISHED = "finished"


class EventKind(_Named, Enum):
    FSM_TRANSITION = "fsm_transition"
    ACTION_PREDICTED = "action_predicted"
    TRUE_HUMAN_ACTION = "true_human_action"
    SERVO_COMMAND = "servo_command"
    GRASP_ATTEMPT = "grasp_attempt"
    RELEASE = "release"
    HUMAN_RETRY = "human_retry"
    VOICE_COMMAND = "voice_command"
    CYCLE_END = "cycle_end"
    EPISODE_END = "episode_end"


# --- time -----------------------------------------------------------------


def to_us(seconds: float) -> int:
    return int(round(seconds * US_PER_S))


def to_seconds(us: int) -> float:
    return us / US_PER_S


def tick_time_us(index: int, rate_hz: float) -> int:
    """Exact start time of tick ``index`` on a ``rate_hz`` grid.

    Computed from the index, never accumulated, so long runs cannot drift.
    Rates whose period is not a whole number of microseconds (30 Hz) land on
    the floor of the exact rational time.
    """
    num, den = _rate_fraction(rate_hz)
    return (index * US_PER_S * den) // num


@lru_cache(maxsize=256)
def _rate_fraction(rate_hz: float) -> tuple[int, int]:
    rate = Fraction(rate_hz).limit_denominator(1_000_000)
    return rate.numerator, rate.denominator


def next_tick_index(now_us: int, rate_hz: float) -> int:
    """Smallest tick index whose time is strictly after ``now_us``."""
    num, den = _rate_fraction(rate_hz)
    i = (now_us * num) // (US_PER_S * den)
    while tick_time_us(i, rate_hz) <= now_us:
        i += 1
    return i


# --- randomness -----------------------------------------------------------

_SEED_MASK = (1 << 64) - 1


def _label_key(label: str) -> int:
    return zlib.crc32(label.encode("utf-8"))


def seeded_rng(seed: int, label: str | None = None, *keys: int) -> np.random.Generator:
    """Deterministic PCG64 stream for ``seed``.

    ``label`` (and optional integer ``keys``) select an independent sub-stream,
    so each module draws from its own stream and adding draws in one module
    never shifts another's.
    """
    spawn_key: tuple[int, ...] = ()
    if label is not None:
        spawn_key = (_label_key(label), *(int(k) for k in keys))
    ss = np.random.SeedSequence(int(seed) & _SEED_MASK, spawn_key=spawn_key)
    return np.random.Generator(np.random.PCG64(ss))


class UniformBuffer:
    """Block-buffered U(0,1) draws from a generator; scalar draws without numpy call overhead."""

    def __init__(self, rng: np.random.Generator, block: int = 1024):
        self._rng = rng
        self._block = block
        self._buf: list[float] = []
        self._i = 0

    def __call__(self) -> float:
        if self._i >= len(self._buf):
            self._buf = self._rng.random(self._block).tolist()
            self._i = 0
        u = self._buf[self._i]
        self._i += 1
        return u


class NormalBuffer:
    """Block-buffered standard normal draws, handed out as Python floats."""

    def __init__(self, rng: np.random.Generator, block: int = 4096):
        self._rng = rng
        self._block = block
        self._buf: list[float] = []
        self._i = 0

    def take(self, n: int) -> list[float]:
        if self._i + n > len(self._buf):
            rest = self._buf[self._i:]
            self._buf = rest + self._rng.standard_normal(max(self._block, n)).tolist()
            self._i = 0
        out = self._buf[self._i:self._i + n]
        self._i += n
        return out


# --- scene ----------------------------------------------------------------


@dataclass(frozen=True)
class Box:
    lo: tuple[float, float, float]
    hi: tuple[float, float, float]

    def contains(self, p, tol: float = 1e-12) -> bool:
        return all(self.lo[i] - tol <= p[i] <= self.hi[i] + tol for i in range(3))


@dataclass(frozen=True)
class Part:
    id: int
    position: tuple[float, float, float]
    orientation: float = 0.0
    attached: bool = False


@dataclass(frozen=True)
class Scene:
    """Planar tabletop: parts rest at table height, the end effector is a point.

    ``holding`` is the id of the gripped part, or None when the gripper is open.
    """

    parts: tuple[Part, ...]
    ee_pose: tuple[float, float, float]
    workspace_bounds: Box
    holding: int | None = None

    def __post_init__(self):
        for p in self.parts:
            if not p.attached and not self.workspace_bounds.contains(p.position):
                raise ContractViolation(f"part {p.id} at {p.position} outside workspace")
        if self.holding is not None and not any(
            p.id == self.holding and p.attached for p in self.parts
        ):
            raise ContractViolation(f"holding part {self.holding} which is not attached")

    @property
    def gripper_open(self) -> bool:
        return self.holding is None

    def unattached(self) -> tuple[Part, ...]:
        return tuple(p for p in self.parts if not p.attached)

    def part(self, part_id: int) -> Part:
        for p in self.parts:
            if p.id == part_id:
                return p
        raise KeyError(part_id)

    def with_part(self, part: Part) -> Scene:
        parts = tuple(part if p.id == part.id else p for p in self.parts)
        return replace(self, parts=parts)

    def with_ee(self, ee) -> Scene:
        return replace(self, ee_pose=(float(ee[0]), float(ee[1]), float(ee[2])))


# --- events ---------------------------------------------------------------


@dataclass(frozen=True)
class SimEvent:
    time_us: int
    seq: int
    kind: EventKind
    payload: dict[str, Any] = field(default_factory=dict)

    @property
    def time(self) -> float:
        return to_seconds(self.time_us)

    def to_dict(self) -> dict[str, Any]:
        return {"t_us": self.time_us, "seq": self.seq, "kind": self.kind.value, **self.payload}

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> SimEvent:
        data = dict(data)
        t = data.pop("t_us")
        seq = data.pop("seq")
        kind = EventKind(data.pop("kind"))
        return cls(int(t), int(seq), kind, data)

    def sort_key(self) -> tuple[int, int]:
        return (self.time_us, self.seq)


__all__ = [
    "SCHEMA_VERSION",
    "AtomicAction",
    "N_ACTIONS",
    "RobotFsmState",
    "EventKind",
    "ContractViolation",
    "ConfigError",
    "to_us",
    "to_seconds",
    "tick_time_us",
    "next_tick_index",
    "seeded_rng",
    "UniformBuffer",
    "NormalBuffer",
    "Box",
    "Part",
    "Scene",
    "SimEvent",
]
