"""Stochastic model of the human assembler.

Per leg: wait for the robot to present a part, reach, grasp and hold until the
robot lets go (or give up after a timeout and possibly try again), then
align and spin the leg in, optionally rotate the tabletop. The table is
flipped once after the last leg.

All random draws for a cycle come from one labelled stream and are taken in a
fixed order whether or not they get used. The vision and voice modes therefore
see the same human (common random numbers).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path

import numpy as np

from .core import AtomicAction, ConfigError, EventKind, RobotFsmState, _Named, seeded_rng, to_us

A = AtomicAction

# Calibrated: share of grasp attempts whose motion the recognizer cannot make
# out, chosen so a single attempt is released 85.1% of the time at default
# recognizer settings. Re-derive with calibration.calibrate_atypical_probability().
DEFAULT_ATYPICAL_PROBABILITY = 0.1478
# Calibrated: voice-command release delay median giving a 0.5 s mean gap over
# the default vision handover time. Re-derive with calibration.voice_median_for_gap().
DEFAULT_VOICE_MEDIAN = 1.770


class HumanMode(_Named, Enum):
    VISION = "vision"
    VOICE = "voice"


class HumanPhase(_Named, Enum):
    WAITING_FOR_ROBOT = "waiting_for_robot"
    REACHING = "reaching"
    GRASPING = "grasping"
    ASSEMBLING = "assembling"
    ROTATING = "rotating"
    FLIPPING = "flipping"
    GAVE_UP = "gave_up"
    DONE = "done"


@dataclass(frozen=True)
class LogNormal:
    """Log-normal given by its median (s) and log-space standard deviation."""

    median: float
    dispersion: float = 0.0

    def __post_init__(self):
        if not self.median > 0:
            raise ConfigError(f"median must be > 0, got {self.median}")
        if self.dispersion < 0:
            raise ConfigError(f"dispersion must be >= 0, got {self.dispersion}")

    def sample(self, rng: np.random.Generator) -> float:
        z = rng.standard_normal()
        return self.median * math.exp(self.dispersion * z)

    @property
    def mean(self) -> float:
        return self.median * math.exp(0.5 * self.dispersion**2)


def _default_durations() -> dict[str, LogNormal]:
    # Plausible magnitudes only; nothing downstream depends on their exact values.
    return {
        A.REACH.key: LogNormal(1.5, 0.2),
        A.ALIGN_LEG.key: LogNormal(4.0, 0.25),
        A.SPIN_LEG.key: LogNormal(8.0, 0.25),
        A.ROTATE_TABLE.key: LogNormal(3.0, 0.25),
        A.FLIP_TABLE.key: LogNormal(5.0, 0.2),
        A.FLIP_TABLETOP.key: LogNormal(5.0, 0.2),
    }


@dataclass(frozen=True)
class HumanConfig:
    durations: dict[str, LogNormal] = field(default_factory=_default_durations)
    p_retry: float = 0.68
    retry_timeout: float = 4.0
    rotate_probability: float = 0.5
    mode: str = "vision"
    voice_delay: LogNormal = field(default_factory=lambda: LogNormal(DEFAULT_VOICE_MEDIAN, 0.2))
    atypical_probability: float = DEFAULT_ATYPICAL_PROBABILITY
    max_handover_attempts: int = 2
    deterministic: bool = False
    start_delay: float = 2.0
    script: tuple[tuple[str, float], ...] | None = None

    def __post_init__(self):
        for name in ("p_retry", "rotate_probability", "atypical_probability"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ConfigError(f"human.{name} must lie in [0, 1], got {v}", f"human.{name}")
        if self.retry_timeout <= 0:
            raise ConfigError("human.retry_timeout must be > 0", "human.retry_timeout")
        if self.max_handover_attempts < 1:
            raise ConfigError("human.max_handover_attempts must be >= 1", "human.max_handover_attempts")
        if self.start_delay < 0:
            raise ConfigError("human.start_delay must be >= 0", "human.start_delay")
        try:
            HumanMode.parse(self.mode)
        except ValueError as exc:
            raise ConfigError(str(exc), "human.mode") from None
        for key in self.durations:
            try:
                A.parse(key)
            except ValueError:
                raise ConfigError(f"unknown action in human.durations: {key!r}", f"human.durations.{key}") from None
        if self.script is not None:
            for i, (action, dur) in enumerate(self.script):
                try:
                    A.parse(action)
                except ValueError:
                    raise ConfigError(f"unknown action {action!r}", f"human.script[{i}]") from None
                if not dur > 0:
                    raise ConfigError("scripted durations must be > 0", f"human.script[{i}]")

    @property
    def human_mode(self) -> HumanMode:
        return HumanMode.parse(self.mode)


def sample_duration(action: AtomicAction, cfg: HumanConfig, rng: np.random.Generator) -> float:
    """Positive duration for ``action``; the median in deterministic mode."""
    dist = cfg.durations.get(action.key)
    if dist is None:
        raise ConfigError(f"no duration distribution for {action.key!r}", f"human.durations.{action.key}")
    if cfg.deterministic:
        return dist.median
    return dist.sample(rng)


@dataclass(frozen=True)
class CyclePlan:
    """Every draw one leg cycle can need, taken up front in a fixed order."""

    reach: tuple[float, ...]
    atypical_u: tuple[float, ...]
    retry_u: tuple[float, ...]
    voice_delay: tuple[float, ...]
    align: float
    spin: float
    rotate: bool
    rotate_duration: float
    flip_table: float
    flip_tabletop: float


class SampledPlanner:
    def __init__(self, cfg: HumanConfig, seed: int):
        self.cfg = cfg
        self.seed = seed
        self._cache: dict[int, CyclePlan] = {}

    def plan(self, cycle: int) -> CyclePlan:
        if cycle not in self._cache:
            self._cache[cycle] = self._draw(cycle)
        return self._cache[cycle]

    def _draw(self, cycle: int) -> CyclePlan:
        cfg = self.cfg
        rng = seeded_rng(self.seed, "human", cycle)
        n = cfg.max_handover_attempts
        reach = tuple(sample_duration(A.REACH, cfg, rng) for _ in range(n))
        atypical_u = tuple(rng.random(n).tolist())
        retry_u = tuple(rng.random(n).tolist())
        align = sample_duration(A.ALIGN_LEG, cfg, rng)
        spin = sample_duration(A.SPIN_LEG, cfg, rng)
        rotate = bool(rng.random() < cfg.rotate_probability)
        rotate_duration = sample_duration(A.ROTATE_TABLE, cfg, rng)
        flip_table = sample_duration(A.FLIP_TABLE, cfg, rng)
        flip_tabletop = sample_duration(A.FLIP_TABLETOP, cfg, rng)
        vrng = seeded_rng(self.seed, "voice", cycle)
        if cfg.deterministic:
            voice = tuple(cfg.voice_delay.median for _ in range(n))
        else:
            voice = tuple(cfg.voice_delay.sample(vrng) for _ in range(n))
        return CyclePlan(reach, atypical_u, retry_u, voice, align, spin, rotate,
                         rotate_duration, flip_table, flip_tabletop)


class ScriptedPlanner(SampledPlanner):
    """Replays fixed (action, duration) pairs in order instead of sampling durations.

    A ``rotate_table`` entry right after a ``spin_leg`` entry means the human
    rotates in that cycle. Retry and recognition-difficulty draws still come
    from the seeded stream.
    """

    def __init__(self, cfg: HumanConfig, seed: int, script):
        super().__init__(cfg, seed)
        self._queue = [(A.parse(a), float(d)) for a, d in script]
        self._pos = 0

    def _take(self, action: AtomicAction) -> float:
        if self._pos >= len(self._queue):
            raise ConfigError(f"human script exhausted while looking for {action.key!r}", "human.script")
        got, dur = self._queue[self._pos]
        if got is not action:
            raise ConfigError(
                f"human script entry {self._pos} is {got.key!r}, expected {action.key!r}", "human.script"
            )
        self._pos += 1
        return dur

    def _peek(self) -> AtomicAction | None:
        return self._queue[self._pos][0] if self._pos < len(self._queue) else None

    def take_reach(self) -> float:
        return self._take(A.REACH)

    def take(self, action: AtomicAction) -> float:
        return self._take(action)

    def next_is(self, action: AtomicAction) -> bool:
        return self._peek() is action


def make_planner(cfg: HumanConfig, seed: int) -> SampledPlanner:
    if cfg.script is not None:
        return ScriptedPlanner(cfg, seed, cfg.script)
    return SampledPlanner(cfg, seed)


def load_script(path: str | Path) -> tuple[tuple[str, float], ...]:
    data = json.loads(Path(path).read_text(encoding="utf-8"))
    out = []
    for i, item in enumerate(data):
        if isinstance(item, dict):
            action, dur = item["action"], item["duration"]
        else:
            action, dur = item
        out.append((A.parse(action).key, float(dur)))
    return tuple(out)


@dataclass(frozen=True)
class HumanState:
    phase: HumanPhase
    current_action: AtomicAction
    phase_deadline_us: int
    legs_assembled: int
    legs_total: int = 4
    cycle: int = 1
    attempt: int = 0
    atypical: bool = False
    pending: tuple[tuple[HumanPhase, AtomicAction, float], ...] = ()

    @property
    def apparent_action(self) -> AtomicAction:
        """What the camera effectively shows: an atypical grasp looks like no assembly action."""
        if self.phase is HumanPhase.GRASPING and self.atypical:
            return A.NO_ASSEMBLY_ACTION
        return self.current_action

    @property
    def can_receive(self) -> bool:
        return self.phase in (HumanPhase.REACHING, HumanPhase.GRASPING, HumanPhase.GAVE_UP)

    @property
    def busy(self) -> bool:
        return self.phase not in (HumanPhase.WAITING_FOR_ROBOT, HumanPhase.DONE)


Emit = tuple[EventKind, dict]


def initial_state(cfg: HumanConfig, planner: SampledPlanner, legs: int, task: str) -> tuple[HumanState, list[Emit]]:
    if task == "handover":
        state = HumanState(HumanPhase.WAITING_FOR_ROBOT, A.NO_ASSEMBLY_ACTION,
                           to_us(cfg.start_delay), 0, legs)
        return state, [(EventKind.TRUE_HUMAN_ACTION, _action_payload(state))]
    if isinstance(planner, ScriptedPlanner):
        flip = planner.take(A.FLIP_TABLETOP)
    else:
        flip = planner.plan(0).flip_tabletop
    state = HumanState(HumanPhase.FLIPPING, A.FLIP_TABLETOP, to_us(flip), 0, legs)
    return state, [(EventKind.TRUE_HUMAN_ACTION, _action_payload(state))]


def _action_payload(state: HumanState) -> dict:
    return {"action": state.current_action.key, "phase": state.phase.key, "cycle": state.cycle}


def _enter(state: HumanState, phase: HumanPhase, action: AtomicAction, deadline_us: int, **kw) -> tuple[HumanState, list[Emit]]:
    new = replace(state, phase=phase, current_action=action, phase_deadline_us=deadline_us, **kw)
    events: list[Emit] = []
    if new.current_action is not state.current_action or new.phase is not state.phase:
        events.append((EventKind.TRUE_HUMAN_ACTION, _action_payload(new)))
    return new, events


def _reach_duration(planner: SampledPlanner, cycle: int, attempt: int) -> float:
    if isinstance(planner, ScriptedPlanner):
        return planner.take_reach()
    return planner.plan(cycle).reach[attempt - 1]


def receive_part(state: HumanState, planner: SampledPlanner, now_us: int) -> tuple[HumanState, list[Emit]]:
    """The part reaches the human's hand: start aligning the leg."""
    if isinstance(planner, ScriptedPlanner):
        align = planner.take(A.ALIGN_LEG)
        spin = planner.take(A.SPIN_LEG)
    else:
        p = planner.plan(state.cycle)
        align, spin = p.align, p.spin
    state = replace(state, pending=((HumanPhase.ASSEMBLING, A.SPIN_LEG, spin),))
    return _enter(state, HumanPhase.ASSEMBLING, A.ALIGN_LEG, now_us + to_us(align), atypical=False)


def _after_spin(state: HumanState, cfg: HumanConfig, planner: SampledPlanner, now_us: int) -> tuple[HumanState, list[Emit]]:
    legs = state.legs_assembled + 1
    state = replace(state, legs_assembled=legs)
    scripted = isinstance(planner, ScriptedPlanner)
    if legs >= state.legs_total:
        flip = planner.take(A.FLIP_TABLE) if scripted else planner.plan(state.cycle).flip_table
        return _enter(state, HumanPhase.FLIPPING, A.FLIP_TABLE, now_us + to_us(flip))
    nxt = replace(state, cycle=state.cycle + 1, attempt=0)
    if scripted:
        rotate = planner.next_is(A.ROTATE_TABLE)
        dur = planner.take(A.ROTATE_TABLE) if rotate else 0.0
    else:
        p = planner.plan(state.cycle)
        rotate, dur = p.rotate, p.rotate_duration
    if rotate:
        return _enter(nxt, HumanPhase.ROTATING, A.ROTATE_TABLE, now_us + to_us(dur))
    return _enter(nxt, HumanPhase.WAITING_FOR_ROBOT, A.NO_ASSEMBLY_ACTION, now_us)


def human_tick(
    state: HumanState,
    robot_state: RobotFsmState,
    cfg: HumanConfig,
    planner: SampledPlanner,
    now_us: int,
) -> tuple[HumanState, AtomicAction, list[Emit]]:
    """Advance the scripted cycle by one recognition tick.

    Returns the new state, the true action now being performed, and event
    drafts (kind, payload) for the engine to timestamp.
    """
    events: list[Emit] = []
    ph = state.phase
    vision = cfg.mode == HumanMode.VISION.value

    if ph is HumanPhase.FLIPPING and now_us >= state.phase_deadline_us:
        if state.legs_assembled >= state.legs_total:
            state, ev = _enter(state, HumanPhase.DONE, A.NO_ASSEMBLY_ACTION, now_us)
        else:
            state, ev = _enter(state, HumanPhase.WAITING_FOR_ROBOT, A.NO_ASSEMBLY_ACTION, now_us)
        events += ev
        ph = state.phase

    if ph is HumanPhase.ROTATING and now_us >= state.phase_deadline_us:
        state, ev = _enter(state, HumanPhase.WAITING_FOR_ROBOT, A.NO_ASSEMBLY_ACTION, now_us)
        events += ev
        ph = state.phase

    if ph is HumanPhase.ASSEMBLING and now_us >= state.phase_deadline_us:
        if state.pending:
            (nph, nact, dur), rest = state.pending[0], state.pending[1:]
            state, ev = _enter(replace(state, pending=rest), nph, nact, now_us + to_us(dur))
        else:
            state, ev = _after_spin(state, cfg, planner, now_us)
        events += ev
        ph = state.phase
        if ph is HumanPhase.ASSEMBLING and now_us >= state.phase_deadline_us:  # pragma: no cover
            state, ev = _after_spin(state, cfg, planner, now_us)
            events += ev
            ph = state.phase

    if ph is HumanPhase.WAITING_FOR_ROBOT and now_us >= state.phase_deadline_us:
        if robot_state is RobotFsmState.IDLE:
            reach = _reach_duration(planner, state.cycle, 1)
            state, ev = _enter(state, HumanPhase.REACHING, A.REACH, now_us + to_us(reach), attempt=1)
            events += ev
            ph = state.phase

    elif ph is HumanPhase.REACHING and now_us >= state.phase_deadline_us:
        plan = planner.plan(state.cycle)
        k = state.attempt - 1
        atypical = vision and plan.atypical_u[k] < cfg.atypical_probability
        deadline = now_us + to_us(cfg.retry_timeout) if vision else 2**62
        state, ev = _enter(state, HumanPhase.GRASPING, A.HUMAN_GRASP, deadline, atypical=atypical)
        events += ev
        if not vision:
            events.append((EventKind.VOICE_COMMAND, {
                "cycle": state.cycle, "attempt": state.attempt, "delay_s": plan.voice_delay[k],
            }))

    elif ph is HumanPhase.GRASPING and now_us >= state.phase_deadline_us:
        plan = planner.plan(state.cycle)
        k = state.attempt - 1
        if state.attempt < cfg.max_handover_attempts and plan.retry_u[k] < cfg.p_retry:
            events.append((EventKind.HUMAN_RETRY, {"cycle": state.cycle, "attempt": state.attempt + 1}))
            reach = _reach_duration(planner, state.cycle, state.attempt + 1)
            state, ev = _enter(state, HumanPhase.REACHING, A.REACH, now_us + to_us(reach),
                               attempt=state.attempt + 1, atypical=False)
        else:
            state, ev = _enter(state, HumanPhase.GAVE_UP, A.NO_ASSEMBLY_ACTION, now_us, atypical=False)
        events += ev

    return state, state.current_action, events
