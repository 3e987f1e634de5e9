"""Discrete-event episode loop, batch runners and JSON Lines trace I/O.

One episode wires the modules together on an integer-microsecond clock:
recognition and human ticks share the camera frame grid, servo ticks run on
their own grid while the robot is reaching, and motions and grasps complete
as scheduled one-off events. Callbacks at equal times run in insertion order.
"""

from __future__ import annotations

import heapq
import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Callable, Iterable

import numpy as np

from .config import EpisodeConfig
from .core import (
    SCHEMA_VERSION,
    AtomicAction,
    Box,
    ContractViolation,
    EventKind,
    NormalBuffer,
    Part,
    RobotFsmState,
    Scene,
    SimEvent,
    next_tick_index,
    seeded_rng,
    tick_time_us,
    to_us,
)
from .fsm import FsmInputs, HandoverTrigger, fsm_step, handover_trigger_update
from .human import HumanMode, HumanPhase, human_tick, initial_state, make_planner, receive_part
from .percept import SlidingWindowRecognizer
from .servo import ServoField, execute_grasp, grasp_duration, render_lyapunov_grid, grid_to_json, step_ee

S = RobotFsmState
K = EventKind

TRACE_SCHEMA = "handover_sim.trace"
FULL_SUCCESS = "full_success"
FAILED = "failed"
_ACTION_KEYS = tuple(a.key for a in AtomicAction)


@dataclass(frozen=True)
class Outcome:
    kind: str
    reason: str | None = None
    at_cycle: int | None = None

    @property
    def succeeded(self) -> bool:
        return self.kind == FULL_SUCCESS

    def to_dict(self) -> dict[str, Any]:
        return {"outcome": self.kind, "reason": self.reason, "at_cycle": self.at_cycle}


@dataclass(frozen=True)
class EpisodeTrace:
    config: EpisodeConfig
    events: tuple[SimEvent, ...]
    outcome: Outcome
    grid_dumps: tuple[str, ...] = ()

    @property
    def cycle_boundaries(self) -> list[tuple[int, int, int]]:
        """(cycle, start_us, end_us) per finished cycle, start = previous cycle end."""
        out = []
        start = 0
        for ev in self.events:
            if ev.kind is K.CYCLE_END:
                out.append((ev.payload["cycle"], start, ev.time_us))
                start = ev.time_us
        return out

    def of_kind(self, kind: EventKind) -> list[SimEvent]:
        return [e for e in self.events if e.kind is kind]

    def to_jsonl(self) -> str:
        header = {"schema": TRACE_SCHEMA, "schema_version": SCHEMA_VERSION, "config": self.config.to_dict()}
        lines = [json.dumps(header, separators=(",", ":"))]
        lines.extend(json.dumps(e.to_dict(), separators=(",", ":")) for e in self.events)
        return "\n".join(lines) + "\n"

    @classmethod
    def from_jsonl(cls, text: str) -> EpisodeTrace:
        rows = [json.loads(line) for line in text.splitlines() if line.strip()]
        if not rows or rows[0].get("schema") != TRACE_SCHEMA:
            raise ValueError("not a trace file: missing schema header")
        if rows[0].get("schema_version") != SCHEMA_VERSION:
            raise ValueError(f"unsupported trace schema_version {rows[0].get('schema_version')!r}")
        cfg = EpisodeConfig.from_dict(rows[0]["config"])
        events = tuple(SimEvent.from_dict(r) for r in rows[1:])
        end = [e for e in events if e.kind is K.EPISODE_END]
        if not end:
            raise ValueError("trace has no episode_end event")
        p = end[-1].payload
        return cls(cfg, events, Outcome(p["outcome"], p.get("reason"), p.get("at_cycle")))


def write_trace(trace: EpisodeTrace, path: str | Path) -> None:
    Path(path).write_text(trace.to_jsonl(), encoding="utf-8")


def read_trace(path: str | Path) -> EpisodeTrace:
    return EpisodeTrace.from_jsonl(Path(path).read_text(encoding="utf-8"))


# --- scene setup ----------------------------------------------------------


def initial_scene(cfg: EpisodeConfig, rng: np.random.Generator) -> Scene:
    """Scatter ``legs`` parts over the storage area, at least ``part_spacing`` apart."""
    sc = cfg.scene
    r = cfg.servo.part_radius
    lo = np.array(sc.storage_lo[:2]) + r
    hi = np.array(sc.storage_hi[:2]) - r
    if np.any(lo >= hi):
        raise ContractViolation("storage area smaller than one part")
    n = 1 if cfg.task == "handover" else cfg.legs
    pos: list[np.ndarray] = []
    for _ in range(10_000):
        if len(pos) == n:
            break
        p = rng.uniform(lo, hi)
        if all(np.hypot(*(p - q)) >= sc.part_spacing for q in pos):
            pos.append(p)
    if len(pos) < n:
        raise ContractViolation("could not place parts with the requested spacing")
    bounds = Box(tuple(sc.storage_lo), tuple(sc.storage_hi))
    parts = tuple(
        Part(i, (float(p[0]), float(p[1]), sc.table_height), float(rng.uniform(-math.pi, math.pi)))
        for i, p in enumerate(pos)
    )
    if cfg.task == "handover":
        parts = (replace(parts[0], attached=True),)
        return Scene(parts, tuple(sc.delivery_point), bounds, holding=0)
    return Scene(parts, tuple(sc.home_pose), bounds)


def _travel_us(a, b, speed: float) -> int:
    return to_us(math.dist(a, b) / speed)


# --- the episode loop -----------------------------------------------------


class _Episode:
    def __init__(self, cfg: EpisodeConfig):
        self.cfg = cfg
        seed = cfg.seed
        self.events: list[SimEvent] = []
        self.grids: list[str] = []
        self.now = 0
        self.done = False
        self._heap: list[tuple[int, int, Callable, Any]] = []
        self._order = 0
        self.outcome: Outcome | None = None

        self.servo_cfg = cfg.servo
        self.servo_noise = NormalBuffer(seeded_rng(seed, "servo"))
        self.grasp_rng = seeded_rng(seed, "grasp")
        self.recognizer = SlidingWindowRecognizer(cfg.recognizer.model(), seeded_rng(seed, "percept"))
        self.frame_rate = cfg.recognizer.frame_rate
        self.planner = make_planner(cfg.human, seed)
        self.vision = cfg.human.human_mode is HumanMode.VISION
        self.scene = initial_scene(cfg, seeded_rng(seed, "scene"))
        self.ee = self.scene.ee_pose
        self.robot = S.IDLE if cfg.task == "handover" else S.HOME
        self.trigger = HandoverTrigger(0, cfg.fsm.required_consecutive)
        self.grasp_run: list[int] = []
        self.field: ServoField | None = None
        self.grasp_target: int | None = None

        self.cycle = 1 if cfg.task == "handover" else 0
        self.attempts = 0
        self.delivered = 0
        self.first_failure: tuple[str, int] | None = None

        self.percept_lat = to_us(cfg.latency.percept_to_fsm)
        self.command_lat = to_us(cfg.latency.command)

    # scheduling ----------------------------------------------------------
    def at(self, t_us: int, fn: Callable, arg: Any = None) -> None:
        if t_us < self.now:
            raise ContractViolation("cannot schedule into the past")
        heapq.heappush(self._heap, (t_us, self._order, fn, arg))
        self._order += 1

    def emit(self, kind: EventKind, payload: dict) -> None:
        if self.done:
            raise ContractViolation("event emitted after episode_end")
        self.events.append(SimEvent(self.now, len(self.events), kind, payload))

    def transition(self, new: RobotFsmState, commands) -> None:
        if new is not self.robot:
            self.emit(K.FSM_TRANSITION, {
                "from": self.robot.value, "to": new.value,
                "commands": [c.value for c in commands], "cycle": self.cycle,
            })
            self.robot = new

    def legs_remaining(self) -> int:
        return max(0, min(4, self.cfg.legs - self.delivered))

    # run -------------------------------------------------------------------
    def run(self) -> EpisodeTrace:
        cfg = self.cfg
        self.events.append(SimEvent(0, 0, K.FSM_TRANSITION, {
            "from": None, "to": self.robot.value, "commands": [], "cycle": self.cycle,
        }))
        self.human, drafts = initial_state(cfg.human, self.planner, cfg.legs if cfg.task == "assembly" else 1, cfg.task)
        for kind, payload in drafts:
            self.emit(kind, payload)
        self.at(to_us(cfg.episode_timeout), self.on_timeout)
        self.at(tick_time_us(0, self.frame_rate), self.on_frame, 1)
        if self.robot is S.HOME:
            self.at(0, self.on_home)
        heap = self._heap
        pop = heapq.heappop
        while heap and not self.done:
            t, _, fn, arg = pop(heap)
            self.now = t
            fn(arg)
        if self.outcome is None:  # pragma: no cover - the timeout always fires
            raise ContractViolation("event queue drained without an outcome")
        return EpisodeTrace(cfg, tuple(self.events), self.outcome, tuple(self.grids))

    def finish(self, outcome: Outcome) -> None:
        self.emit(K.EPISODE_END, {
            **outcome.to_dict(), "delivered": self.delivered,
            "holding": self.scene.holding is not None,
        })
        self.outcome = outcome
        self.done = True

    def on_timeout(self, _=None) -> None:
        self.finish(Outcome(FAILED, "timeout", self.cycle))

    def check_end(self) -> None:
        if self.done or self.robot is not S.FINISHED:
            return
        if self.human.phase is HumanPhase.DONE and self.first_failure is None:
            self.finish(Outcome(FULL_SUCCESS))
        elif self.human.phase in (HumanPhase.DONE, HumanPhase.WAITING_FOR_ROBOT) and self.first_failure:
            reason, cyc = self.first_failure
            self.finish(Outcome(FAILED, reason, cyc))

    def cycle_end(self, succeeded: bool, reason: str | None = None) -> None:
        payload: dict[str, Any] = {"cycle": self.cycle, "succeeded": succeeded}
        if reason is not None:
            payload["reason"] = reason
        self.emit(K.CYCLE_END, payload)
        if not succeeded and self.first_failure is None:
            self.first_failure = (reason or "failed", self.cycle)
        if self.cfg.task == "handover":
            self.finish(Outcome(FULL_SUCCESS) if succeeded else Outcome(FAILED, reason, self.cycle))
        elif not succeeded and self.cfg.failure_policy == "abort":
            self.finish(Outcome(FAILED, reason, self.cycle))

    # camera frame: human tick, recognizer, trigger ---------------------------
    def on_frame(self, k: int) -> None:
        prev = self.human.phase
        self.human, _, drafts = human_tick(self.human, self.robot, self.cfg.human, self.planner, self.now)
        for kind, payload in drafts:
            self.emit(kind, payload)
            if kind is K.VOICE_COMMAND:
                self.at(self.now + to_us(payload["delay_s"]), self.on_voice_release,
                        (payload["cycle"], payload["attempt"]))
        if self.human.phase is HumanPhase.GAVE_UP and prev is not HumanPhase.GAVE_UP:
            self.on_refused()
            if self.done:
                return
        pred = self.recognizer.tick(k, self.human.apparent_action)
        if pred is not None:
            label = pred.label
            self.emit(K.ACTION_PREDICTED, {"frame": k, "label": _ACTION_KEYS[label]})
            if self.vision and (self.percept_lat or self.robot is S.IDLE):
                if self.percept_lat:
                    self.at(self.now + self.percept_lat, self.on_prediction, (k, label))
                else:
                    self.on_prediction((k, label))
        if not self.done:
            self.check_end()
        if not self.done:
            self.at(tick_time_us(k, self.frame_rate), self.on_frame, k + 1)

    def on_prediction(self, item: tuple[int, AtomicAction]) -> None:
        if self.done or self.robot is not S.IDLE or self.scene.holding is None:
            return
        frame, label = item
        self.trigger, fire = handover_trigger_update(self.trigger, label)
        if label is AtomicAction.HUMAN_GRASP:
            self.grasp_run.append(frame)
        else:
            self.grasp_run = []
        if fire:
            n = self.trigger.required
            self.release("trigger", {"count": self.trigger.consecutive_grasp_count,
                                     "frames": self.grasp_run[-n:]})

    def on_voice_release(self, item: tuple[int, int]) -> None:
        cycle, attempt = item
        h = self.human
        if self.done or self.robot is not S.IDLE or self.scene.holding is None:
            return
        if h.phase is HumanPhase.GRASPING and h.cycle == cycle and h.attempt == attempt:
            self.release("voice", {"attempt": attempt})

    # handover --------------------------------------------------------------
    def release(self, source: str, info: dict) -> None:
        new, cmds = fsm_step(self.robot, FsmInputs(release_trigger=True, legs_remaining=self.legs_remaining()))
        self.transition(new, cmds)
        if self.command_lat:
            self.at(self.now + self.command_lat, self.open_gripper, (source, info))
        else:
            self.open_gripper((source, info))

    def open_gripper(self, item: tuple[str, dict]) -> None:
        if self.done:
            return
        source, info = item
        part = self.scene.holding
        self.scene = replace(self.scene, holding=None)
        received = self.human.can_receive
        self.emit(K.RELEASE, {"cycle": self.cycle, "source": source, "received": received,
                              "part": part, **info})
        if received:
            self.human, drafts = receive_part(self.human, self.planner, self.now)
            for kind, payload in drafts:
                self.emit(kind, payload)
            self.delivered += 1
            self.cycle_end(True)
        else:
            self.cycle_end(False, "premature_release")
        if self.done:
            return
        new, cmds = fsm_step(self.robot, FsmInputs(legs_remaining=self.legs_remaining()))
        self.transition(new, cmds)
        self.go_home()

    def on_refused(self) -> None:
        if self.robot is not S.IDLE or self.scene.holding is None:
            return  # a release is already on its way
        self.cycle_end(False, "handover_refused")
        if self.done:
            return
        # continue policy: a supervisor passes the part on and resets the robot
        part = self.scene.holding
        self.scene = replace(self.scene, holding=None)
        self.emit(K.RELEASE, {"cycle": self.cycle, "source": "supervisor", "received": True, "part": part})
        self.human, drafts = receive_part(self.human, self.planner, self.now)
        for kind, payload in drafts:
            self.emit(kind, payload)
        self.delivered += 1
        new, cmds = fsm_step(self.robot, FsmInputs(reset=True, legs_remaining=self.legs_remaining()))
        self.transition(new, cmds)
        self.go_home()

    # robot motion ----------------------------------------------------------
    def go_home(self) -> None:
        home = self.cfg.scene.home_pose
        t = self.now + _travel_us(self.ee, home, self.cfg.scene.transfer_speed)
        self.at(t, self.on_home)

    def on_home(self, _=None) -> None:
        if self.done:
            return
        self.ee = tuple(self.cfg.scene.home_pose)
        remaining = self.legs_remaining()
        finished = remaining == 0 or not self.scene.unattached()
        new, cmds = fsm_step(S.HOME, FsmInputs(servo_assembly_done=finished, legs_remaining=remaining))
        if new is S.REACH_AND_GRASP:
            self.cycle += 1
            self.attempts = 0
        self.transition(new, cmds)
        if new is S.FINISHED:
            self.check_end()
            return
        self.start_servo(self.now)

    def start_servo(self, t_us: int) -> None:
        self.field = ServoField(replace(self.scene, ee_pose=self.ee), self.servo_cfg)
        i = next_tick_index(t_us - 1, self.servo_cfg.tick_rate)
        self.at(tick_time_us(i, self.servo_cfg.tick_rate), self.on_servo, i)

    def on_servo(self, i: int) -> None:
        if self.done or self.robot is not S.REACH_AND_GRASP:
            return
        out = self.field.tick(self.ee, self.servo_noise)
        if self.cfg.dump_grids:
            grid = render_lyapunov_grid(self.scene.with_ee(self.ee), self.servo_cfg.noise_free(), None)
            self.grids.append(grid_to_json(grid, self.now / 1e6))
        if out.v_min is None:
            # nothing visible to reach for: hand control back to home
            new, cmds = fsm_step(self.robot, FsmInputs(reset=True, legs_remaining=self.legs_remaining()))
            self.transition(new, cmds)
            self.go_home()
            return
        if self.cfg.record_servo:
            self.emit(K.SERVO_COMMAND, {
                "cycle": self.cycle, "v_min": out.v_min, "instance": out.instance_id,
                "terminate": out.terminate, "u": list(out.control),
            })
        if out.terminate:
            fsm_step(self.robot, FsmInputs(servo_terminate=True, legs_remaining=self.legs_remaining()))
            self.grasp_target = out.instance_id
            self.at(self.now + self.command_lat + to_us(grasp_duration(self.servo_cfg)), self.on_grasp)
        else:
            self.ee = step_ee(self.ee, out.control, 1.0 / self.servo_cfg.tick_rate)
            self.at(tick_time_us(i + 1, self.servo_cfg.tick_rate), self.on_servo, i + 1)

    def on_grasp(self, _=None) -> None:
        if self.done:
            return
        before = self.ee
        res = execute_grasp(self.scene.with_ee(self.ee), self.servo_cfg, self.grasp_rng, self.grasp_target)
        self.scene = res.scene
        self.ee = res.scene.ee_pose
        self.attempts += 1
        self.emit(K.GRASP_ATTEMPT, {
            "cycle": self.cycle, "attempt": self.attempts, "part": res.part_id,
            "success": res.success, "alignment_error": res.alignment_error,
        })
        new, cmds = fsm_step(self.robot, FsmInputs(grasp_succeeded=res.success, legs_remaining=self.legs_remaining()))
        if res.success:
            self.transition(new, cmds)
            dp = self.cfg.scene.delivery_point
            self.at(self.now + _travel_us(self.ee, dp, self.cfg.scene.transfer_speed), self.on_delivery)
            return
        if self.attempts < self.cfg.fsm.max_grasp_attempts:
            self.ee = before  # back up to hover height, then servo again
            rise = to_us(self.servo_cfg.descend_depth / self.servo_cfg.descend_speed)
            self.start_servo(self.now + rise)
            return
        self.cycle_end(False, "grasp_failed")
        if self.done:
            return
        new, cmds = fsm_step(self.robot, FsmInputs(reset=True, legs_remaining=self.legs_remaining()))
        self.transition(new, cmds)
        self.go_home()

    def on_delivery(self, _=None) -> None:
        if self.done:
            return
        self.ee = tuple(self.cfg.scene.delivery_point)
        new, cmds = fsm_step(self.robot, FsmInputs(at_delivery_point=True, legs_remaining=self.legs_remaining()))
        self.trigger = HandoverTrigger(0, self.cfg.fsm.required_consecutive)
        self.grasp_run = []
        self.transition(new, cmds)


def run_episode(cfg: EpisodeConfig) -> EpisodeTrace:
    """Simulate one episode; the trace is a pure function of ``cfg`` (seed included)."""
    if not isinstance(cfg, EpisodeConfig):
        raise TypeError("run_episode expects an EpisodeConfig")
    return _Episode(cfg).run()


# --- batch runners --------------------------------------------------------


@dataclass
class ExperimentResults:
    config: EpisodeConfig
    repetitions: int
    seed_base: int
    traces: dict[str, list[EpisodeTrace]] = field(default_factory=dict)

    @property
    def modes(self) -> list[str]:
        return list(self.traces)

    def all_traces(self) -> list[EpisodeTrace]:
        return [t for ts in self.traces.values() for t in ts]


def run_experiment(
    cfg: EpisodeConfig,
    repetitions: int,
    seed_base: int = 0,
    modes: Iterable[str] | None = None,
    paired: bool = False,
) -> ExperimentResults:
    """Run episodes with seeds ``seed_base + i``.

    With ``paired`` (or several ``modes``) every mode replays the same seeds,
    so the human draws are shared between modes.
    """
    if repetitions < 1:
        raise ValueError("repetitions must be >= 1")
    if modes is None:
        modes = ("vision", "voice") if paired else (cfg.human.mode,)
    modes = list(dict.fromkeys(modes))
    if paired and len(modes) < 2:
        modes = list(dict.fromkeys([*modes, "vision", "voice"]))
    results = ExperimentResults(cfg, repetitions, seed_base)
    for mode in modes:
        base = cfg.with_mode(mode)
        results.traces[mode] = [run_episode(base.with_seed(seed_base + i)) for i in range(repetitions)]
    return results


@dataclass(frozen=True)
class PairedObservation:
    participant: int
    vision: float
    voice: float


def mean_handover_time(traces: Iterable[EpisodeTrace]) -> float:
    from .eval import compute_cycle_metrics

    times = [m.handover_time for t in traces for m in compute_cycle_metrics(t)
             if m.succeeded and m.handover_time is not None]
    return float(np.mean(times)) if times else math.nan


def run_handover_study(
    cfg: EpisodeConfig, participants: int = 10, repetitions: int = 5, seed_base: int = 0
) -> list[PairedObservation]:
    """Each participant does ``repetitions`` single handovers in both modes (shared seeds);
    returns the per-participant mean handover time per mode."""
    base = replace(cfg, task="handover", legs=1)
    out = []
    for p in range(participants):
        seeds = [seed_base + p * repetitions + j for j in range(repetitions)]
        means = {}
        for mode in ("vision", "voice"):
            m = base.with_mode(mode)
            means[mode] = mean_handover_time(run_episode(m.with_seed(s)) for s in seeds)
        out.append(PairedObservation(p, means["vision"], means["voice"]))
    return out


__all__ = [
    "Outcome",
    "EpisodeTrace",
    "ExperimentResults",
    "PairedObservation",
    "run_episode",
    "run_experiment",
    "run_handover_study",
    "mean_handover_time",
    "initial_scene",
    "write_trace",
    "read_trace",
    "FULL_SUCCESS",
    "FAILED",
]
