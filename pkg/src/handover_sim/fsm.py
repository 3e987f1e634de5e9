"""Robot task logic: home, reach-and-grasp, pass, idle, handover, finished."""

from __future__ import annotations

import json
from dataclasses import dataclass, replace
from enum import Enum

from .core import AtomicAction, ContractViolation, RobotFsmState, _Named

S = RobotFsmState


class Command(_Named, Enum):
    MOVE_SERVO = "move_servo"
    EXECUTE_GRASP = "execute_grasp"
    MOVE_TO_DELIVERY = "move_to_delivery"
    OPEN_GRIPPER = "open_gripper"


@dataclass(frozen=True)
class FsmInputs:
    servo_terminate: bool = False
    servo_assembly_done: bool = False
    grasp_succeeded: bool | None = None
    at_delivery_point: bool = False
    release_trigger: bool = False
    legs_remaining: int = 4
    reset: bool = False

    def __post_init__(self):
        if not 0 <= self.legs_remaining <= 4:
            raise ContractViolation(f"legs_remaining={self.legs_remaining} outside 0..4")


@dataclass(frozen=True)
class FsmConfig:
    required_consecutive: int = 2
    max_grasp_attempts: int = 1

    def __post_init__(self):
        from .core import ConfigError

        if self.required_consecutive < 1:
            raise ConfigError("required_consecutive must be >= 1", "fsm.required_consecutive")
        if self.max_grasp_attempts < 1:
            raise ConfigError("max_grasp_attempts must be >= 1", "fsm.max_grasp_attempts")


# (from, condition, to, commands); conditions are checked top to bottom.
TRANSITIONS: tuple[tuple[S, str, S, tuple[Command, ...]], ...] = (
    (S.HOME, "servo_assembly_done", S.FINISHED, ()),
    (S.HOME, "otherwise", S.REACH_AND_GRASP, (Command.MOVE_SERVO,)),
    (S.REACH_AND_GRASP, "grasp_succeeded == true", S.PASS, (Command.MOVE_TO_DELIVERY,)),
    (S.REACH_AND_GRASP, "grasp_succeeded == false", S.REACH_AND_GRASP, (Command.MOVE_SERVO,)),
    (S.REACH_AND_GRASP, "servo_terminate", S.REACH_AND_GRASP, (Command.EXECUTE_GRASP,)),
    (S.REACH_AND_GRASP, "otherwise", S.REACH_AND_GRASP, (Command.MOVE_SERVO,)),
    (S.PASS, "at_delivery_point", S.IDLE, ()),
    (S.PASS, "otherwise", S.PASS, (Command.MOVE_TO_DELIVERY,)),
    (S.IDLE, "release_trigger", S.HANDOVER, (Command.OPEN_GRIPPER,)),
    (S.IDLE, "otherwise", S.IDLE, ()),
    (S.HANDOVER, "always", S.HOME, ()),
    (S.HOME, "reset", S.HOME, ()),
    (S.REACH_AND_GRASP, "reset", S.HOME, ()),
    (S.PASS, "reset", S.HOME, ()),
    (S.IDLE, "reset", S.HOME, ()),
    (S.HANDOVER, "reset", S.HOME, ()),
)


def fsm_step(state: RobotFsmState, inputs: FsmInputs) -> tuple[RobotFsmState, list[Command]]:
    """Return the unique successor state and the commands to issue.

    Raises ContractViolation for combinations the controller never produces
    (stepping a finished robot, a grasp outcome outside reach-and-grasp, a
    release trigger outside idle).
    """
    if state is S.FINISHED:
        raise ContractViolation("fsm_step called in terminal state 'finished'")
    if inputs.grasp_succeeded is not None and state is not S.REACH_AND_GRASP:
        raise ContractViolation(f"grasp outcome reported in state '{state.key}'")
    if inputs.release_trigger and state is not S.IDLE:
        raise ContractViolation(f"release trigger reported in state '{state.key}'")

    if inputs.reset:
        return S.HOME, []

    if state is S.HOME:
        if inputs.servo_assembly_done:
            return S.FINISHED, []
        return S.REACH_AND_GRASP, [Command.MOVE_SERVO]
    if state is S.REACH_AND_GRASP:
        if inputs.grasp_succeeded is True:
            return S.PASS, [Command.MOVE_TO_DELIVERY]
        if inputs.grasp_succeeded is False:
            return S.REACH_AND_GRASP, [Command.MOVE_SERVO]
        if inputs.servo_terminate:
            return S.REACH_AND_GRASP, [Command.EXECUTE_GRASP]
        return S.REACH_AND_GRASP, [Command.MOVE_SERVO]
    if state is S.PASS:
        if inputs.at_delivery_point:
            return S.IDLE, []
        return S.PASS, [Command.MOVE_TO_DELIVERY]
    if state is S.IDLE:
        if inputs.release_trigger:
            return S.HANDOVER, [Command.OPEN_GRIPPER]
        return S.IDLE, []
    if state is S.HANDOVER:
        return S.HOME, []
    raise ContractViolation(f"unhandled state {state!r}")  # pragma: no cover


def transition_table() -> list[dict]:
    return [
        {"from": a.key, "when": cond, "to": b.key, "commands": [c.key for c in cmds]}
        for a, cond, b, cmds in TRANSITIONS
    ]


def transition_table_json() -> str:
    return json.dumps({"states": [s.key for s in S], "transitions": transition_table()}, indent=2)


@dataclass(frozen=True)
class HandoverTrigger:
    consecutive_grasp_count: int = 0
    required: int = 2

    def __post_init__(self):
        if self.required < 1:
            raise ContractViolation("required must be >= 1")
        if not 0 <= self.consecutive_grasp_count <= self.required:
            raise ContractViolation(
                f"count {self.consecutive_grasp_count} outside 0..{self.required}"
            )


def handover_trigger_update(
    trigger: HandoverTrigger, prediction: AtomicAction | None
) -> tuple[HandoverTrigger, bool]:
    """Count consecutive grasp predictions; fire once ``required`` is reached.

    The returned trigger still shows the full count on the firing tick; the
    count restarts from zero on the next update.
    """
    count = trigger.consecutive_grasp_count
    if count >= trigger.required:
        count = 0
    if prediction is AtomicAction.HUMAN_GRASP:
        count += 1
        return replace(trigger, consecutive_grasp_count=count), count >= trigger.required
    return replace(trigger, consecutive_grasp_count=0), False
