"""Discrete-event simulator of vision-triggered robot-to-human part handover in collaborative assembly."""

from .config import EpisodeConfig, LatencyConfig, RecognizerConfig, SceneConfig
from .core import (
    SCHEMA_VERSION,
    AtomicAction,
    ConfigError,
    ContractViolation,
    EventKind,
    RobotFsmState,
    Scene,
    SimEvent,
    seeded_rng,
)
from .engine import EpisodeTrace, ExperimentResults, Outcome, run_episode, run_experiment, run_handover_study
from .fsm import FsmConfig, HandoverTrigger, fsm_step, handover_trigger_update
from .human import HumanConfig, LogNormal
from .servo import ServoConfig

__version__ = "0.1.0"

__all__ = [
    "SCHEMA_VERSION",
    "AtomicAction",
    "ConfigError",
    "ContractViolation",
    "EventKind",
    "RobotFsmState",
    "Scene",
    "SimEvent",
    "seeded_rng",
    "EpisodeConfig",
    "LatencyConfig",
    "RecognizerConfig",
    "SceneConfig",
    "EpisodeTrace",
    "ExperimentResults",
    "Outcome",
    "run_episode",
    "run_experiment",
    "run_handover_study",
    "FsmConfig",
    "HandoverTrigger",
    "fsm_step",
    "handover_trigger_update",
    "HumanConfig",
    "LogNormal",
    "ServoConfig",
]
