"""Analytic oracles and Monte Carlo helpers that pin the calibrated defaults.

The frozen constants in ``servo``, ``human`` and ``percept`` are re-derived
here; the test suite checks that they still agree with these functions.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .core import AtomicAction, seeded_rng
from .percept import DEFAULT_PRIORS, TABLE_PRECISION, RecognizerModel, emergent_precision
from .servo import ServoConfig, ServoField, step_ee

A = AtomicAction
GRASP = int(A.HUMAN_GRASP)

TARGET_GRASP = 0.96
TARGET_HANDOVER = 0.851
TARGET_CYCLE = 0.90
TARGET_GAP = 0.5


def cycle_success_oracle(g: float, h: float, p_retry: float, max_attempts: int = 2) -> float:
    """P(cycle succeeds) = g * P(one of up to ``max_attempts`` handover tries is released)."""
    miss = (1.0 - h) * p_retry
    return g * h * sum(miss**i for i in range(max_attempts))


def solve_p_retry(g: float, h: float, cycle_rate: float) -> float:
    """Retry probability that makes the two-attempt oracle hit ``cycle_rate``."""
    p = (cycle_rate / g - h) / ((1.0 - h) * h)
    if not 0.0 <= p <= 1.0:
        raise ValueError(f"no retry probability in [0, 1] reaches cycle rate {cycle_rate}")
    return p


def run_detection(q: list[float], required: int = 2, start_count: int = 0) -> tuple[float, np.ndarray]:
    """Chance that ``required`` consecutive successes occur in independent trials ``q``.

    Returns the overall probability and the probability that the run completes
    exactly at trial i (0-based), found by a forward pass over the current run length.
    """
    state = np.zeros(required)
    state[min(start_count, required - 1)] = 1.0
    first = np.zeros(len(q))
    for i, qi in enumerate(q):
        nxt = np.zeros(required)
        nxt[0] = state.sum() * (1.0 - qi)
        nxt[1:] = state[:-1] * qi
        first[i] = state[-1] * qi
        state = nxt
    return float(first.sum()), first


def grasp_window_predictions(model: RecognizerModel, retry_timeout: float) -> int:
    """Predictions perceiving the grasp before the human gives up.

    The human gives up on the tick ``retry_timeout`` after closing the hand,
    and a prediction perceives the frame ``lag`` ticks back, so the last
    ``lag`` grasp frames are never judged.
    """
    return max(0, int(round(retry_timeout * model.frame_rate)) - model.lag)


def head_start_probability(model: RecognizerModel, steps: int = 200) -> float:
    """Chance the trigger already holds one grasp vote when the first grasp frame is judged.

    The predictions before it judge reach frames, which are mislabelled as a
    grasp with probability q. Conditioned on no release during the reach,
    the run length settles to the quasi-stationary law of the two-state
    chain (last vote was a grasp or not).
    """
    q = float(model.live_confusion()[int(A.REACH), GRASP])
    s0, s1 = 1.0, 0.0
    for _ in range(steps):
        s0, s1 = (s0 + s1) * (1.0 - q), s0 * q
        norm = s0 + s1
        s0, s1 = s0 / norm, s1 / norm
    return s1


def _detection(model: RecognizerModel, q: float, n: int, required: int = 2) -> tuple[float, np.ndarray]:
    h = head_start_probability(model) if required > 1 else 0.0
    p0, f0 = run_detection([q] * n, required)
    p1, f1 = run_detection([q] * n, required, start_count=1)
    return (1.0 - h) * p0 + h * p1, (1.0 - h) * f0 + h * f1


def detection_probability(model: RecognizerModel, retry_timeout: float, atypical: bool = False) -> float:
    live = model.live_confusion()
    row = int(A.NO_ASSEMBLY_ACTION) if atypical else GRASP
    return _detection(model, live[row, GRASP], grasp_window_predictions(model, retry_timeout))[0]


def handover_rate(model: RecognizerModel, retry_timeout: float, rho: float) -> float:
    """Per-attempt release probability when a share ``rho`` of attempts look like no assembly action."""
    d = detection_probability(model, retry_timeout)
    d_na = detection_probability(model, retry_timeout, atypical=True)
    return (1.0 - rho) * d + rho * d_na


def calibrate_atypical_probability(
    model: RecognizerModel | None = None, retry_timeout: float = 4.0, target: float = TARGET_HANDOVER
) -> float:
    model = model or RecognizerModel()
    d = detection_probability(model, retry_timeout)
    d_na = detection_probability(model, retry_timeout, atypical=True)
    if not d_na <= target <= d:
        raise ValueError(f"handover target {target} outside reachable [{d_na:.4f}, {d:.4f}]")
    return (d - target) / (d - d_na)


def vision_handover_time_pmf(model: RecognizerModel, retry_timeout: float = 4.0) -> tuple[np.ndarray, np.ndarray]:
    """Times (s) and probabilities of hand closure to release, given a typical attempt is detected.

    The first prediction that sees the closure arrives ``lag`` ticks after it
    and the trigger fires on the tick that completes the run.
    """
    live = model.live_confusion()
    n = grasp_window_predictions(model, retry_timeout)
    p, first = _detection(model, live[GRASP, GRASP], n)
    times = (model.lag + np.arange(n)) / model.frame_rate
    return times, first / p


def expected_vision_handover_time(model: RecognizerModel | None = None, retry_timeout: float = 4.0) -> float:
    times, pmf = vision_handover_time_pmf(model or RecognizerModel(), retry_timeout)
    return float(times @ pmf)


def voice_median_for_gap(
    gap: float = TARGET_GAP,
    model: RecognizerModel | None = None,
    dispersion: float = 0.2,
    retry_timeout: float = 4.0,
) -> float:
    """Median voice release delay whose log-normal mean exceeds the vision mean by ``gap``."""
    mean = expected_vision_handover_time(model, retry_timeout) + gap
    if mean <= 0:
        raise ValueError("gap leaves a non-positive voice delay")
    return mean / math.exp(0.5 * dispersion**2)


@dataclass(frozen=True)
class AlignmentEstimate:
    rate: float
    trials: int
    mean_ticks: float


def measure_alignment_rate(
    cfg: ServoConfig | None = None,
    trials: int = 4000,
    seed: int = 0,
    home=(0.50, 0.0, 0.35),
    lo=(0.30, -0.30),
    hi=(0.70, 0.30),
    max_ticks: int = 3000,
) -> AlignmentEstimate:
    """Monte Carlo share of noisy servo approaches that stop within the alignment tolerance."""
    from .core import Box, Part, Scene

    cfg = cfg or ServoConfig()
    rng = seeded_rng(seed, "calibration", 0)
    r = cfg.part_radius
    ok = 0
    ticks = 0
    bounds = Box((lo[0], lo[1], 0.0), (hi[0], hi[1], 0.6))
    for _ in range(trials):
        n = int(rng.integers(1, 5))
        parts = []
        while len(parts) < n:
            xy = rng.uniform((lo[0] + r, lo[1] + r), (hi[0] - r, hi[1] - r))
            if all(math.dist(xy, p.position[:2]) >= 0.08 for p in parts):
                parts.append(Part(len(parts), (float(xy[0]), float(xy[1]), 0.0)))
        field = ServoField(Scene(tuple(parts), tuple(home), bounds), cfg)
        ee = tuple(home)
        for t in range(max_ticks):
            out = field.tick(ee, rng)
            if out.terminate:
                break
            ee = step_ee(ee, out.control, cfg.dt)
        ticks += t
        target = parts[out.instance_id]
        if math.dist(ee[:2], target.position[:2]) <= cfg.align_tolerance:
            ok += 1
    return AlignmentEstimate(ok / trials, trials, ticks / trials)


def calibrate_p_mech(target: float = TARGET_GRASP, cfg: ServoConfig | None = None, trials: int = 4000, seed: int = 0) -> float:
    est = measure_alignment_rate(cfg, trials, seed)
    if est.rate < target:
        raise ValueError(f"alignment rate {est.rate:.4f} is already below the grasp target {target}")
    return target / est.rate


def precision_report(model: RecognizerModel | None = None, priors=DEFAULT_PRIORS) -> dict[str, dict[str, float]]:
    """Precision implied by the channel and class priors next to the reported table."""
    model = model or RecognizerModel()
    emerged = emergent_precision(model.confusion, priors)
    return {
        a.key: {"emergent": float(emerged[i]), "reported": TABLE_PRECISION[i]}
        for i, a in enumerate(A)
    }


def calibration_summary() -> dict[str, float]:
    model = RecognizerModel()
    rho = calibrate_atypical_probability(model)
    return {
        "live_grasp_rate": float(model.live_confusion()[GRASP, GRASP]),
        "detection_probability": detection_probability(model, 4.0),
        "atypical_probability": rho,
        "p_retry": solve_p_retry(TARGET_GRASP, TARGET_HANDOVER, TARGET_CYCLE),
        "cycle_oracle": cycle_success_oracle(TARGET_GRASP, TARGET_HANDOVER, 0.68),
        "vision_handover_mean": expected_vision_handover_time(model),
        "voice_median": voice_median_for_gap(TARGET_GAP, model),
    }


__all__ = [
    "cycle_success_oracle",
    "solve_p_retry",
    "run_detection",
    "grasp_window_predictions",
    "head_start_probability",
    "detection_probability",
    "handover_rate",
    "calibrate_atypical_probability",
    "vision_handover_time_pmf",
    "expected_vision_handover_time",
    "voice_median_for_gap",
    "measure_alignment_rate",
    "calibrate_p_mech",
    "precision_report",
    "calibration_summary",
]
