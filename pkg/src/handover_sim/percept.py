"""Stochastic stand-in for the clip-based action recognizer.

The recognizer buffers ``window_len`` frames before its first output, then
emits one prediction per frame. A clip is perceived by the action at its
centre frame, so predictions trail the true action by half a window. The
predicted label is drawn from a row-stochastic confusion matrix; a
synthesized confidence vector then goes through the no-assembly bias
correction, which lets the runner-up class surface when the network
defaulted to "no assembly action".
"""

from __future__ import annotations

import bisect
import csv
import io
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .core import N_ACTIONS, AtomicAction, ContractViolation, UniformBuffer

A = AtomicAction
NO_ASSEMBLY = int(A.NO_ASSEMBLY_ACTION)

# Per-class offline recognition performance, in AtomicAction order.
TABLE_RECALL = (0.80, 0.13, 0.80, 0.52, 0.61, 0.37, 0.56, 0.17)
TABLE_PRECISION = (0.72, 0.40, 0.79, 0.64, 0.79, 0.48, 0.66, 0.27)

# Frame-level class priors (duration-weighted guesses, not measured values).
DEFAULT_PRIORS = (0.22, 0.05, 0.10, 0.10, 0.26, 0.14, 0.11, 0.02)


def _validate_probability_vector(v, name: str) -> np.ndarray:
    arr = np.asarray(v, dtype=float)
    if arr.shape != (N_ACTIONS,):
        raise ValueError(f"{name} must have {N_ACTIONS} entries, got shape {arr.shape}")
    return arr


def build_confusion_matrix(
    per_class_recall,
    priors=DEFAULT_PRIORS,
    beta: float = 0.6,
    policy: str = "no_assembly_bias",
) -> np.ndarray:
    """Row-stochastic 8x8 confusion with the given recall on the diagonal.

    ``no_assembly_bias``: a fraction ``beta`` of each row's error mass goes to
    no-assembly, the rest is split over the remaining classes in proportion to
    ``priors``. The no-assembly row spreads its error over the other classes
    by prior. ``priors`` spreads all error mass by prior.
    """
    recall = _validate_probability_vector(per_class_recall, "per_class_recall")
    if np.any(recall < 0) or np.any(recall > 1) or not np.all(np.isfinite(recall)):
        raise ValueError(f"recall values must lie in [0, 1], got {recall.tolist()}")
    pri = _validate_probability_vector(priors, "priors")
    if np.any(pri < 0) or abs(pri.sum() - 1.0) > 1e-9:
        raise ValueError("priors must be non-negative and sum to 1")
    if not 0.0 <= beta <= 1.0:
        raise ValueError(f"beta must lie in [0, 1], got {beta}")
    if policy not in ("no_assembly_bias", "priors"):
        raise ValueError(f"unknown off-diagonal policy {policy!r}")

    m = np.zeros((N_ACTIONS, N_ACTIONS))
    for i in range(N_ACTIONS):
        m[i, i] = recall[i]
        off = 1.0 - recall[i]
        if off == 0.0:
            continue
        to_na = beta * off if (policy == "no_assembly_bias" and i != NO_ASSEMBLY) else 0.0
        m[i, NO_ASSEMBLY] += to_na
        targets = [j for j in range(N_ACTIONS) if j != i]
        if policy == "no_assembly_bias" and i != NO_ASSEMBLY:
            targets = [j for j in targets if j != NO_ASSEMBLY]
        rest = off - to_na
        w = pri[targets]
        if w.sum() <= 0:
            w = np.ones(len(targets))
        m[i, targets] += rest * w / w.sum()
    return m


def degrade_for_frame_rate(confusion: np.ndarray, frame_rate: float, trained_rate: float, slope: float) -> np.ndarray:
    """Shrink the diagonal linearly with relative frame-rate mismatch.

    Removed mass joins each row's off-diagonal entries in proportion to their
    current size.
    """
    if frame_rate == trained_rate or slope == 0:
        return confusion
    factor = max(0.0, 1.0 - slope * abs(frame_rate / trained_rate - 1.0))
    m = confusion.copy()
    for i in range(N_ACTIONS):
        keep = m[i, i] * factor
        moved = m[i, i] - keep
        m[i, i] = keep
        off = [j for j in range(N_ACTIONS) if j != i]
        w = m[i, off]
        if w.sum() <= 0:
            w = np.ones(len(off))
        m[i, off] += moved * w / w.sum()
    return m


def validate_confusion(m) -> np.ndarray:
    arr = np.asarray(m, dtype=float)
    if arr.shape != (N_ACTIONS, N_ACTIONS):
        raise ValueError(f"confusion must be {N_ACTIONS}x{N_ACTIONS}, got {arr.shape}")
    if np.any(arr < 0) or not np.all(np.isfinite(arr)):
        raise ValueError("confusion entries must be finite and non-negative")
    sums = arr.sum(axis=1)
    bad = np.flatnonzero(np.abs(sums - 1.0) > 1e-9)
    if bad.size:
        raise ValueError(f"confusion rows {bad.tolist()} do not sum to 1")
    return arr


@dataclass(frozen=True)
class RecognizerModel:
    confusion: np.ndarray = field(default_factory=lambda: build_confusion_matrix(TABLE_RECALL))
    window_len: int = 16
    frame_rate: float = 10.0
    no_assembly_scale: float = 0.15
    epsilon: float = 0.3
    trained_frame_rate: float = 10.0
    rate_slope: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "confusion", validate_confusion(self.confusion))
        if self.window_len < 1:
            raise ValueError("window_len must be >= 1")
        if self.frame_rate <= 0 or self.trained_frame_rate <= 0:
            raise ValueError("frame rates must be positive")
        if not 0.0 < self.no_assembly_scale <= 1.0:
            raise ValueError(f"no_assembly_scale must lie in (0, 1], got {self.no_assembly_scale}")
        if not 0.0 <= self.epsilon < 1.0:
            raise ValueError("epsilon must lie in [0, 1)")

    @property
    def lag(self) -> int:
        """Frames between the newest frame and the clip's centre frame."""
        return self.window_len // 2

    def effective_confusion(self) -> np.ndarray:
        return degrade_for_frame_rate(
            self.confusion, self.frame_rate, self.trained_frame_rate, self.rate_slope
        )

    def mislabel_outcomes(self) -> tuple[float, float, float]:
        """For a no-assembly draw on a clip of another class, P(label is the true class,
        the lowest-index remaining class, no-assembly) after the bias correction."""
        eps = self.epsilon
        if eps == 0:
            return 0.0, 0.0, 1.0
        peak = self.no_assembly_scale * (1.0 - eps)
        third = 1.0 / (N_ACTIONS - 1)
        p_true = min(1.0, max(0.0, 1.0 - max(peak / eps, third)))
        p_other = max(0.0, min(third, 1.0 - (N_ACTIONS - 2) * peak / eps))
        return p_true, p_other, 1.0 - p_true - p_other

    def live_confusion(self) -> np.ndarray:
        """Label distribution after the bias correction (what the trigger sees)."""
        m = self.effective_confusion().copy()
        p_true, p_other, _ = self.mislabel_outcomes()
        for i in range(N_ACTIONS):
            if i == NO_ASSEMBLY:
                continue
            na = m[i, NO_ASSEMBLY]
            other = int(A.REACH) if i != int(A.REACH) else int(A.FLIP_TABLETOP)
            m[i, NO_ASSEMBLY] = na * (1.0 - p_true - p_other)
            m[i, i] += na * p_true
            m[i, other] += na * p_other
        if self.no_assembly_scale * (1.0 - self.epsilon) < self.epsilon / (N_ACTIONS - 1):
            # a correct no-assembly draw loses to the tied rest; lowest index wins
            m[NO_ASSEMBLY, int(A.REACH)] += m[NO_ASSEMBLY, NO_ASSEMBLY]
            m[NO_ASSEMBLY, NO_ASSEMBLY] = 0.0
        return m


def apply_confidence_bias(confidence, scale: float) -> tuple[np.ndarray, AtomicAction]:
    """Scale the no-assembly confidence by ``scale``; label is the argmax (ties -> lowest index)."""
    if not 0.0 < scale <= 1.0:
        raise ValueError(f"scale must lie in (0, 1], got {scale}")
    conf = np.asarray(confidence, dtype=float)
    if np.any(conf < 0):
        raise ValueError("confidence entries must be non-negative")
    adjusted = conf.copy()
    adjusted[NO_ASSEMBLY] *= scale
    return adjusted, AtomicAction(int(np.argmax(adjusted)))


def synthesize_confidence(sampled: int, perceived: int, u: float, epsilon: float) -> np.ndarray:
    """Confidence peaked at ``sampled``; on a mislabel the perceived class is runner-up with share ``u``."""
    conf = np.full(N_ACTIONS, epsilon / (N_ACTIONS - 1))
    conf[sampled] = 1.0 - epsilon
    if sampled != perceived:
        others = [j for j in range(N_ACTIONS) if j not in (sampled, perceived)]
        conf[perceived] = epsilon * u
        conf[others] = epsilon * (1.0 - u) / len(others)
    return conf


@dataclass(frozen=True)
class ActionPrediction:
    frame_index: int
    label: AtomicAction
    sampled: AtomicAction
    perceived: AtomicAction
    runner_up_share: float
    epsilon: float

    @property
    def confidence(self) -> np.ndarray:
        return synthesize_confidence(int(self.sampled), int(self.perceived), self.runner_up_share, self.epsilon)


_ACTIONS = tuple(A)


class SlidingWindowRecognizer:
    """Frame-by-frame recognizer; owns its frame buffer and checks frame order."""

    def __init__(self, model: RecognizerModel, rng: np.random.Generator):
        self.model = model
        self._uniform = UniformBuffer(rng)
        self._cdf = [np.cumsum(row).tolist() for row in model.effective_confusion()]
        for row in self._cdf:
            row[-1] = 1.0
        self._window: deque[int] = deque(maxlen=model.window_len)
        self._last_frame = 0

    def tick(self, frame_index: int, true_action: AtomicAction) -> ActionPrediction | None:
        if frame_index != self._last_frame + 1:
            raise ContractViolation(
                f"frame_index {frame_index} does not follow {self._last_frame}"
            )
        self._last_frame = frame_index
        self._window.append(int(true_action))
        if frame_index < self.model.window_len:
            return None
        lag = self.model.lag
        perceived = self._window[-1 - lag] if len(self._window) > lag else self._window[0]
        sampled = min(bisect.bisect_right(self._cdf[perceived], self._uniform()), N_ACTIONS - 1)
        u = self._uniform()
        label = self._label(sampled, perceived, u)
        return ActionPrediction(
            frame_index, _ACTIONS[label], _ACTIONS[sampled], _ACTIONS[perceived], u, self.model.epsilon
        )

    def _label(self, sampled: int, perceived: int, u: float) -> int:
        # Closed form of argmax(apply_confidence_bias(synthesize_confidence(...))),
        # using the same float operations; ties go to the lowest index.
        if sampled != NO_ASSEMBLY:
            return sampled
        eps = self.model.epsilon
        peak = (1.0 - eps) * self.model.no_assembly_scale
        if perceived == NO_ASSEMBLY:
            return NO_ASSEMBLY if peak >= eps / (N_ACTIONS - 1) else int(A.REACH)
        runner = eps * u
        rest = eps * (1.0 - u) / (N_ACTIONS - 2)
        other = int(A.REACH) if perceived != int(A.REACH) else int(A.FLIP_TABLETOP)
        best_v, best_i = peak, NO_ASSEMBLY
        for v, i in sorted(((runner, perceived), (rest, other)), key=lambda t: t[1]):
            if v > best_v:
                best_v, best_i = v, i
        return best_i


def recognizer_tick(
    recognizer: SlidingWindowRecognizer, frame_index: int, true_action: AtomicAction
) -> ActionPrediction | None:
    return recognizer.tick(frame_index, true_action)


def confusion_to_csv(m: np.ndarray) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow([a.key for a in A])
    for row in np.asarray(m):
        w.writerow([repr(float(x)) for x in row])
    return buf.getvalue()


def confusion_from_csv(text: str) -> np.ndarray:
    rows = list(csv.reader(io.StringIO(text)))
    if not rows or [h.strip() for h in rows[0]] != [a.key for a in A]:
        raise ValueError("confusion CSV header must list the 8 action names in order")
    body = [r for r in rows[1:] if r]
    try:
        m = np.array([[float(x) for x in r] for r in body])
    except ValueError as exc:
        raise ValueError(f"non-numeric confusion entry: {exc}") from None
    return validate_confusion(m)


def save_confusion(m: np.ndarray, path: str | Path) -> None:
    Path(path).write_text(confusion_to_csv(m), encoding="utf-8")


def load_confusion(path: str | Path) -> np.ndarray:
    return confusion_from_csv(Path(path).read_text(encoding="utf-8"))


def emergent_precision(confusion: np.ndarray, priors=DEFAULT_PRIORS) -> np.ndarray:
    """Per-class precision implied by a confusion matrix under class ``priors``."""
    pri = np.asarray(priors, dtype=float)
    joint = pri[:, None] * np.asarray(confusion)
    col = joint.sum(axis=0)
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(col > 0, np.diag(joint) / col, np.nan)
