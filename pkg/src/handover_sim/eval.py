"""Cycle timing, fluency ratios, success-rate decomposition and the statistics kernels."""

from __future__ import annotations

import csv
import io
import math
import sys
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .core import AtomicAction, EventKind, RobotFsmState, _Named

K = EventKind
NA = AtomicAction.NO_ASSEMBLY_ACTION.key
GRASP = AtomicAction.HUMAN_GRASP.key

# robot states in which the part is ready for the human, and those counted as not active
_READY = frozenset({RobotFsmState.IDLE.value, RobotFsmState.HANDOVER.value})
_PASSIVE = frozenset({RobotFsmState.IDLE.value, RobotFsmState.FINISHED.value})


# --- per-cycle metrics ------------------------------------------------------


@dataclass(frozen=True)
class CycleMetrics:
    cycle_index: int
    handover_time: float | None
    cycle_time: float
    h_idle_ratio: float
    r_idle_ratio: float
    c_act_ratio: float
    grasp_attempts: int
    handover_attempts: int
    succeeded: bool
    episode: int = 0
    mode: str = "vision"


def _timeline(events, kind: EventKind, key: str) -> list[tuple[int, str]]:
    return [(e.time_us, e.payload[key]) for e in events if e.kind is kind]


def _value_at(timeline: list[tuple[int, str]], t: int, default: str | None) -> str | None:
    v = default
    for tt, val in timeline:
        if tt > t:
            break
        v = val
    return v


def _overlap_durations(robot, human, start: int, end: int) -> tuple[int, int, int]:
    """Integrate (h_idle, r_idle, c_act) microseconds over [start, end)."""
    cuts = sorted({start, end, *(t for t, _ in robot if start < t < end), *(t for t, _ in human if start < t < end)})
    h_idle = r_idle = c_act = 0
    for a, b in zip(cuts, cuts[1:]):
        rs = _value_at(robot, a, None)
        ha = _value_at(human, a, NA)
        span = b - a
        if ha == NA and rs not in _READY:
            h_idle += span
        if rs == RobotFsmState.IDLE.value:
            r_idle += span
        if ha != NA and rs not in _PASSIVE:
            c_act += span
    return h_idle, r_idle, c_act


def compute_cycle_metrics(trace) -> list[CycleMetrics]:
    """Per finished cycle: handover time, cycle time and the three fluency ratios.

    A cycle spans from the previous cycle end (or episode start) to its own
    end, which for a delivered leg is the release. Handover time runs from
    the last hand closure (the voice command, in voice mode) to the release.
    """
    events = trace.events
    robot = _timeline(events, K.FSM_TRANSITION, "to")
    human = _timeline(events, K.TRUE_HUMAN_ACTION, "action")
    mode = trace.config.human.mode
    seed = trace.config.seed
    out: list[CycleMetrics] = []
    start = 0
    closures: list[int] = []
    voice: list[int] = []
    grasps: dict[int, int] = {}
    release_t: int | None = None
    ref_t: int | None = None
    for ev in events:
        kind = ev.kind
        if kind is K.TRUE_HUMAN_ACTION and ev.payload["action"] == GRASP:
            closures.append(ev.time_us)
        elif kind is K.VOICE_COMMAND:
            voice.append(ev.time_us)
        elif kind is K.GRASP_ATTEMPT:
            c = ev.payload["cycle"]
            grasps[c] = grasps.get(c, 0) + 1
        elif kind is K.RELEASE and ev.payload.get("source") in ("trigger", "voice") and ev.payload.get("received"):
            release_t = ev.time_us
            ref = voice if ev.payload["source"] == "voice" else closures
            ref_t = ref[-1] if ref else None
        elif kind is K.CYCLE_END:
            end = ev.time_us
            cyc = ev.payload["cycle"]
            ok = bool(ev.payload["succeeded"])
            span = end - start
            if span > 0:
                h, r, c = _overlap_durations(robot, human, start, end)
                ratios = (h / span, r / span, c / span)
            else:
                ratios = (0.0, 0.0, 0.0)
            ho = None
            if ok and release_t is not None and ref_t is not None:
                ho = (release_t - ref_t) / 1e6
            out.append(CycleMetrics(
                cycle_index=cyc, handover_time=ho, cycle_time=span / 1e6,
                h_idle_ratio=ratios[0], r_idle_ratio=ratios[1], c_act_ratio=ratios[2],
                grasp_attempts=grasps.get(cyc, 0), handover_attempts=len(closures),
                succeeded=ok, episode=seed, mode=mode,
            ))
            start = end
            closures, voice, release_t, ref_t = [], [], None, None
    return out


# --- success-rate decomposition -------------------------------------------


def ratio(successes: int, total: int) -> float | None:
    """successes / total, or None when the denominator is zero."""
    if total < 0 or successes < 0 or successes > total:
        raise ValueError(f"invalid counts {successes}/{total}")
    return successes / total if total else None


def format_percent(r: float | None) -> str:
    return "undefined" if r is None else f"{100.0 * r:.1f}%"


def success_rates(traces: Sequence) -> dict:
    """Grasp, handover, cycle and full-assembly rates with their raw counts.

    Every hand closure counts as one handover attempt, so a retried handover
    contributes two attempts.
    """
    if len(traces) < 1:
        raise ValueError("success_rates needs at least one trace")
    n = dict(grasp_attempts=0, grasp_successes=0, handover_attempts=0, handovers=0,
             cycles=0, cycles_succeeded=0, episodes=len(traces), full_successes=0)
    for t in traces:
        for ev in t.events:
            k = ev.kind
            if k is K.GRASP_ATTEMPT:
                n["grasp_attempts"] += 1
                n["grasp_successes"] += bool(ev.payload["success"])
            elif k is K.TRUE_HUMAN_ACTION and ev.payload["action"] == GRASP:
                n["handover_attempts"] += 1
            elif k is K.RELEASE and ev.payload.get("received") and ev.payload.get("source") in ("trigger", "voice"):
                n["handovers"] += 1
            elif k is K.CYCLE_END:
                n["cycles"] += 1
                n["cycles_succeeded"] += bool(ev.payload["succeeded"])
        n["full_successes"] += t.outcome.succeeded
    return {
        "grasp": ratio(n["grasp_successes"], n["grasp_attempts"]),
        "handover": ratio(n["handovers"], n["handover_attempts"]),
        "cycle": ratio(n["cycles_succeeded"], n["cycles"]),
        "full_assembly": ratio(n["full_successes"], n["episodes"]),
        "counts": n,
    }


def _check_p(p: float) -> None:
    if not (isinstance(p, (int, float)) and 0.0 <= p <= 1.0):
        raise ValueError(f"probability must lie in [0, 1], got {p!r}")


def repetition_decay(p_cycle: float, n: int) -> float:
    """Chance that ``n`` independent cycles all succeed."""
    _check_p(p_cycle)
    if n < 1:
        raise ValueError("n must be >= 1")
    return float(p_cycle) ** n


def required_cycle_rate(p_full: float, n: int) -> float:
    """Per-cycle rate needed for a full-task rate of ``p_full`` over ``n`` cycles."""
    _check_p(p_full)
    if n < 1:
        raise ValueError("n must be >= 1")
    return float(p_full) ** (1.0 / n)


# --- Wilcoxon signed-rank ---------------------------------------------------


@dataclass(frozen=True)
class WilcoxonResult:
    w_plus: float | None
    n_effective: int
    p_two_sided: float | None
    method: str  # "exact", "normal_approx" or "undefined"

    @property
    def undefined(self) -> bool:
        return self.method == "undefined"


def midranks(values: Sequence[float]) -> np.ndarray:
    """Ranks 1..n with tied values sharing the mean of their positions."""
    x = np.asarray(values, dtype=float)
    order = np.argsort(x, kind="mergesort")
    ranks = np.empty(x.size)
    i = 0
    while i < x.size:
        j = i
        while j + 1 < x.size and x[order[j + 1]] == x[order[i]]:
            j += 1
        ranks[order[i:j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    return ranks


def _exact_tails(doubled: list[int], w2: int) -> tuple[float, float]:
    """P(W >= w) and P(W <= w) under random signs, counting sign patterns by DP."""
    total = sum(doubled)
    counts = [0] * (total + 1)
    counts[0] = 1
    for r in doubled:
        for s in range(total, r - 1, -1):
            counts[s] += counts[s - r]
    n_patterns = 2 ** len(doubled)
    upper = sum(counts[w2:]) / n_patterns
    lower = sum(counts[: w2 + 1]) / n_patterns
    return upper, lower


def wilcoxon_signed_rank(pairs: Iterable[tuple[float, float]], exact_max_n: int = 20) -> WilcoxonResult:
    """Paired two-sided signed-rank test; zero differences are dropped."""
    pairs = list(pairs)
    if not pairs:
        raise ValueError("wilcoxon_signed_rank needs at least one pair")
    d = np.array([float(a) - float(b) for a, b in pairs])
    d = d[d != 0]
    n = int(d.size)
    if n == 0:
        return WilcoxonResult(None, 0, None, "undefined")
    ranks = midranks(np.abs(d))
    w_plus = float(ranks[d > 0].sum())
    if n <= exact_max_n:
        doubled = [int(round(2 * r)) for r in ranks]
        upper, lower = _exact_tails(doubled, int(round(2 * w_plus)))
        p = min(1.0, 2.0 * min(upper, lower))
        method = "exact"
    else:
        mean = n * (n + 1) / 4.0
        _, tie_sizes = np.unique(np.abs(d), return_counts=True)
        var = n * (n + 1) * (2 * n + 1) / 24.0 - float(np.sum(tie_sizes**3 - tie_sizes)) / 48.0
        if var <= 0:
            return WilcoxonResult(w_plus, n, 1.0, "normal_approx")
        z = max(abs(w_plus - mean) - 0.5, 0.0) / math.sqrt(var)
        p = min(1.0, math.erfc(z / math.sqrt(2.0)))
        method = "normal_approx"
    return WilcoxonResult(w_plus, n, max(p, sys.float_info.min), method)


# --- questionnaire ----------------------------------------------------------


@dataclass(frozen=True)
class CronbachResult:
    alpha: float | None
    alpha_if_deleted: tuple[float | None, ...]
    n_participants: int
    n_items: int

    @property
    def undefined(self) -> bool:
        return self.alpha is None


def _alpha(x: np.ndarray) -> float | None:
    k = x.shape[1]
    total_var = x.sum(axis=1).var(ddof=1)
    if total_var == 0:
        return None
    return k / (k - 1) * (1.0 - x.var(axis=0, ddof=1).sum() / total_var)


def cronbach_alpha(ratings) -> CronbachResult:
    """Alpha over a participants x items matrix plus alpha with each item left out.

    Zero variance of the total score makes alpha undefined (None). Leaving
    out an item from a two-item scale leaves one item, which is also undefined.
    """
    x = np.asarray(ratings, dtype=float)
    if x.ndim != 2 or x.shape[0] < 2 or x.shape[1] < 2:
        raise ValueError("need at least 2 participants and 2 items")
    if not np.all(np.isfinite(x)):
        raise ValueError("ratings contain missing or non-finite entries")
    k = x.shape[1]
    deleted = tuple(
        _alpha(np.delete(x, j, axis=1)) if k > 2 else None for j in range(k)
    )
    return CronbachResult(_alpha(x), deleted, x.shape[0], k)


class LikertItem(_Named, Enum):
    FLUENCY = "fluency"
    EASE_OF_USE = "ease_of_use"
    TRUST = "trust"
    COMFORT = "comfort"
    CAPABILITY = "capability"


REVERSED_ITEMS = frozenset({LikertItem.COMFORT})
MODES = ("vision", "voice")


@dataclass(frozen=True)
class LikertResponse:
    participant: str
    item: LikertItem
    rating: int
    mode: str = "vision"

    def __post_init__(self):
        if isinstance(self.rating, bool) or not isinstance(self.rating, (int, np.integer)) or not 1 <= self.rating <= 7:
            raise ValueError(f"rating must be an integer in 1..7, got {self.rating!r}")
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")


def reverse_rating(r: int) -> int:
    if not 1 <= r <= 7:
        raise ValueError(f"rating must lie in 1..7, got {r}")
    return 8 - r


@dataclass(frozen=True)
class LikertMatrix:
    rows: tuple[tuple[str, str], ...]  # (participant, mode)
    items: tuple[str, ...]
    values: np.ndarray


def score_likert(responses: Iterable[LikertResponse]) -> LikertMatrix:
    """Rows are (participant, mode) sorted; columns follow item order; Comfort is reversed."""
    cells: dict[tuple[str, str, LikertItem], int] = {}
    for r in responses:
        key = (str(r.participant), r.mode, r.item)
        if key in cells:
            raise ValueError(f"duplicate response for participant {key[0]!r}, mode {key[1]!r}, item {r.item.key!r}")
        cells[key] = reverse_rating(r.rating) if r.item in REVERSED_ITEMS else int(r.rating)
    items = [it for it in LikertItem if any(k[2] is it for k in cells)]
    rows = sorted({(p, m) for p, m, _ in cells}, key=lambda pm: (pm[0], MODES.index(pm[1])))
    values = np.full((len(rows), len(items)), np.nan)
    for i, (p, m) in enumerate(rows):
        for j, it in enumerate(items):
            v = cells.get((p, m, it))
            if v is not None:
                values[i, j] = v
    return LikertMatrix(tuple(rows), tuple(it.key for it in items), values)


def read_likert_csv(path: str | Path) -> list[LikertResponse]:
    """Long-format CSV with columns participant, item, rating and optional mode."""
    out = []
    with open(path, newline="", encoding="utf-8") as fh:
        for i, row in enumerate(csv.DictReader(fh), start=2):
            try:
                out.append(LikertResponse(
                    row["participant"], LikertItem.parse(row["item"]),
                    int(row["rating"]), row.get("mode") or "vision",
                ))
            except (KeyError, ValueError) as exc:
                raise ValueError(f"{path}:{i}: {exc}") from None
    return out


# --- file formats -------------------------------------------------------------

METRICS_HEADER = (
    "episode", "mode", "cycle_index", "handover_time_s", "cycle_time_s",
    "h_idle", "r_idle", "c_act", "succeeded", "grasp_attempts", "handover_attempts",
)


def metrics_to_csv(rows: Iterable[CycleMetrics]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(METRICS_HEADER)
    for m in rows:
        w.writerow([
            m.episode, m.mode, m.cycle_index,
            "" if m.handover_time is None else repr(m.handover_time),
            repr(m.cycle_time), repr(m.h_idle_ratio), repr(m.r_idle_ratio), repr(m.c_act_ratio),
            "true" if m.succeeded else "false", m.grasp_attempts, m.handover_attempts,
        ])
    return buf.getvalue()


def read_metrics_csv(path: str | Path) -> list[CycleMetrics]:
    out = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        missing = set(METRICS_HEADER) - set(reader.fieldnames or ())
        if missing:
            raise ValueError(f"{path}: missing columns {sorted(missing)}")
        for row in reader:
            out.append(CycleMetrics(
                cycle_index=int(row["cycle_index"]),
                handover_time=float(row["handover_time_s"]) if row["handover_time_s"] else None,
                cycle_time=float(row["cycle_time_s"]),
                h_idle_ratio=float(row["h_idle"]), r_idle_ratio=float(row["r_idle"]),
                c_act_ratio=float(row["c_act"]), grasp_attempts=int(row["grasp_attempts"]),
                handover_attempts=int(row["handover_attempts"]),
                succeeded=row["succeeded"].strip().lower() == "true",
                episode=int(row["episode"]), mode=row["mode"],
            ))
    return out


def per_episode_means(rows: Iterable[CycleMetrics], attr: str) -> dict[int, float]:
    acc: dict[int, list[float]] = {}
    for m in rows:
        v = getattr(m, attr)
        if v is not None and (attr != "handover_time" or m.succeeded):
            acc.setdefault(m.episode, []).append(float(v))
    return {k: float(np.mean(v)) for k, v in acc.items()}


def paired_episode_means(a: Sequence[CycleMetrics], b: Sequence[CycleMetrics], attr: str) -> list[tuple[int, float, float]]:
    """Match two metric sets by episode key.

    Keys present in only one set raise ValueError. A matched episode without
    a defined value on either side (no successful handover, say) is left out.
    """
    keys_a, keys_b = {m.episode for m in a}, {m.episode for m in b}
    if keys_a != keys_b:
        only_a = sorted(keys_a - keys_b)
        only_b = sorted(keys_b - keys_a)
        raise ValueError(f"unmatched episode keys: only in first {only_a}, only in second {only_b}")
    ma, mb = per_episode_means(a, attr), per_episode_means(b, attr)
    return [(k, ma[k], mb[k]) for k in sorted(keys_a) if k in ma and k in mb]


def wilcoxon_to_dict(res: WilcoxonResult) -> dict:
    return {"w_plus": res.w_plus, "n_effective": res.n_effective,
            "p_two_sided": res.p_two_sided, "method": res.method}


def cronbach_to_dict(res: CronbachResult, items: Sequence[str]) -> dict:
    return {
        "alpha": res.alpha,
        "undefined": res.undefined,
        "alpha_if_deleted": dict(zip(items, res.alpha_if_deleted)),
        "n_participants": res.n_participants,
        "n_items": res.n_items,
    }


__all__ = [
    "CycleMetrics",
    "compute_cycle_metrics",
    "success_rates",
    "ratio",
    "format_percent",
    "repetition_decay",
    "required_cycle_rate",
    "WilcoxonResult",
    "midranks",
    "wilcoxon_signed_rank",
    "CronbachResult",
    "cronbach_alpha",
    "LikertItem",
    "LikertResponse",
    "LikertMatrix",
    "reverse_rating",
    "score_likert",
    "read_likert_csv",
    "metrics_to_csv",
    "read_metrics_csv",
    "per_episode_means",
    "paired_episode_means",
    "wilcoxon_to_dict",
    "cronbach_to_dict",
]
