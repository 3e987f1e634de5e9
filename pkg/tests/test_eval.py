from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from handover_sim.config import EpisodeConfig
from handover_sim.core import EventKind as K, SimEvent
from handover_sim.engine import EpisodeTrace, Outcome, run_episode
from handover_sim.eval import (
    CycleMetrics,
    LikertItem,
    LikertResponse,
    compute_cycle_metrics,
    cronbach_alpha,
    format_percent,
    metrics_to_csv,
    midranks,
    paired_episode_means,
    ratio,
    read_likert_csv,
    read_metrics_csv,
    repetition_decay,
    required_cycle_rate,
    reverse_rating,
    score_likert,
    success_rates,
    wilcoxon_signed_rank,
)
from oracles import cronbach_direct, midranks_by_counting, wilcoxon_brute


def synthetic(events):
    evs = tuple(SimEvent(int(t * 1e6), i, k, p) for i, (t, k, p) in enumerate(events))
    return EpisodeTrace(EpisodeConfig(), evs, Outcome("full_success"))


def fsm(t, to):
    return (t, K.FSM_TRANSITION, {"from": None, "to": to, "commands": [], "cycle": 1})


def act(t, a):
    return (t, K.TRUE_HUMAN_ACTION, {"action": a, "phase": "x", "cycle": 1})


def test_handover_time_is_release_minus_closure():
    tr = synthetic([
        fsm(0.0, "idle"), act(0.0, "reach"), act(10.0, "human_grasp"),
        (10.4, K.RELEASE, {"cycle": 1, "source": "trigger", "received": True, "part": 0}),
        (10.4, K.CYCLE_END, {"cycle": 1, "succeeded": True}),
    ])
    (m,) = compute_cycle_metrics(tr)
    assert m.handover_time == pytest.approx(0.4)
    assert m.handover_attempts == 1 and m.succeeded


def test_idle_ratios():
    tr = synthetic([
        fsm(0.0, "pass"), act(0.0, "no_assembly_action"), act(5.0, "spin_leg"),
        (50.0, K.CYCLE_END, {"cycle": 1, "succeeded": False, "reason": "timeout"}),
    ])
    (m,) = compute_cycle_metrics(tr)
    assert m.h_idle_ratio == pytest.approx(0.10)
    assert m.r_idle_ratio == 0.0
    assert m.c_act_ratio == pytest.approx(0.90)
    assert m.cycle_time == pytest.approx(50.0) and m.handover_time is None


def test_oracle_trace_metrics():
    rows = compute_cycle_metrics(run_episode(EpisodeConfig.oracle(seed=2)))
    assert len(rows) == 4
    assert all(m.succeeded and m.handover_attempts == 1 and m.grasp_attempts == 1 for m in rows)
    assert all(m.handover_time == pytest.approx(0.9) for m in rows)
    for m in rows:
        for r in (m.h_idle_ratio, m.r_idle_ratio, m.c_act_ratio):
            assert 0.0 <= r <= 1.0


def test_rate_examples():
    assert ratio(48, 50) == 0.96
    assert abs(ratio(46, 54) - 0.851) < 0.002
    assert format_percent(ratio(46, 54)) == "85.2%"
    assert ratio(45, 50) == 0.90
    assert ratio(0, 0) is None and format_percent(None) == "undefined"


def test_success_rates_on_oracle():
    r = success_rates([run_episode(EpisodeConfig.oracle(seed=s)) for s in range(3)])
    assert r["grasp"] == r["handover"] == r["cycle"] == r["full_assembly"] == 1.0
    assert r["counts"]["handovers"] == 12


def test_decay_examples():
    assert repetition_decay(0.9, 4) == pytest.approx(0.6561)
    assert repetition_decay(1.0, 4) == 1.0
    assert required_cycle_rate(0.9, 4) == pytest.approx(0.97400, abs=5e-6)
    with pytest.raises(ValueError):
        repetition_decay(1.2, 4)
    with pytest.raises(ValueError):
        required_cycle_rate(0.5, 0)


@given(st.floats(0, 1), st.integers(1, 10))
def test_decay_round_trip(p, n):
    assert required_cycle_rate(repetition_decay(p, n), n) == pytest.approx(p, abs=1e-9)


def test_wilcoxon_examples():
    r = wilcoxon_signed_rank([(1, 1), (2, 2)])
    assert r.undefined and r.n_effective == 0 and r.p_two_sided is None
    r = wilcoxon_signed_rank([(1, 0), (2, 0), (3, 0)])
    assert r.w_plus == 6 and r.p_two_sided == 0.25 and r.method == "exact"
    r = wilcoxon_signed_rank([(1, 0), (-1, 0)])
    assert r.w_plus == 1.5 and r.p_two_sided == 1.0
    with pytest.raises(ValueError):
        wilcoxon_signed_rank([])


@settings(max_examples=300, deadline=None)
@given(st.lists(st.integers(-6, 6), min_size=1, max_size=10))
def test_wilcoxon_exact_matches_enumeration(diffs):
    r = wilcoxon_signed_rank([(d, 0) for d in diffs])
    w, p = wilcoxon_brute(diffs)
    if w is None:
        assert r.undefined
    else:
        assert r.w_plus == w and r.p_two_sided == pytest.approx(p, rel=1e-12)


@given(st.lists(st.floats(-100, 100, allow_nan=False), min_size=1, max_size=30))
def test_midranks_match_counting(values):
    assert np.allclose(midranks(values), midranks_by_counting(values))


def test_normal_branch_against_scipy():
    from scipy.stats import wilcoxon

    rng = np.random.default_rng(3)
    for _ in range(20):
        d = np.round(rng.normal(0.3, 1.0, 40), 1)
        d = d[d != 0]
        ours = wilcoxon_signed_rank([(x, 0.0) for x in d])
        ref = wilcoxon(d, correction=True, method="approx")
        assert ours.method == "normal_approx"
        assert ours.p_two_sided == pytest.approx(ref.pvalue, rel=1e-9)


def test_cronbach_examples():
    col = [1, 3, 5, 2, 7]
    assert cronbach_alpha(np.column_stack([col, col])).alpha == pytest.approx(1.0)
    assert cronbach_alpha([[1, 2], [2, 1]]).undefined
    m = np.random.default_rng(0).integers(1, 8, (6, 4))
    assert cronbach_alpha(m).alpha == pytest.approx(cronbach_direct(m), abs=1e-12)
    with pytest.raises(ValueError):
        cronbach_alpha([[1, 2, 3]])
    with pytest.raises(ValueError):
        cronbach_alpha([[1, np.nan], [2, 3]])


def test_alpha_if_deleted():
    m = np.random.default_rng(1).integers(1, 8, (10, 5))
    res = cronbach_alpha(m)
    assert len(res.alpha_if_deleted) == 5
    for j, a in enumerate(res.alpha_if_deleted):
        assert a == pytest.approx(cronbach_direct(np.delete(m, j, axis=1)), abs=1e-12)
    assert cronbach_alpha(m[:, :2]).alpha_if_deleted == (None, None)


def test_reversal():
    assert reverse_rating(7) == 1 and reverse_rating(4) == 4
    assert [reverse_rating(r) for r in range(1, 8)] == list(range(7, 0, -1))
    with pytest.raises(ValueError):
        reverse_rating(0)


def test_likert_scoring():
    rs = [
        LikertResponse("p1", LikertItem.FLUENCY, 5),
        LikertResponse("p1", LikertItem.COMFORT, 7),
        LikertResponse("p2", LikertItem.FLUENCY, 3, "voice"),
    ]
    m = score_likert(rs)
    assert m.items == ("fluency", "comfort")
    assert m.rows == (("p1", "vision"), ("p2", "voice"))
    assert m.values[0].tolist() == [5, 1]
    assert math.isnan(m.values[1, 1])
    with pytest.raises(ValueError):
        score_likert(rs + [LikertResponse("p1", LikertItem.FLUENCY, 2)])
    with pytest.raises(ValueError):
        LikertResponse("p", LikertItem.TRUST, 8)


def test_likert_csv(tmp_path):
    p = tmp_path / "l.csv"
    p.write_text("participant,item,rating,mode\np1,comfort,6,voice\np2,trust,3,\n")
    rs = read_likert_csv(p)
    assert rs[0].item is LikertItem.COMFORT and rs[0].mode == "voice" and rs[1].mode == "vision"
    p.write_text("participant,item,rating\np1,comfort,9\n")
    with pytest.raises(ValueError, match=":2"):
        read_likert_csv(p)


def test_metrics_csv_round_trip(tmp_path):
    rows = compute_cycle_metrics(run_episode(EpisodeConfig(seed=4, failure_policy="continue")))
    path = tmp_path / "m.csv"
    path.write_text(metrics_to_csv(rows))
    assert read_metrics_csv(path) == rows


def _row(ep, t, ok=True):
    return CycleMetrics(1, t, 10.0, 0.1, 0.1, 0.5, 1, 1, ok, episode=ep)


def test_pairing_by_episode():
    a = [_row(1, 1.0), _row(2, 2.0), _row(3, None, ok=False)]
    b = [_row(1, 1.5), _row(2, 2.5), _row(3, 3.0)]
    assert paired_episode_means(a, b, "handover_time") == [(1, 1.0, 1.5), (2, 2.0, 2.5)]
    with pytest.raises(ValueError, match="unmatched"):
        paired_episode_means(a, b[:2], "handover_time")
