"""The frozen defaults must still agree with the functions that derived them."""

from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from handover_sim.calibration import (
    TARGET_CYCLE,
    TARGET_GRASP,
    TARGET_HANDOVER,
    calibrate_atypical_probability,
    calibrate_p_mech,
    calibration_summary,
    cycle_success_oracle,
    detection_probability,
    expected_vision_handover_time,
    grasp_window_predictions,
    head_start_probability,
    handover_rate,
    measure_alignment_rate,
    precision_report,
    run_detection,
    solve_p_retry,
    vision_handover_time_pmf,
    voice_median_for_gap,
)
from handover_sim.config import EpisodeConfig
from handover_sim.engine import run_episode
from handover_sim.eval import compute_cycle_metrics, success_rates
from handover_sim.human import DEFAULT_ATYPICAL_PROBABILITY, DEFAULT_VOICE_MEDIAN, HumanConfig
from handover_sim.percept import RecognizerModel
from handover_sim.servo import DEFAULT_P_MECH
from oracles import run_detection_brute


@settings(max_examples=60, deadline=None)
@given(st.lists(st.floats(0, 1), min_size=1, max_size=11), st.integers(1, 3))
def test_run_detection_matches_enumeration(q, required):
    p, first = run_detection(q, required)
    p2, first2 = run_detection_brute(q, required)
    assert p == pytest.approx(p2, abs=1e-12)
    assert np.allclose(first, first2, atol=1e-12)


def test_run_detection_with_head_start():
    # one success already in hand: the first trial can complete the run
    p, first = run_detection([0.5, 0.5], 2, start_count=1)
    assert first.tolist() == [0.5, 0.0]
    assert p == 0.5


def test_atypical_default_is_calibrated():
    assert DEFAULT_ATYPICAL_PROBABILITY == pytest.approx(calibrate_atypical_probability(), abs=5e-4)
    assert handover_rate(RecognizerModel(), 4.0, DEFAULT_ATYPICAL_PROBABILITY) == pytest.approx(
        TARGET_HANDOVER, abs=5e-4)


def test_voice_median_default_is_calibrated():
    assert DEFAULT_VOICE_MEDIAN == pytest.approx(voice_median_for_gap(), abs=5e-4)
    assert HumanConfig().voice_delay.mean - expected_vision_handover_time() == pytest.approx(0.5, abs=1e-3)


def test_p_retry_default_is_calibrated():
    p = solve_p_retry(TARGET_GRASP, TARGET_HANDOVER, TARGET_CYCLE)
    assert HumanConfig().p_retry == pytest.approx(p, abs=0.005)
    assert cycle_success_oracle(TARGET_GRASP, TARGET_HANDOVER, 0.68) == pytest.approx(TARGET_CYCLE, abs=0.002)
    with pytest.raises(ValueError):
        solve_p_retry(0.96, 0.5, 0.96)


def test_p_mech_default_is_calibrated():
    est = measure_alignment_rate(trials=600, seed=3)
    assert est.rate == 1.0
    assert DEFAULT_P_MECH == pytest.approx(calibrate_p_mech(trials=600, seed=3))


def test_handover_time_pmf():
    times, pmf = vision_handover_time_pmf(RecognizerModel())
    assert pmf.sum() == pytest.approx(1.0)
    assert times[0] == pytest.approx(0.8)
    # a release on the first grasp vote needs a stray grasp vote during the reach
    model = RecognizerModel()
    q = model.live_confusion()[7, 7]
    d = detection_probability(model, 4.0)
    assert pmf[0] == pytest.approx(head_start_probability(model) * q / d, rel=1e-12)
    assert len(times) == grasp_window_predictions(model, 4.0) == 32


def test_vision_handover_time_matches_simulation():
    cfg = EpisodeConfig(task="handover", legs=1, human=HumanConfig(atypical_probability=0.0, p_retry=0.0))
    times = [m.handover_time for s in range(4000)
             for m in compute_cycle_metrics(run_episode(cfg.with_seed(s)))
             if m.succeeded and m.handover_time is not None]
    # standard error is about 0.007 s
    assert np.mean(times) == pytest.approx(expected_vision_handover_time(), abs=0.025)


def test_single_attempt_release_rate_matches_analysis():
    cfg = EpisodeConfig(task="handover", legs=1, human=HumanConfig(p_retry=0.0))
    rates = success_rates([run_episode(cfg.with_seed(s)) for s in range(4000)])
    assert rates["handover"] == pytest.approx(TARGET_HANDOVER, abs=0.017)


def test_reports():
    summary = calibration_summary()
    assert summary["atypical_probability"] == pytest.approx(DEFAULT_ATYPICAL_PROBABILITY, abs=5e-4)
    rep = precision_report()
    assert set(rep) == {"no_assembly_action", "reach", "flip_tabletop", "flip_table", "spin_leg",
                        "align_leg", "rotate_table", "human_grasp"}
    assert rep["human_grasp"]["reported"] == 0.27
