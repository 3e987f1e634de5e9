from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from handover_sim.core import AtomicAction as A, ContractViolation, seeded_rng
from handover_sim.percept import (
    DEFAULT_PRIORS,
    TABLE_RECALL,
    RecognizerModel,
    SlidingWindowRecognizer,
    apply_confidence_bias,
    build_confusion_matrix,
    confusion_from_csv,
    confusion_to_csv,
    degrade_for_frame_rate,
    emergent_precision,
    load_confusion,
    save_confusion,
    synthesize_confidence,
    validate_confusion,
)

IDENTITY = np.eye(8)


def run_constant(model, action, n, seed=0):
    rec = SlidingWindowRecognizer(model, seeded_rng(seed, "test"))
    preds = []
    for k in range(1, n + model.window_len):
        p = rec.tick(k, action)
        if p is not None:
            preds.append(p)
    return preds[:n]


def test_first_fifteen_frames_are_buffered():
    rec = SlidingWindowRecognizer(RecognizerModel(confusion=IDENTITY), seeded_rng(0))
    outs = [rec.tick(k, A.SPIN_LEG) for k in range(1, 17)]
    assert all(o is None for o in outs[:15])
    assert outs[15] is not None and outs[15].frame_index == 16
    assert outs[15].label is A.SPIN_LEG


def test_identity_channel_reports_the_clip_centre():
    rec = SlidingWindowRecognizer(RecognizerModel(confusion=IDENTITY), seeded_rng(0))
    seq = [A.REACH] * 20 + [A.HUMAN_GRASP] * 20
    labels = {}
    for k, a in enumerate(seq, start=1):
        p = rec.tick(k, a)
        if p is not None:
            labels[k] = p.label
    # the grasp starts at frame 21 and shows up lag=8 frames later
    assert labels[28] is A.REACH and labels[29] is A.HUMAN_GRASP


def test_frames_must_be_consecutive():
    rec = SlidingWindowRecognizer(RecognizerModel(), seeded_rng(0))
    rec.tick(1, A.REACH)
    with pytest.raises(ContractViolation):
        rec.tick(3, A.REACH)


def test_grasp_rate_matches_table_recall_without_bias():
    preds = run_constant(RecognizerModel(no_assembly_scale=1.0), A.HUMAN_GRASP, 10_000)
    rate = np.mean([p.label is A.HUMAN_GRASP for p in preds])
    assert abs(rate - 0.17) <= 0.01


def test_raw_channel_draw_matches_recall_with_default_bias():
    preds = run_constant(RecognizerModel(), A.HUMAN_GRASP, 10_000)
    assert abs(np.mean([p.sampled is A.HUMAN_GRASP for p in preds]) - 0.17) <= 0.01


def test_live_grasp_rate_with_default_bias():
    model = RecognizerModel()
    preds = run_constant(model, A.HUMAN_GRASP, 20_000, seed=1)
    rate = np.mean([p.label is A.HUMAN_GRASP for p in preds])
    assert model.live_confusion()[7, 7] == pytest.approx(0.4937, abs=5e-4)
    assert abs(rate - model.live_confusion()[7, 7]) <= 0.012


def _chi2_ok(model, matrix, n=4000):
    # Pearson goodness of fit of every row against the predicted label distribution
    from scipy.stats import chi2

    for action in A:
        preds = run_constant(model, action, n, seed=int(action))
        counts = np.bincount([int(p.label) for p in preds], minlength=8)
        expected = matrix[int(action)] * n
        keep = expected > 0
        assert counts[~keep].sum() == 0, f"impossible label for {action.key}"
        if keep.sum() < 2:
            continue
        stat = float(((counts[keep] - expected[keep]) ** 2 / expected[keep]).sum())
        assert chi2.sf(stat, keep.sum() - 1) > 1e-4, f"{action.key}: chi2={stat:.1f}"


def test_labels_follow_confusion_without_bias():
    model = RecognizerModel(no_assembly_scale=1.0)
    _chi2_ok(model, model.confusion)


def test_labels_follow_live_confusion_with_bias():
    model = RecognizerModel()
    _chi2_ok(model, model.live_confusion())


def test_closed_form_label_equals_argmax_of_bias_correction():
    model = RecognizerModel()
    rec = SlidingWindowRecognizer(model, seeded_rng(0))
    rng = np.random.default_rng(0)
    for _ in range(3000):
        s, p = int(rng.integers(8)), int(rng.integers(8))
        u = float(rng.random())
        conf = synthesize_confidence(s, p, u, model.epsilon)
        _, want = apply_confidence_bias(conf, model.no_assembly_scale)
        assert rec._label(s, p, u) == int(want)


@settings(deadline=None)
@given(st.floats(0.0, 1.0), st.floats(0.0, 1.0))
def test_live_confusion_is_row_stochastic(scale, eps):
    scale = max(scale, 1e-3)
    eps = min(eps, 0.99)
    m = RecognizerModel(no_assembly_scale=scale, epsilon=eps).live_confusion()
    assert np.all(m >= -1e-15)
    assert np.allclose(m.sum(axis=1), 1.0)


def test_confusion_examples():
    assert np.array_equal(build_confusion_matrix([1.0] * 8), IDENTITY)
    m = build_confusion_matrix(TABLE_RECALL)
    assert m[int(A.REACH), int(A.REACH)] == 0.13
    m1 = build_confusion_matrix(TABLE_RECALL, beta=1.0)
    assert m1[int(A.SPIN_LEG), int(A.NO_ASSEMBLY_ACTION)] == pytest.approx(0.39)


@given(st.lists(st.floats(0, 1), min_size=8, max_size=8), st.floats(0, 1),
       st.sampled_from(["no_assembly_bias", "priors"]))
def test_confusion_rows_sum_to_one(recall, beta, policy):
    m = build_confusion_matrix(recall, DEFAULT_PRIORS, beta, policy)
    assert np.allclose(m.sum(axis=1), 1.0)
    assert np.all(m >= 0)
    assert np.allclose(np.diag(m), recall)


def test_confusion_validation():
    with pytest.raises(ValueError):
        build_confusion_matrix([0.5] * 7)
    with pytest.raises(ValueError):
        build_confusion_matrix([1.2] + [0.5] * 7)
    with pytest.raises(ValueError):
        validate_confusion(np.full((8, 8), 0.2))
    with pytest.raises(ValueError):
        RecognizerModel(no_assembly_scale=0.0)


def test_bias_examples():
    conf = np.zeros(8)
    conf[0], conf[7] = 0.6, 0.4
    adj, label = apply_confidence_bias(conf, 0.5)
    assert adj[0] == pytest.approx(0.3) and label is A.HUMAN_GRASP
    _, plain = apply_confidence_bias(conf, 1.0)
    assert plain is A.NO_ASSEMBLY_ACTION == A(int(np.argmax(conf)))


def test_bias_composes():
    rng = np.random.default_rng(7)
    for _ in range(2000):
        c = rng.dirichlet(np.ones(8))
        twice, l2 = apply_confidence_bias(apply_confidence_bias(c, 0.5)[0], 0.5)
        once, l1 = apply_confidence_bias(c, 0.25)
        assert l1 is l2


def test_frame_rate_degradation():
    m = build_confusion_matrix(TABLE_RECALL)
    assert degrade_for_frame_rate(m, 10.0, 10.0, 1.0) is m
    d = degrade_for_frame_rate(m, 5.0, 10.0, 1.0)
    assert np.allclose(np.diag(d), 0.5 * np.diag(m))
    assert np.allclose(d.sum(axis=1), 1.0)


def test_csv_round_trip(tmp_path):
    m = build_confusion_matrix(TABLE_RECALL)
    assert np.array_equal(confusion_from_csv(confusion_to_csv(m)), m)
    save_confusion(m, tmp_path / "c.csv")
    assert np.array_equal(load_confusion(tmp_path / "c.csv"), m)
    with pytest.raises(ValueError):
        confusion_from_csv("a,b\n1,2\n")


def test_emergent_precision_identity():
    assert np.allclose(emergent_precision(IDENTITY), 1.0)
