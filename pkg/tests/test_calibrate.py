import json
import math

import numpy as np
import pytest

from earthmatch.calibrate import (
    DISABLED_NO_FALSE_POSITIVES,
    LabeledOutcome,
    LogisticModel,
    ThresholdDecision,
    calibrate_from_run,
    derive_threshold,
    fit_logistic,
    load_threshold_json,
    read_outcomes_csv,
    write_outcomes_csv,
    write_threshold_json,
)
from earthmatch.errors import (
    CalibrationError,
    DomainError,
    NonMonotoneModelError,
    SingleClassError,
)


def outcomes(fp_counts, tp_counts):
    data = [LabeledOutcome(int(c), False) for c in fp_counts]
    data += [LabeledOutcome(int(c), True) for c in tp_counts]
    return data


def sigmoid(t):
    return 1.0 / (1.0 + math.exp(-t))


def loss_at(a, b, data, lam):
    x = np.array([d.inlier_count for d in data], float)
    y = np.array([1.0 if d.is_true_positive else -1.0 for d in data])
    z = y * (a * x + b)
    return float(np.logaddexp(0.0, -z).sum() + lam * (a * a + b * b))


def test_fit_symmetric_midpoint():
    # unregularized: the objective is symmetric about the midpoint, so the
    # fit pins sigma(15) to one half exactly
    data = outcomes([10] * 50, [20] * 50)
    model = fit_logistic(data, lam=0.0)
    assert sigmoid(model.a * 15.0 + model.b) == pytest.approx(0.5, abs=1e-6)
    assert model.a > 0


def test_fit_large_lambda_limit():
    data = outcomes([10] * 20, [20] * 60)
    model = fit_logistic(data, lam=1e6)
    assert abs(model.a) < 1e-3
    assert model.b > 0  # toward log(n_tp / n_fp) > 0
    flipped = fit_logistic(outcomes([10] * 60, [20] * 20), lam=1e6)
    assert flipped.b < 0


def test_fit_single_class_error():
    with pytest.raises(SingleClassError):
        fit_logistic(outcomes([], [5, 6, 7]))
    with pytest.raises(SingleClassError):
        fit_logistic(outcomes([5, 6], []))


def test_fit_matches_grid_oracle():
    rng = np.random.default_rng(0)
    fp = rng.poisson(8.0, 60)
    tp = rng.poisson(20.0, 60)
    data = outcomes(fp, tp)
    lam = 1e-4
    model = fit_logistic(data, lam=lam)
    grid_best = min(
        loss_at(a, b, data, lam)
        for a in np.linspace(0.01, 1.5, 120)
        for b in np.linspace(-20.0, 2.0, 120)
    )
    newton_loss = loss_at(model.a, model.b, data, lam)
    assert newton_loss <= grid_best + 1e-3


def test_fit_loss_monotone():
    rng = np.random.default_rng(1)
    data = outcomes(rng.poisson(6.0, 40), rng.poisson(30.0, 40))
    model = fit_logistic(data)
    diffs = np.diff(model.loss_history)
    assert np.all(diffs <= 1e-12)


def test_fit_translation_covariance_unregularized():
    rng = np.random.default_rng(2)
    fp = rng.poisson(10.0, 80)
    tp = rng.poisson(18.0, 80)  # overlapping classes: MLE exists at lam=0
    base = fit_logistic(outcomes(fp, tp), lam=0.0)
    shifted = fit_logistic(outcomes(fp + 7, tp + 7), lam=0.0)
    cross_base = -base.b / base.a
    cross_shift = -shifted.b / shifted.a
    assert cross_shift - cross_base == pytest.approx(7.0, abs=1e-4)


def test_derive_threshold_known_crossings():
    # logit(0.999) = 6.9068; a=1, b=0 -> smallest integer at 7
    assert derive_threshold(LogisticModel(1.0, 0.0, 0.0)).t_inl == 7
    assert derive_threshold(LogisticModel(0.1, 0.0, 0.0)).t_inl == 70
    # saturated model: already above target at 0
    assert derive_threshold(LogisticModel(1.0, 10.0, 0.0)).t_inl == 0


def test_derive_threshold_integer_crossing_property():
    rng = np.random.default_rng(3)
    for _ in range(100):
        a = rng.uniform(0.02, 3.0)
        b = -rng.uniform(0.0, 40.0)
        t = derive_threshold(LogisticModel(a, b, 0.0)).t_inl
        assert sigmoid(a * t + b) >= 0.999
        if t > 0:
            assert sigmoid(a * (t - 1) + b) < 0.999


def test_derive_threshold_rejects_nonpositive_slope():
    with pytest.raises(NonMonotoneModelError):
        derive_threshold(LogisticModel(-0.5, 0.0, 0.0))


def test_calibrate_no_false_positives_disabled():
    decision = calibrate_from_run(outcomes([], [50, 60, 70]))
    assert decision.t_inl is None
    assert decision.disabled_reason == DISABLED_NO_FALSE_POSITIVES


def test_calibrate_no_true_positives_error():
    with pytest.raises(CalibrationError):
        calibrate_from_run(outcomes([3, 4], []))


def test_calibrate_separable_lands_between_classes():
    decision = calibrate_from_run(outcomes([3, 4, 5] * 20, list(range(50, 81)) * 20))
    assert decision.t_inl is not None
    assert 5 < decision.t_inl <= 50


def test_calibrate_single_extreme_fp_raises_threshold():
    """One highly confident false positive drags the threshold above its own
    count, discarding the lower-inlier true positives."""
    fp = [3, 4, 5] * 20 + [290]
    tp = list(range(295, 306)) * 20
    decision = calibrate_from_run(outcomes(fp, tp))
    assert decision.t_inl is not None
    assert decision.t_inl > 290
    assert decision.t_inl > min(tp)  # some true positives fall below the bar
    # without the extreme false positive the threshold sits under every TP
    clean = calibrate_from_run(outcomes([3, 4, 5] * 20, tp))
    assert clean.t_inl < min(tp)


def test_threshold_monotone_in_new_false_positives():
    fp = [3, 4, 5] * 10
    tp = list(range(30, 61)) * 5
    t0 = calibrate_from_run(outcomes(fp, tp)).t_inl
    t1 = calibrate_from_run(outcomes(fp + [max(t0, 30)], tp)).t_inl
    assert t1 >= t0


def test_threshold_decision_exactly_one_field():
    with pytest.raises(DomainError):
        ThresholdDecision()
    with pytest.raises(DomainError):
        ThresholdDecision(t_inl=5, disabled_reason="x")


def test_outcomes_csv_roundtrip(tmp_path):
    path = tmp_path / "outcomes.csv"
    write_outcomes_csv(path, [("q1", 1, 55, True), ("q2", 3, 4, False)])
    loaded = read_outcomes_csv(path)
    assert loaded == [LabeledOutcome(55, True), LabeledOutcome(4, False)]


def test_outcomes_csv_empty_rejected(tmp_path):
    path = tmp_path / "empty.csv"
    path.write_text("")
    with pytest.raises(CalibrationError):
        read_outcomes_csv(path)


def test_threshold_json_roundtrip(tmp_path):
    path = tmp_path / "thr.json"
    write_threshold_json(path, ThresholdDecision(t_inl=16), "builtin", {"image_side": 768})
    decision, meta = load_threshold_json(path)
    assert decision.t_inl == 16
    assert meta["matcher"] == "builtin"

    write_threshold_json(
        path, ThresholdDecision(disabled_reason=DISABLED_NO_FALSE_POSITIVES), "builtin", {}
    )
    decision, meta = load_threshold_json(path)
    assert decision.t_inl is None
    assert json.loads(path.read_text())["disabled_reason"] == DISABLED_NO_FALSE_POSITIVES
