"""Inlier-count confidence calibration.

Fits a one-feature logistic regression over labeled true/false-positive
outcomes and derives the smallest integer inlier count whose fitted
precision reaches the target (99.9%). Runs that produce no false positives
get a disabled threshold instead: there is nothing to separate.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import CalibrationError, DomainError, NonMonotoneModelError, SingleClassError

TARGET_PRECISION = 0.999
DEFAULT_L2 = 1e-4
DISABLED_NO_FALSE_POSITIVES = "no false positives"


@dataclass(frozen=True)
class LabeledOutcome:
    inlier_count: int
    is_true_positive: bool


@dataclass
class LogisticModel:
    a: float  # slope per inlier
    b: float  # intercept
    regularization: float
    loss_history: list[float] = field(default_factory=list, repr=False)


@dataclass(frozen=True)
class ThresholdDecision:
    t_inl: int | None = None
    disabled_reason: str | None = None

    def __post_init__(self):
        if (self.t_inl is None) == (self.disabled_reason is None):
            raise DomainError("exactly one of t_inl / disabled_reason must be set")


def _loss(params: np.ndarray, x: np.ndarray, y: np.ndarray, lam: float) -> float:
    a, b = params
    z = y * (a * x + b)
    return float(np.logaddexp(0.0, -z).sum() + lam * (a * a + b * b))


def fit_logistic(data: list[LabeledOutcome], lam: float = DEFAULT_L2) -> LogisticModel:
    """Newton's method on the L2-regularized logistic log-likelihood.

    Steps are halved whenever they would increase the loss, so the recorded
    loss history is monotone non-increasing.
    """
    x = np.array([d.inlier_count for d in data], dtype=float)
    y = np.array([1.0 if d.is_true_positive else -1.0 for d in data])
    if len(x) == 0 or np.all(y > 0) or np.all(y < 0):
        raise SingleClassError("calibration data must contain both classes")

    params = np.zeros(2)
    loss = _loss(params, x, y, lam)
    history = [loss]
    for _ in range(100):
        a, b = params
        z = a * x + b
        p = 1.0 / (1.0 + np.exp(-np.clip(z, -500, 500)))
        yy = (y + 1.0) / 2.0  # {0,1} labels
        grad = np.array([
            np.dot(x, p - yy) + 2.0 * lam * a,
            np.sum(p - yy) + 2.0 * lam * b,
        ])
        if np.linalg.norm(grad) < 1e-10:
            break
        w = p * (1.0 - p)
        hess = np.array([
            [np.dot(w, x * x) + 2.0 * lam, np.dot(w, x)],
            [np.dot(w, x), np.sum(w) + 2.0 * lam],
        ])
        try:
            step = np.linalg.solve(hess, grad)
        except np.linalg.LinAlgError:
            step = grad
        # backtracking keeps the loss monotone even on near-separable data
        new = params - step
        new_loss = _loss(new, x, y, lam)
        halvings = 0
        while new_loss > loss and halvings < 60:
            step = step / 2.0
            new = params - step
            new_loss = _loss(new, x, y, lam)
            halvings += 1
        if new_loss > loss:
            break
        params, loss = new, new_loss
        history.append(loss)
    return LogisticModel(a=float(params[0]), b=float(params[1]), regularization=lam,
                         loss_history=history)


def _sigmoid(t: float) -> float:
    if t >= 0:
        return 1.0 / (1.0 + math.exp(-t))
    e = math.exp(t)
    return e / (1.0 + e)


def derive_threshold(model: LogisticModel, target_precision: float = TARGET_PRECISION) -> ThresholdDecision:
    """Smallest integer count whose fitted probability reaches the target."""
    if model.a <= 0:
        raise NonMonotoneModelError(f"slope {model.a} is not positive")
    crossing = (math.log(target_precision / (1.0 - target_precision)) - model.b) / model.a
    t = math.ceil(crossing)
    # float-safe adjustment to the exact integer crossing
    while t > 0 and _sigmoid(model.a * (t - 1) + model.b) >= target_precision:
        t -= 1
    while _sigmoid(model.a * t + model.b) < target_precision:
        t += 1
    return ThresholdDecision(t_inl=max(0, t))


def calibrate_from_run(outcomes: list[LabeledOutcome]) -> ThresholdDecision:
    """Threshold from a labeled benchmark run; disabled when no false
    positives exist (nothing to reject)."""
    tps = [o for o in outcomes if o.is_true_positive]
    fps = [o for o in outcomes if not o.is_true_positive]
    if not tps:
        raise CalibrationError("no true positives: calibration impossible")
    if not fps:
        return ThresholdDecision(disabled_reason=DISABLED_NO_FALSE_POSITIVES)
    model = fit_logistic(outcomes, lam=DEFAULT_L2)
    return derive_threshold(model, TARGET_PRECISION)


def read_outcomes_csv(path) -> list[LabeledOutcome]:
    """Columns: query_id, candidate_rank, inlier_count, is_true_positive."""
    path = Path(path)
    out: list[LabeledOutcome] = []
    with path.open(newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or "inlier_count" not in reader.fieldnames:
            raise CalibrationError(f"{path}: missing header with inlier_count column")
        for row in reader:
            flag = row["is_true_positive"].strip().lower()
            out.append(LabeledOutcome(
                inlier_count=int(row["inlier_count"]),
                is_true_positive=flag in ("1", "true", "yes"),
            ))
    if not out:
        raise CalibrationError(f"{path}: no labeled outcomes")
    return out


def write_outcomes_csv(path, rows: list[tuple[str, int, int, bool]]) -> None:
    """Rows of (query_id, candidate_rank, inlier_count, is_true_positive)."""
    with Path(path).open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["query_id", "candidate_rank", "inlier_count", "is_true_positive"])
        for qid, rank, count, tp in rows:
            writer.writerow([qid, rank, count, "true" if tp else "false"])


def write_threshold_json(path, decision: ThresholdDecision, matcher: str, config: dict) -> None:
    payload: dict = {"matcher": matcher, "config": config}
    if decision.t_inl is not None:
        payload["t_inl"] = decision.t_inl
    else:
        payload["disabled_reason"] = decision.disabled_reason
    Path(path).write_text(json.dumps(payload, indent=2))


def load_threshold_json(path) -> tuple[ThresholdDecision, dict]:
    data = json.loads(Path(path).read_text())
    if "t_inl" in data:
        decision = ThresholdDecision(t_inl=int(data["t_inl"]))
    elif "disabled_reason" in data:
        decision = ThresholdDecision(disabled_reason=str(data["disabled_reason"]))
    else:
        raise CalibrationError(f"{path}: neither t_inl nor disabled_reason present")
    return decision, data
