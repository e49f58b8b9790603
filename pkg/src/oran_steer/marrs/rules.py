"""Threshold calibration, window verdicts and sequence rules."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

TRUSTED, UNTRUSTED = 0, 1
RULES = ("all", "majority")


@dataclass(frozen=True)
class Threshold:
    value: float
    policy: str

    def __post_init__(self):
        if not self.value >= 0:
            raise ValueError(f"threshold must be >= 0, got {self.value}")


@dataclass(frozen=True)
class Verdict:
    subject: object
    loss: float
    label: int


def f1_score(y_true, y_pred):
    y_true = np.asarray(y_true, dtype=bool)
    y_pred = np.asarray(y_pred, dtype=bool)
    tp = np.sum(y_true & y_pred)
    fp = np.sum(~y_true & y_pred)
    fn = np.sum(y_true & ~y_pred)
    denom = 2 * tp + fp + fn
    return 0.0 if denom == 0 else 2.0 * tp / denom


def max_f1_threshold(losses, labels):
    """Best-F1 threshold among midpoints of the sorted unique losses.

    Ties in F1 go to the smallest candidate. Returns ``(threshold, f1)``.
    """
    losses = np.asarray(losses, dtype=float)
    labels = np.asarray(labels).astype(bool)
    if labels.all() or not labels.any():
        raise ValueError("max-F1 calibration needs both benign and malicious losses")
    uniq = np.unique(losses)
    if len(uniq) == 1:
        candidates = uniq
    else:
        candidates = (uniq[:-1] + uniq[1:]) / 2.0
    order = np.argsort(losses)
    sorted_loss = losses[order]
    sorted_lab = labels[order]
    # positives predicted for threshold c: losses >= c
    pos_total = labels.sum()
    cum_pos = np.concatenate([[0], np.cumsum(sorted_lab)])
    below = np.searchsorted(sorted_loss, candidates, side="left")
    tp = pos_total - cum_pos[below]
    predicted = len(losses) - below
    fp = predicted - tp
    fn = pos_total - tp
    f1 = 2.0 * tp / np.maximum(2.0 * tp + fp + fn, 1)
    best = int(np.argmax(f1))
    return float(candidates[best]), float(f1[best])


def calibrate_threshold(losses, labels=None, policy="max_f1", quantile=0.99):
    losses = np.asarray(losses, dtype=float)
    if policy == "max_f1":
        if labels is None:
            raise ValueError("max-F1 calibration needs labels")
        value, _ = max_f1_threshold(losses, labels)
        return Threshold(max(value, 0.0), "max_f1")
    if policy == "benign_quantile":
        benign = losses if labels is None else losses[~np.asarray(labels).astype(bool)]
        return Threshold(float(np.quantile(benign, quantile)), f"benign_quantile:{quantile}")
    raise ValueError(f"unknown threshold policy {policy!r}")


def classify_loss(loss, threshold):
    """Window label: trusted iff the threshold is strictly above the loss."""
    t = threshold.value if isinstance(threshold, Threshold) else float(threshold)
    return np.where(t > np.asarray(loss, dtype=float), TRUSTED, UNTRUSTED)


def sequence_label(labels, rule, k):
    if k < 1:
        raise ValueError("sequence length must be >= 1")
    labels = np.asarray(labels).astype(int)
    if labels.shape[-1] != k:
        raise ValueError(f"expected {k} verdicts, got {labels.shape[-1]}")
    total = labels.sum(axis=-1)
    if rule == "majority":
        return (total >= (k + 1) / 2).astype(int)
    if rule == "all":
        return (total == k).astype(int)
    raise ValueError(f"unknown sequence rule {rule!r}")


def classify_sequence(losses, rule, k, threshold):
    """Verdict over ``k`` consecutive window losses under the All or Majority rule."""
    losses = np.asarray(losses, dtype=float)
    labels = classify_loss(losses, threshold)
    return Verdict(tuple(range(len(losses))), float(losses.mean()) if len(losses) else 0.0,
                   int(sequence_label(labels, rule, k)))
