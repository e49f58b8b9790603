"""Run summaries, paired attack gain and confusion-matrix detection metrics."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class MetricsError(ValueError):
    pass


@dataclass
class CellSummary:
    cell_id: str
    mean: float
    min: int
    max: int


@dataclass
class RunMetrics:
    """Per-iteration UE counts of one run plus their per-cell summary over ``[start, T)``."""

    cell_ids: list
    counts: np.ndarray
    start: int = 0
    detection: dict = field(default_factory=dict)
    losses: dict = field(default_factory=dict)

    @classmethod
    def from_result(cls, result, start=0):
        return cls(list(result.cell_ids), np.asarray(result.counts), start)

    def summary(self):
        seg = self.counts[self.start:]
        if len(seg) == 0:
            raise MetricsError(f"no iterations at or after {self.start}")
        return [CellSummary(c, float(seg[:, i].mean()), int(seg[:, i].min()), int(seg[:, i].max()))
                for i, c in enumerate(self.cell_ids)]


@dataclass
class GainRow:
    cell_id: str
    benign: CellSummary
    malicious: CellSummary
    pct: float


def compute_attack_gain(benign, malicious):
    """Per cell: both runs' mean/min/max and ``100 * malicious_mean / benign_mean``."""
    if list(benign.cell_ids) != list(malicious.cell_ids):
        raise MetricsError(f"paired runs disagree on cells: {benign.cell_ids} vs {malicious.cell_ids}")
    if benign.counts.shape[1] != malicious.counts.shape[1]:
        raise MetricsError("paired runs have different topologies")
    rows = []
    for b, m in zip(benign.summary(), malicious.summary()):
        pct = float("nan") if b.mean == 0 else 100.0 * m.mean / b.mean
        rows.append(GainRow(b.cell_id, b, m, pct))
    return rows


@dataclass(frozen=True)
class DetectionMetrics:
    tp: int
    fp: int
    fn: int
    tn: int

    @property
    def total(self):
        return self.tp + self.fp + self.fn + self.tn

    @property
    def accuracy(self):
        return (self.tp + self.tn) / self.total if self.total else 0.0

    @property
    def precision(self):
        d = self.tp + self.fp
        return self.tp / d if d else 0.0

    @property
    def recall(self):
        d = self.tp + self.fn
        return self.tp / d if d else 0.0

    @property
    def f1(self):
        p, r = self.precision, self.recall
        return 0.0 if p + r == 0 else 2 * p * r / (p + r)

    def as_dict(self):
        return {"tp": self.tp, "fp": self.fp, "fn": self.fn, "tn": self.tn,
                "accuracy": self.accuracy, "precision": self.precision,
                "recall": self.recall, "f1": self.f1}


def compute_detection_metrics(verdicts, ground_truth):
    pred = np.asarray(verdicts)
    truth = np.asarray(ground_truth)
    if pred.shape != truth.shape:
        raise MetricsError(f"{pred.shape[0] if pred.ndim else 0} verdicts vs "
                           f"{truth.shape[0] if truth.ndim else 0} labels")
    pred, truth = pred.astype(bool), truth.astype(bool)
    return DetectionMetrics(int(np.sum(pred & truth)), int(np.sum(pred & ~truth)),
                            int(np.sum(~pred & truth)), int(np.sum(~pred & ~truth)))
