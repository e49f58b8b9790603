"""Per-cell feature matrix: reported cell KPIs plus aggregates of the served UEs."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..netsim import CELL_FIELDS
from ..ric import UE_FIELDS

FEATURE_NAMES = (
    "Throughput", "MeasPeriodPrb", "Number_UEs", "New_UEs", "Left_UEs",
    "ThpDl_Mean", "ThpDl_Std", "Rssnir_Mean", "Rssnir_Std", "Rsrp_Mean", "Rsrp_Std",
)
N_FEATURES = len(FEATURE_NAMES)
_UE_AGG = ("pdcp_thp_dl", "snir", "rsrp")


class StandardizationLeak(RuntimeError):
    """Raised when scaler statistics would be recomputed outside training."""


@dataclass
class FeatureWindow:
    cell_id: str
    start: int
    matrix: np.ndarray
    zero_ue: np.ndarray


def raw_feature_table(store, cell_id, start, stop):
    """Unstandardized (T, 11) features and a per-row flag for iterations with no served UE.

    Cell columns come from the cell's own (possibly falsified) report. UE
    aggregates use population statistics over the UEs whose reports name the
    cell as serving.
    """
    ci = store.cell_ids.index(cell_id)
    cells = store.cell_table(start, stop)[:, ci, :]
    ues = store.ue_table(start, stop)
    served = store.serving_table(start, stop) == ci
    cols = [cells[:, CELL_FIELDS.index(f)] for f in CELL_FIELDS]
    count = served.sum(axis=1)
    safe = np.maximum(count, 1)
    for field in _UE_AGG:
        vals = np.where(served, ues[:, :, UE_FIELDS.index(field)], 0.0)
        mean = vals.sum(axis=1) / safe
        sq = np.where(served, (ues[:, :, UE_FIELDS.index(field)] - mean[:, None]) ** 2, 0.0)
        std = np.sqrt(sq.sum(axis=1) / safe)
        cols += [np.where(count > 0, mean, 0.0), np.where(count > 0, std, 0.0)]
    return np.stack(cols, axis=1), count == 0


class FeatureScaler:
    """Column standardizer whose statistics can be fitted exactly once."""

    def __init__(self):
        self.mean_ = None
        self.scale_ = None

    @property
    def fitted(self):
        return self.mean_ is not None

    def fit(self, table):
        if self.fitted:
            raise StandardizationLeak("scaler already fitted; refitting would use non-training data")
        table = np.asarray(table, dtype=float)
        self.mean_ = table.mean(axis=0)
        std = table.std(axis=0)
        self.scale_ = np.where(std > 0, std, 1.0)
        return self

    def transform(self, table):
        if not self.fitted:
            raise StandardizationLeak("scaler has no training statistics")
        return (np.asarray(table, dtype=float) - self.mean_) / self.scale_

    def state(self):
        return {"mean": self.mean_, "scale": self.scale_}

    @classmethod
    def from_state(cls, mean, scale):
        obj = cls()
        obj.mean_, obj.scale_ = np.asarray(mean, float), np.asarray(scale, float)
        return obj


def sliding_windows(table, window_len):
    """Stride-1 windows of a (T, F) table, shape (T - W + 1, W, F); empty when T < W."""
    table = np.asarray(table, dtype=float)
    T = len(table)
    if T < window_len:
        return np.empty((0, window_len, table.shape[1]))
    idx = np.arange(T - window_len + 1)[:, None] + np.arange(window_len)[None, :]
    return table[idx]


def extract_features(store, cell_id, start, stop, window_len=10, scaler=None):
    """Standardized sliding windows of one cell over iterations [start, stop).

    With ``scaler=None`` the call is in training mode: a new scaler is fitted
    on this range and returned. Otherwise the supplied training statistics
    are applied unchanged. Returns ``(windows, scaler)``.
    """
    table, zero = raw_feature_table(store, cell_id, start, stop)
    if scaler is None:
        scaler = FeatureScaler().fit(table)
    scaled = scaler.transform(table)
    mats = sliding_windows(scaled, window_len)
    flags = sliding_windows(zero[:, None].astype(float), window_len)[..., 0].astype(bool)
    windows = [FeatureWindow(cell_id, start + i, mats[i], flags[i]) for i in range(len(mats))]
    return windows, scaler


def stack_windows(windows):
    if not windows:
        return np.empty((0, 0, N_FEATURES))
    return np.stack([w.matrix for w in windows])
