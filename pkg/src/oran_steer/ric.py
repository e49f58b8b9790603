"""Miniature near-RT RIC: KPI store, anomaly-detection, QoE-prediction and traffic-steering xApps."""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .anomaly import IsolationForest
from .netsim import CELL_FIELDS, HandoverRequest

logger = logging.getLogger(__name__)

UE_FIELDS = ("pdcp_thp_dl", "pdcp_thp_ul", "prb_ratio_dl", "prb_ratio_ul", "rsrp", "rsrq", "snir")
AD_FEATURES = ("pdcp_thp_dl", "prb_ratio_dl", "rsrp", "rsrq", "snir")
QOE_SCALE = 1e6


class KpiOrderError(ValueError):
    pass


class InsufficientHistory(ValueError):
    pass


class KpiStore:
    """Append-only per-iteration KPI tables.

    Each ingested batch becomes one row block: UE metrics (ues x fields), UE
    serving cells and neighbour RSRP (ues x cells), and cell metrics
    (cells x fields). Batches must arrive with consecutive timestamps.
    """

    def __init__(self):
        self.t0 = None
        self.ue_ids = None
        self.cell_ids = None
        self._ue = []
        self._serving = []
        self._rsrp = []
        self._cell = []

    def __len__(self):
        return len(self._cell)

    @property
    def last_timestamp(self):
        return None if self.t0 is None else self.t0 + len(self) - 1

    def ingest(self, batch):
        expected = None if self.t0 is None else self.last_timestamp + 1
        if expected is not None and batch.timestamp != expected:
            raise KpiOrderError(f"batch timestamp {batch.timestamp} out of order (expected {expected})")
        ue_ids = [r.ue_id for r in batch.ue_reports]
        cell_ids = [r.cell_id for r in batch.cell_reports]
        stamps = {r.timestamp for r in batch.ue_reports} | {r.timestamp for r in batch.cell_reports}
        if stamps - {batch.timestamp}:
            raise KpiOrderError(f"batch {batch.timestamp} carries foreign timestamps {sorted(stamps)}")
        if self.t0 is not None and (ue_ids != self.ue_ids or cell_ids != self.cell_ids):
            raise ValueError("batch entity set differs from the store's")
        index = {c: i for i, c in enumerate(cell_ids)}
        ue = np.array([[getattr(r, f) for f in UE_FIELDS] for r in batch.ue_reports], dtype=float)
        serving = np.array([index[r.serving_cell] for r in batch.ue_reports], dtype=np.int64)
        rsrp = np.empty((len(ue_ids), len(cell_ids)))
        for j, r in enumerate(batch.ue_reports):
            rsrp[j, serving[j]] = r.rsrp
            for cid, v in r.neighbor_rsrp.items():
                rsrp[j, index[cid]] = v
        cell = np.array([[getattr(r, f) for f in CELL_FIELDS] for r in batch.cell_reports], dtype=float)
        # build everything before touching state so a failure leaves the store untouched
        if self.t0 is None:
            self.t0, self.ue_ids, self.cell_ids = batch.timestamp, ue_ids, cell_ids
        self._ue.append(ue)
        self._serving.append(serving)
        self._rsrp.append(rsrp)
        self._cell.append(cell)
        return self

    def _slice(self, start, stop):
        if self.t0 is None:
            raise KeyError("store is empty")
        lo, hi = start - self.t0, stop - self.t0
        if lo < 0 or hi > len(self) or lo > hi:
            raise KeyError(f"window [{start}, {stop}) outside stored range "
                           f"[{self.t0}, {self.last_timestamp + 1})")
        return lo, hi

    def has(self, t):
        return self.t0 is not None and self.t0 <= t <= self.last_timestamp

    def ue_table(self, start, stop):
        """UE metrics for iterations [start, stop): array (T, ues, fields)."""
        lo, hi = self._slice(start, stop)
        return np.stack(self._ue[lo:hi])

    def serving_table(self, start, stop):
        lo, hi = self._slice(start, stop)
        return np.stack(self._serving[lo:hi])

    def rsrp_table(self, start, stop):
        lo, hi = self._slice(start, stop)
        return np.stack(self._rsrp[lo:hi])

    def cell_table(self, start, stop):
        """Cell metrics for iterations [start, stop): array (T, cells, fields)."""
        lo, hi = self._slice(start, stop)
        return np.stack(self._cell[lo:hi])

    def ue_series(self, ue_id, field, start, stop):
        return self.ue_table(start, stop)[:, self.ue_ids.index(ue_id), UE_FIELDS.index(field)]

    def cell_series(self, cell_id, field, start, stop):
        return self.cell_table(start, stop)[:, self.cell_ids.index(cell_id), CELL_FIELDS.index(field)]

    def window(self, entity, start, stop):
        """Records of one UE (int id) or cell (str id) over [start, stop), one dict per iteration."""
        if entity in (self.cell_ids or []):
            rows = self.cell_table(start, stop)[:, self.cell_ids.index(entity)]
            names = CELL_FIELDS
        else:
            rows = self.ue_table(start, stop)[:, self.ue_ids.index(entity)]
            names = UE_FIELDS
        return [dict(zip(names, row), timestamp=start + k) for k, row in enumerate(rows)]


def per_ue_cell_throughput(cell_rows):
    """Reported cell throughput divided by reported UE count (count floored at 1)."""
    thp = cell_rows[..., CELL_FIELDS.index("throughput")]
    n = cell_rows[..., CELL_FIELDS.index("num_ues")]
    return thp / np.maximum(n, 1.0)


class VarModel(BaseEstimator):
    """Vector autoregression of order ``order`` fitted by least squares.

    Regressors are centred before solving, so the intercept is never
    penalised; a rank-deficient design falls back to ridge with ``ridge``.
    """

    def __init__(self, order=2, ridge=1e-6):
        self.order = order
        self.ridge = ridge

    @staticmethod
    def min_history(order, k):
        return order * k + order + 1

    def fit(self, Y):
        Y = np.asarray(Y, dtype=float)
        if Y.ndim == 1:
            Y = Y[:, None]
        T, k = Y.shape
        p = self.order
        if T < self.min_history(p, k):
            raise InsufficientHistory(f"VAR({p}) on {k} series needs {self.min_history(p, k)} "
                                      f"observations, got {T}")
        Z = np.hstack([Y[p - i - 1:T - i - 1] for i in range(p)])
        target = Y[p:]
        z_mean, y_mean = Z.mean(axis=0), target.mean(axis=0)
        Zc, Yc = Z - z_mean, target - y_mean
        gram = Zc.T @ Zc
        scale = max(float(np.trace(gram)) / gram.shape[0], 1e-300)
        if np.linalg.matrix_rank(gram / scale, tol=1e-10) < gram.shape[0]:
            warnings.warn("singular VAR design, using ridge fallback", RuntimeWarning, stacklevel=2)
            B = np.linalg.solve(gram + self.ridge * np.eye(gram.shape[0]), Zc.T @ Yc)
        else:
            B = np.linalg.lstsq(Zc, Yc, rcond=None)[0]
        self.coefs_ = np.stack([B[i * k:(i + 1) * k].T for i in range(p)])
        self.intercept_ = y_mean - B.T @ z_mean
        resid = Yc - Zc @ B
        self.sigma_u_ = resid.T @ resid / max(len(resid) - k * p - 1, 1)
        self.k_ = k
        return self

    def forecast(self, recent, steps=1):
        """Iterated ``steps``-ahead forecast from the last ``order`` rows of ``recent``."""
        check_is_fitted(self, "coefs_")
        hist = np.asarray(recent, dtype=float)
        if hist.ndim == 1:
            hist = hist[:, None]
        if steps == 0:
            return hist[-1].copy()
        if len(hist) < self.order:
            raise ValueError(f"need at least {self.order} recent observations")
        lags = [hist[-i - 1] for i in range(self.order)]
        y = None
        for _ in range(steps):
            y = self.intercept_ + sum(A @ lag for A, lag in zip(self.coefs_, lags))
            lags = [y] + lags[:-1]
        return y


@dataclass
class A1Policy:
    handover_margin: float = 0.0
    min_history: int = 20

    def __post_init__(self):
        if self.handover_margin < 0:
            raise ValueError("handover_margin must be >= 0")


@dataclass
class QoeForecast:
    ue_id: int
    candidate_cell: str
    horizon: int
    value: float


def ad_features(store, t):
    cols = [UE_FIELDS.index(f) for f in AD_FEATURES]
    return store.ue_table(t, t + 1)[0][:, cols]


def fit_ad_model(store, start, stop, n_trees=100, subsample_size=256, contamination=0.1, seed=0):
    cols = [UE_FIELDS.index(f) for f in AD_FEATURES]
    X = store.ue_table(start, stop)[:, :, cols].reshape(-1, len(cols))
    return IsolationForest(n_trees=n_trees, subsample_size=subsample_size,
                           contamination=contamination, random_state=seed).fit(X)


def ad_detect(store, model, t):
    """UE ids whose anomaly score at iteration ``t`` exceeds the model threshold."""
    if not store.has(t):
        raise KeyError(f"iteration {t} not in store")
    flagged = model.predict(ad_features(store, t))
    return [uid for uid, f in zip(store.ue_ids, flagged) if f]


def rsrp_gap_factor(rsrp_candidate, rsrp_serving):
    return float(np.clip(10.0 ** ((rsrp_candidate - rsrp_serving) / 10.0), 0.0, 2.0))


def qp_fit(store, ue, candidate, t, order=2, window=50, min_history=20):
    """Fit the bivariate VAR on (UE downlink throughput, candidate per-UE throughput) up to ``t``."""
    start = max(store.t0, t + 1 - window)
    if t + 1 - start < min_history:
        raise InsufficientHistory(f"{t + 1 - start} joint observations available, need {min_history}")
    Y = _qp_series(store, ue, candidate, start, t + 1)
    return VarModel(order=order).fit(Y), Y


def _qp_series(store, ue, candidate, start, stop):
    ue_thp = store.ue_series(ue, "pdcp_thp_dl", start, stop)
    cell_rows = store.cell_table(start, stop)[:, store.cell_ids.index(candidate)]
    return np.stack([ue_thp, per_ue_cell_throughput(cell_rows)], axis=1) / QOE_SCALE


def qp_forecast(model, recent, horizon=1, component=0):
    return float(model.forecast(recent, horizon)[component]) * QOE_SCALE


def forecast_cell_qoe(cell_series, ue_mean_series, order=2, horizon=1):
    """Candidate-component forecast for a cell from its own per-UE throughput history.

    The partner series is the mean downlink throughput of the cell's served
    UEs. Used as the attacker's label source (a replica of the QP flow) and by
    the exact-oracle access mode.
    """
    Y = np.stack([np.asarray(ue_mean_series, float), np.asarray(cell_series, float)], axis=1) / QOE_SCALE
    model = VarModel(order=order)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        model.fit(Y)
    return float(model.forecast(Y, horizon)[1]) * QOE_SCALE


def ts_decide(ue, serving_forecast, neighbor_forecasts, policy, issued_at=0, cell_order=None):
    """Hand over to the best neighbour iff it beats the serving forecast by more than the margin."""
    if not neighbor_forecasts:
        return None
    horizons = {f.horizon for f in neighbor_forecasts} | {serving_forecast.horizon}
    if len(horizons) != 1:
        raise ValueError(f"forecasts mix horizons {sorted(horizons)}")
    rank = (lambda c: cell_order.index(c)) if cell_order else (lambda c: c)
    best = min(neighbor_forecasts, key=lambda f: (-f.value, rank(f.candidate_cell)))
    if best.value > serving_forecast.value + policy.handover_margin:
        return HandoverRequest(ue, best.candidate_cell, issued_at)
    return None


class TrafficSteeringRic:
    """AD -> QP -> TS pipeline over a :class:`KpiStore`."""

    def __init__(self, ric_config, seed=0):
        self.cfg = ric_config
        self.policy = A1Policy(ric_config.handover_margin, ric_config.min_history)
        self.store = KpiStore()
        self.ad_model = None
        self.seed = seed
        self.decision_log = []

    def ingest(self, batch):
        self.store.ingest(batch)

    def neighbors(self, ue, t):
        j = self.store.ue_ids.index(ue)
        rsrp = self.store.rsrp_table(t, t + 1)[0, j]
        s = self.store.serving_table(t, t + 1)[0, j]
        keep = rsrp > rsrp[s] - self.cfg.neighbor_range_db
        return [cid for i, cid in enumerate(self.store.cell_ids) if keep[i] and i != s], rsrp, s

    def tenure(self, ue, t):
        """Consecutive iterations up to ``t`` that ``ue`` has spent on its current serving cell."""
        col = self.store.serving_table(self.store.t0, t + 1)[:, self.store.ue_ids.index(ue)]
        changed = np.flatnonzero(col != col[-1])
        return len(col) if changed.size == 0 else len(col) - 1 - int(changed[-1])

    def forecasts_for(self, ue, t):
        cfg = self.cfg
        neigh, rsrp, s = self.neighbors(ue, t)
        serving_id = self.store.cell_ids[s]
        window = min(cfg.qp_window, self.tenure(ue, t))
        model, Y = qp_fit(self.store, ue, serving_id, t, cfg.var_order, window, cfg.min_history)
        serving = QoeForecast(ue, serving_id, cfg.horizon, qp_forecast(model, Y, cfg.horizon, 0))
        out = []
        for cid in neigh:
            model, Y = qp_fit(self.store, ue, cid, t, cfg.var_order, window, cfg.min_history)
            gap = rsrp_gap_factor(rsrp[self.store.cell_ids.index(cid)], rsrp[s])
            out.append(QoeForecast(ue, cid, cfg.horizon, qp_forecast(model, Y, cfg.horizon, 1) * gap))
        return serving, out

    def step(self, t):
        """Run the xApp chain for iteration ``t``; returns handover requests."""
        cfg = self.cfg
        n_seen = t + 1 - self.store.t0
        if self.ad_model is None:
            if n_seen < cfg.ad_train_iterations:
                return []
            self.ad_model = fit_ad_model(self.store, self.store.t0, t + 1, cfg.ad_trees,
                                         cfg.ad_subsample, cfg.ad_contamination, self.seed)
        if n_seen < max(cfg.min_history, cfg.ad_train_iterations):
            return []
        requests = []
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            for ue in ad_detect(self.store, self.ad_model, t):
                try:
                    serving, neigh = self.forecasts_for(ue, t)
                except InsufficientHistory:
                    continue
                req = ts_decide(ue, serving, neigh, self.policy, t, self.store.cell_ids)
                self.decision_log.append((t, ue, serving.value,
                                          [(f.candidate_cell, f.value) for f in neigh],
                                          req.target_cell if req else None))
                if req is not None:
                    requests.append(req)
        return requests
