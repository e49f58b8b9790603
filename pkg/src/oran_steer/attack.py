"""Adversarial cell-KPI attack on the QoE predictor.

A malicious cell trains a substitute of the QoE predictor on its own report
history, then perturbs each outgoing cell report with a decision-based
(HopSkipJump-style) boundary search so that the substitute places it one QoE
category higher. Only the malicious cell's telemetry changes; the simulator's
ground truth is never touched.
"""

from __future__ import annotations

import enum
import logging
from dataclasses import dataclass, field

import numpy as np

from .netsim import CELL_FIELDS, COUNT_FIELDS, KpiReportBatch
from .nn.models import DenseRegressor
from .ric import forecast_cell_qoe

logger = logging.getLogger(__name__)


class QoeCategory(enum.IntEnum):
    POOR = 0
    AVERAGE = 1
    GOOD = 2
    EXCELLENT = 3


@dataclass(frozen=True)
class QoeBins:
    """Three increasing boundaries splitting QoE into half-open bins."""

    boundaries: tuple

    def __post_init__(self):
        b = np.asarray(self.boundaries, dtype=float)
        if b.shape != (3,) or not np.all(np.diff(b) > 0):
            raise ValueError(f"boundaries must be three strictly increasing values, got {self.boundaries}")

    @classmethod
    def from_quartiles(cls, qoe):
        return cls(tuple(float(v) for v in np.quantile(np.asarray(qoe, float), [0.25, 0.5, 0.75])))

    def index(self, qoe):
        return np.searchsorted(np.asarray(self.boundaries), np.asarray(qoe, float), side="right")


def categorize(qoe, bins):
    return QoeCategory(int(bins.index(qoe)))


class AttackError(RuntimeError):
    pass


@dataclass
class AttackBudget:
    max_l2: float = 3.0
    query_budget: int = 25_000
    clamp_low: np.ndarray = None
    clamp_high: np.ndarray = None
    iterations: int = 20
    directions: int = 100
    binary_tol: float = 1e-3

    def __post_init__(self):
        if self.max_l2 <= 0:
            raise ValueError("max_l2 must be positive")
        if self.query_budget < 1:
            raise ValueError("query_budget must be positive")

    @classmethod
    def for_cells(cls, n_ues, max_thp_bps, **kwargs):
        """Physical box: non-negative fields, counts at most the UE population."""
        low = np.zeros(len(CELL_FIELDS))
        high = np.array([n_ues * max_thp_bps, np.inf, n_ues, n_ues, n_ues], dtype=float)
        return cls(clamp_low=low, clamp_high=high, **kwargs)


@dataclass
class SubstituteModel:
    """Regressor from cell report fields to forecast QoE, plus the categorizer."""

    regressor: DenseRegressor
    bins: QoeBins
    scale_mean: np.ndarray
    scale_std: np.ndarray
    pool: np.ndarray
    agreement: float = float("nan")

    def predict_qoe(self, X):
        return self.regressor.predict(np.atleast_2d(X))

    def category(self, X):
        return self.bins.index(self.predict_qoe(X))


@dataclass
class AdversarialReport:
    original: np.ndarray
    perturbation: np.ndarray
    adversarial: np.ndarray
    original_category: int
    target_category: int
    achieved_category: int
    query_count: int
    success: bool
    l2: float
    reason: str = ""


def collect_substitute_data(observations, n=None):
    """Latest ``n`` labelled (cell report vector, QoE) pairs from an observation log."""
    X = np.array([o[0] for o in observations], dtype=float).reshape(-1, len(CELL_FIELDS))
    y = np.array([o[1] for o in observations], dtype=float)
    if n is None:
        return X, y
    if n > len(X):
        raise AttackError(f"requested {n} samples but only {len(X)} observations exist")
    return X[len(X) - n:], y[len(y) - n:]


def train_substitute(X, y, hidden=(32, 32), epochs=300, min_agreement=0.8, max_attempts=5,
                     seed=0, min_samples=50, bins=None):
    """Fit the substitute and check categorical agreement on a held-out 20 % split.

    ``bins`` fixes the QoE levels; by default they are the quartiles of ``y``.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    if len(X) < min_samples:
        raise AttackError(f"substitute needs at least {min_samples} samples, got {len(X)}")
    mean = X.mean(axis=0)
    std = X.std(axis=0)
    std = np.where(std > 0, std, 1.0)
    if bins is not None:
        bins = bins if isinstance(bins, QoeBins) else QoeBins(tuple(bins))
    elif np.ptp(y) == 0:
        bins = QoeBins((y[0] - 2.0, y[0] - 1.0, y[0] + 1.0))
    else:
        bins = QoeBins.from_quartiles(y)
    best = None
    for attempt in range(max_attempts):
        rng = np.random.default_rng(seed + attempt)
        order = rng.permutation(len(X))
        n_test = max(1, len(X) // 5)
        test, train_idx = order[:n_test], order[n_test:]
        reg = DenseRegressor(hidden=tuple(hidden), epochs=epochs, seed=seed + attempt)
        reg.fit(X[train_idx], y[train_idx])
        agreement = float(np.mean(bins.index(reg.predict(X[test])) == bins.index(y[test])))
        logger.info("substitute attempt %d: held-out agreement %.3f", attempt, agreement)
        if best is None or agreement > best[1]:
            best = (reg, agreement)
        if agreement >= min_agreement:
            return SubstituteModel(reg, bins, mean, std, X.copy(), agreement)
    raise AttackError(f"substitute agreement {best[1]:.3f} below {min_agreement} "
                      f"after {max_attempts} attempts")


class _BudgetExhausted(Exception):
    pass


class _CountingOracle:
    """Hard-label oracle in standardized coordinates that counts and caps evaluations."""

    def __init__(self, label_fn, target, budget):
        self.label_fn = label_fn
        self.target = target
        self.budget = budget
        self.count = 0

    def __call__(self, Z):
        Z = np.atleast_2d(Z)
        if self.count + len(Z) > self.budget:
            raise _BudgetExhausted
        self.count += len(Z)
        return self.label_fn(Z) >= self.target


def _binary_search(oracle, z0, z_adv, tol):
    lo, hi = 0.0, 1.0
    dist = float(np.linalg.norm(z_adv - z0))
    while (hi - lo) * dist > tol:
        mid = (lo + hi) / 2.0
        if oracle(z0 + mid * (z_adv - z0))[0]:
            hi = mid
        else:
            lo = mid
    return z0 + hi * (z_adv - z0)


def hop_skip_jump(oracle, z0, z_init, low, high, iterations, directions, tol, rng):
    """Targeted L2 boundary attack using only the oracle's hard labels.

    Returns the adversarial point closest to ``z0`` that was found; the
    best-so-far distance history is recorded on the returned tuple.
    """
    clip = lambda z: np.clip(z, low, high)  # noqa: E731
    x = _binary_search(oracle, z0, z_init, tol)
    best = x.copy()
    history = [float(np.linalg.norm(best - z0))]
    d = len(z0)
    try:
        for it in range(1, iterations + 1):
            dist = float(np.linalg.norm(x - z0))
            if dist <= tol:
                break
            probe = max(dist / d, tol)
            u = rng.normal(size=(directions, d))
            u /= np.linalg.norm(u, axis=1, keepdims=True)
            signs = np.where(oracle(clip(x + probe * u)), 1.0, -1.0)
            if abs(signs.mean()) < 1.0:
                signs = signs - signs.mean()
            grad = (signs[:, None] * u).mean(axis=0)
            norm = np.linalg.norm(grad)
            if norm == 0:
                continue
            grad /= norm
            step = dist / np.sqrt(it)
            candidate = clip(x + step * grad)
            halvings = 0
            while not oracle(candidate)[0]:
                step /= 2.0
                halvings += 1
                if halvings > 20:
                    candidate = None
                    break
                candidate = clip(x + step * grad)
            if candidate is None:
                continue
            x = _binary_search(oracle, z0, candidate, tol)
            if np.linalg.norm(x - z0) < np.linalg.norm(best - z0):
                best = x.copy()
            history.append(float(np.linalg.norm(best - z0)))
    except _BudgetExhausted:
        pass
    return best, history


def craft_adversarial(model, R, target, budget, seed=0, label_fn=None):
    """Perturb report vector ``R`` so the (substitute) categorizer reaches ``target``.

    ``label_fn`` overrides the hard-label source (standardized input); it
    defaults to the substitute's categorizer.
    """
    R = np.asarray(R, dtype=float)
    mean, std = model.scale_mean, model.scale_std
    to_z = lambda v: (v - mean) / std  # noqa: E731
    from_z = lambda z: z * std + mean  # noqa: E731
    labels = label_fn or (lambda Z: model.category(from_z(Z)))
    oracle = _CountingOracle(labels, int(target), budget.query_budget)
    low = to_z(budget.clamp_low) if budget.clamp_low is not None else np.full(len(R), -np.inf)
    high = to_z(budget.clamp_high) if budget.clamp_high is not None else np.full(len(R), np.inf)
    z0 = to_z(R)

    def result(z, success, reason=""):
        adv = from_z(z)
        achieved = int(labels(z[None])[0]) if success else original
        return AdversarialReport(R, adv - R, adv, original, int(target), achieved,
                                 oracle.count, success, float(np.linalg.norm(z - z0)), reason)

    original = int(oracle.label_fn(z0[None])[0])
    oracle.count += 1
    if original >= target:
        return result(z0, True, "already in target category")
    try:
        pool = np.clip(to_z(model.pool), low, high)
        hits = oracle(pool)
    except _BudgetExhausted:
        return result(z0, False, "query budget exhausted")
    if not hits.any():
        raise AttackError(f"no sample of category >= {int(target)} available to start from")
    candidates = pool[hits]
    z_init = candidates[np.argmin(np.linalg.norm(candidates - z0, axis=1))]
    rng = np.random.default_rng(seed)
    try:
        best, _ = hop_skip_jump(oracle, z0, z_init, low, high, budget.iterations,
                                budget.directions, budget.binary_tol, rng)
    except _BudgetExhausted:
        return result(z0, False, "query budget exhausted")
    if np.linalg.norm(best - z0) > budget.max_l2:
        return result(z0, False, f"perturbation {np.linalg.norm(best - z0):.3f} exceeds max_l2")
    return result(best, True)


def report_is_plausible(report, true_report, n_ues):
    values = report.vector()
    if not np.all(np.isfinite(values)) or report.throughput < 0 or report.meas_period_prb < 0:
        return False
    if min(report.num_ues, report.new_ues, report.left_ues) < 0:
        return False
    return abs(report.num_ues - true_report.num_ues) <= n_ues


def inject(batch, malicious_cells, crafted, n_ues):
    """Replace malicious cells' reports with their crafted versions.

    Returns ``(new_batch, injected_ids)``. UE reports and benign cells' reports
    are passed through unchanged. A crafted report that fails the plausibility
    checks after count rounding is dropped and the original is sent.
    """
    injected = []
    reports = []
    for rep in batch.cell_reports:
        adv = crafted.get(rep.cell_id) if rep.cell_id in malicious_cells else None
        if adv is None or not adv.success or not np.any(adv.perturbation):
            reports.append(rep)
            continue
        candidate = rep.with_vector(adv.adversarial)
        if not report_is_plausible(candidate, rep, n_ues):
            logger.warning("dropped implausible crafted report for %s at %d", rep.cell_id, rep.timestamp)
            reports.append(rep)
            continue
        reports.append(candidate)
        injected.append(rep.cell_id)
    return KpiReportBatch(batch.timestamp, batch.ue_reports, reports), injected


@dataclass
class CellAttacker:
    """Malicious-cell agent: observes its own telemetry, trains a substitute, crafts reports."""

    cell_id: str
    config: object
    n_ues: int
    max_thp_bps: float
    var_order: int = 2
    qp_window: int = 50
    min_history: int = 20
    bins: object = None
    observations: list = field(default_factory=list)
    substitute: SubstituteModel = None
    outcomes: list = field(default_factory=list)
    _cell_series: list = field(default_factory=list)
    _ue_series: list = field(default_factory=list)

    def observe(self, batch, label=None):
        """Record the cell's true report; ``label`` overrides the replica QP label (exact oracle)."""
        rep = batch.cell_report(self.cell_id)
        served = [u.pdcp_thp_dl for u in batch.ue_reports if u.serving_cell == self.cell_id]
        self._cell_series.append(rep.throughput / max(rep.num_ues, 1))
        self._ue_series.append(float(np.mean(served)) if served else 0.0)
        if label is None and len(self._cell_series) >= self.min_history:
            w = self.qp_window
            label = forecast_cell_qoe(self._cell_series[-w:], self._ue_series[-w:], self.var_order)
        if label is not None:
            self.observations.append((rep.vector(), label))

    def train(self):
        cfg = self.config
        X, y = collect_substitute_data(self.observations)
        self.substitute = train_substitute(X, y, cfg.substitute_hidden, cfg.substitute_epochs,
                                           cfg.min_agreement, cfg.max_attempts, cfg.seed,
                                           bins=self.bins)
        return self.substitute

    def budget(self):
        cfg = self.config
        return AttackBudget.for_cells(self.n_ues, self.max_thp_bps, max_l2=cfg.max_l2,
                                      query_budget=cfg.query_budget, iterations=cfg.hsj_iterations,
                                      directions=cfg.hsj_directions, binary_tol=cfg.binary_tol)

    def craft(self, batch, label_fn=None):
        rep = batch.cell_report(self.cell_id)
        R = rep.vector()
        current = int(self.substitute.category(R)[0])
        if current >= QoeCategory.EXCELLENT:
            outcome = None
        else:
            seed = self.config.seed * 1_000_003 + batch.timestamp
            outcome = craft_adversarial(self.substitute, R, current + 1, self.budget(), seed, label_fn)
        self.outcomes.append((batch.timestamp, outcome))
        return outcome
