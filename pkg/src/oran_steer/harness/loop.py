"""In-process closed loop: simulator, optional malicious cells, RIC pipeline."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .. import netsim
from ..attack import AdversarialReport, AttackError, CellAttacker, QoeCategory, inject
from ..ric import TrafficSteeringRic, forecast_cell_qoe, per_ue_cell_throughput

logger = logging.getLogger(__name__)


@dataclass
class RunResult:
    """Everything a run produced. ``counts[t, i]`` is cell i's true UE count when batch t was emitted."""

    config: object
    cell_ids: list
    counts: np.ndarray
    injected: np.ndarray
    store: object = None
    crafts: list = field(default_factory=list)
    handovers: list = field(default_factory=list)
    decision_log: list = field(default_factory=list)
    error: str = None
    substitutes: dict = field(default_factory=dict)

    @property
    def iterations(self):
        return len(self.counts)

    @property
    def craft_outcomes(self):
        return [o for _, _, o in self.crafts if o is not None]


def _failed_report(R, original, target, reason):
    return AdversarialReport(R, np.zeros_like(R), R.copy(), original, target, original, 0, False,
                             0.0, reason)


class AttackController:
    """Drives the malicious cells: observe before the attack starts, then craft and inject."""

    def __init__(self, config, store=None):
        self.config = config
        cfg = config.attack
        self.cells = config.malicious_cells if cfg.enabled else []
        ric = config.ric
        self.attackers = {c: CellAttacker(c, cfg, config.topology.n_ues, config.radio.max_thp_bps,
                                          var_order=ric.var_order, qp_window=ric.qp_window,
                                          min_history=ric.min_history)
                          for c in self.cells}
        self.store = store

    @property
    def active(self):
        return bool(self.attackers)

    def _exact_label(self, cell_id, batch):
        """QP forecast for the cell over the RIC's stored reports, ending with the given batch's."""
        store = self.store
        w = self.config.ric.qp_window
        ci = store.cell_ids.index(cell_id)
        served = [u.pdcp_thp_dl for u in batch.ue_reports if u.serving_cell == cell_id]
        start = max(store.t0, batch.timestamp - w + 1) if store.t0 is not None else batch.timestamp
        if store.t0 is None or start >= batch.timestamp:
            hist_cell, hist_ue = np.empty(0), np.empty(0)
        else:
            rows = store.cell_table(start, batch.timestamp)[:, ci]
            hist_cell = per_ue_cell_throughput(rows)
            srv = store.serving_table(start, batch.timestamp) == ci
            thp = store.ue_table(start, batch.timestamp)[:, :, 0]
            hist_ue = np.where(srv.any(axis=1), (thp * srv).sum(axis=1) / np.maximum(srv.sum(axis=1), 1), 0.0)
        ue_now = float(np.mean(served)) if served else 0.0
        order = self.config.ric.var_order

        def label(vectors):
            vectors = np.atleast_2d(vectors)
            out = np.empty(len(vectors))
            for j, v in enumerate(vectors):
                cell = np.append(hist_cell, v[0] / max(round(v[2]), 1.0))
                ue = np.append(hist_ue, ue_now)
                try:
                    out[j] = forecast_cell_qoe(cell, ue, order)
                except ValueError:
                    out[j] = cell[-1]
            return out

        return label

    def process(self, batch):
        """Return the batch as the RIC will see it and the list of cells whose reports were replaced."""
        if not self.active:
            return batch, [], []
        cfg = self.config.attack
        t = batch.timestamp
        exact = cfg.oracle_mode == "exact"
        if t < cfg.attack_start:
            for cell, atk in self.attackers.items():
                label = None
                if exact and self.store is not None and self.store.t0 is not None \
                        and t - self.store.t0 >= self.config.ric.min_history:
                    label = float(self._exact_label(cell, batch)(batch.cell_report(cell).vector())[0])
                atk.observe(batch, label=label)
            return batch, [], []
        crafted, records = {}, []
        for cell, atk in self.attackers.items():
            if atk.substitute is None:
                atk.train()
                logger.info("%s substitute agreement %.3f, bins %s", cell, atk.substitute.agreement,
                            atk.substitute.bins.boundaries)
            label_fn = None
            if exact:
                qp = self._exact_label(cell, batch)
                sub = atk.substitute
                label_fn = lambda Z, qp=qp, sub=sub: sub.bins.index(qp(Z * sub.scale_std + sub.scale_mean))  # noqa: E731
            try:
                outcome = atk.craft(batch, label_fn)
            except AttackError as exc:
                R = batch.cell_report(cell).vector()
                current = int(atk.substitute.category(R)[0])
                outcome = _failed_report(R, current, min(current + 1, int(QoeCategory.EXCELLENT)), str(exc))
                logger.warning("craft failed for %s at %d: %s", cell, t, exc)
            records.append((t, cell, outcome))
            if outcome is not None:
                crafted[cell] = outcome
        batch, injected = inject(batch, set(self.attackers), crafted, self.config.topology.n_ues)
        return batch, injected, records


class SimulatorSide:
    """Network simulator plus the malicious cells' agents: produces the telemetry the RIC receives."""

    def __init__(self, config, store=None):
        self.config = config
        self.state = netsim.init_topology(config)
        self.controller = AttackController(config, store)
        self.cell_ids = self.state.cell_ids
        self.counts = []
        self.injected = []
        self.crafts = []
        self.handovers = []

    def next_batch(self, t):
        if t > 0:
            netsim.step_mobility(self.state)
        batch = netsim.emit_reports(self.state)
        self.counts.append(self.state.counts())
        batch, cells, records = self.controller.process(batch)
        self.crafts.extend(records)
        self.injected.append(np.isin(self.cell_ids, cells))
        return batch

    def apply(self, requests):
        for req in requests:
            netsim.apply_handover(self.state, req)
            self.handovers.append((req.issued_at, req.ue_id, req.target_cell))

    def result(self, store=None, decision_log=None, error=None):
        n = len(self.cell_ids)
        counts = np.array(self.counts, dtype=np.int64).reshape(-1, n)
        injected = np.array(self.injected, dtype=bool).reshape(-1, n)
        subs = {c: a.substitute for c, a in self.controller.attackers.items()
                if a.substitute is not None}
        return RunResult(self.config, self.cell_ids, counts, injected, store, self.crafts,
                         self.handovers, decision_log or [], error, subs)


class RicSide:
    """The RIC pipeline as a message handler: one batch in, handover requests out."""

    def __init__(self, config):
        self.ric = TrafficSteeringRic(config.ric, seed=config.seed)

    def handle(self, batch):
        self.ric.ingest(batch)
        return self.ric.step(batch.timestamp)


def run_closed_loop(config, iterations=None):
    """Run the loop for ``config.iterations`` steps and return a :class:`RunResult`.

    Errors inside any module stop the run; the partial result carries the
    diagnostic in ``error``.
    """
    config.validate()
    T = config.iterations if iterations is None else iterations
    ric = RicSide(config)
    sim = SimulatorSide(config, ric.ric.store)
    error = None
    t = 0
    try:
        for t in range(T):
            sim.apply(ric.handle(sim.next_batch(t)))
    except Exception as exc:  # noqa: BLE001 - surfaced as a diagnostic on the partial result
        logger.error("run aborted at iteration %d: %s", t, exc)
        error = f"iteration {t}: {type(exc).__name__}: {exc}"
        sim.counts = sim.counts[:t]
        sim.injected = sim.injected[:t]
    return sim.result(ric.ric.store, ric.ric.decision_log, error)
