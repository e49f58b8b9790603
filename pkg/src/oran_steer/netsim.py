"""Cell/UE network simulator: mobility, log-distance radio, KPI reports, handovers.

The simulator state is a mutable :class:`NetworkState`; the module-level
operations update it in place and return it for chaining. Two independent
random streams are derived from the seed: one drives UE motion, the other
drives shadowing and PRB jitter. Neither stream is consumed conditionally on
handover decisions, so runs that differ only in RIC behaviour stay paired.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .config import ConfigError, ScenarioConfig

logger = logging.getLogger(__name__)


@dataclass
class CellNode:
    cell_id: str
    position: np.ndarray
    tx_power: float
    malicious: bool = False


@dataclass
class UeNode:
    ue_id: int
    position: np.ndarray
    velocity: np.ndarray
    serving_cell: str


@dataclass
class UeKpiReport:
    ue_id: int
    serving_cell: str
    timestamp: int
    pdcp_thp_dl: float
    pdcp_thp_ul: float
    prb_ratio_dl: float
    prb_ratio_ul: float
    rsrp: float
    rsrq: float
    snir: float
    position: tuple
    neighbor_rsrp: dict = field(default_factory=dict)

    def to_dict(self):
        return {**self.__dict__, "position": list(self.position)}

    @classmethod
    def from_dict(cls, d):
        return cls(**{**d, "position": tuple(d["position"])})


CELL_FIELDS = ("throughput", "meas_period_prb", "num_ues", "new_ues", "left_ues")
COUNT_FIELDS = ("num_ues", "new_ues", "left_ues")


@dataclass
class CellKpiReport:
    cell_id: str
    timestamp: int
    throughput: float
    meas_period_prb: float
    num_ues: int
    new_ues: int
    left_ues: int

    def vector(self):
        return np.array([getattr(self, f) for f in CELL_FIELDS], dtype=float)

    def with_vector(self, values):
        updates = {}
        for name, v in zip(CELL_FIELDS, values):
            updates[name] = int(round(float(v))) if name in COUNT_FIELDS else float(v)
        return CellKpiReport(self.cell_id, self.timestamp, **updates)

    def to_dict(self):
        return dict(self.__dict__)

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


@dataclass
class KpiReportBatch:
    timestamp: int
    ue_reports: list
    cell_reports: list

    def cell_report(self, cell_id):
        for rep in self.cell_reports:
            if rep.cell_id == cell_id:
                return rep
        raise KeyError(cell_id)

    def to_dict(self):
        return {"timestamp": self.timestamp,
                "ue_reports": [r.to_dict() for r in self.ue_reports],
                "cell_reports": [r.to_dict() for r in self.cell_reports]}

    @classmethod
    def from_dict(cls, d):
        return cls(d["timestamp"], [UeKpiReport.from_dict(r) for r in d["ue_reports"]],
                   [CellKpiReport.from_dict(r) for r in d["cell_reports"]])


@dataclass
class HandoverRequest:
    ue_id: int
    target_cell: str
    issued_at: int

    def to_dict(self):
        return dict(self.__dict__)


class HandoverRejected(ValueError):
    pass


@dataclass
class NetworkState:
    """Cells, UEs and serving edges. ``serving[j]`` indexes into ``cells``."""

    cells: list
    ue_ids: list
    positions: np.ndarray
    velocities: np.ndarray
    serving: np.ndarray
    bounds: tuple
    iteration: int
    rng_seed: int
    radio: object
    mobility: object
    mobility_rng: np.random.Generator
    radio_rng: np.random.Generator
    shadowing: np.ndarray = None
    prev_serving: np.ndarray = None

    @property
    def cell_ids(self):
        return [c.cell_id for c in self.cells]

    def cell_index(self, cell_id):
        return self.cell_ids.index(cell_id)

    @property
    def ues(self):
        return [UeNode(uid, self.positions[j].copy(), self.velocities[j].copy(),
                       self.cells[self.serving[j]].cell_id) for j, uid in enumerate(self.ue_ids)]

    @property
    def edges(self):
        return {(self.cells[s].cell_id, uid) for uid, s in zip(self.ue_ids, self.serving)}

    def counts(self):
        return np.bincount(self.serving, minlength=len(self.cells))


def init_topology(config: ScenarioConfig) -> NetworkState:
    topo = config.topology
    if len(topo.cells) < 1:
        raise ConfigError("at least one cell is required")
    if topo.n_ues < 1:
        raise ConfigError(f"UE count must be positive, got {topo.n_ues}")
    malicious = set(config.malicious_cells) if config.attack.enabled else set()
    cells = [CellNode(c.cell_id, np.asarray(c.position, dtype=float), float(c.tx_power),
                      c.malicious or c.cell_id in malicious) for c in topo.cells]
    init_seq, mob_seq, radio_seq = np.random.SeedSequence(config.seed).spawn(3)
    init_rng = np.random.default_rng(init_seq)
    bounds = tuple(float(b) for b in topo.bounds)
    m = topo.n_ues
    positions = init_rng.uniform((0.0, 0.0), bounds, size=(m, 2))
    heading = init_rng.uniform(0.0, 2.0 * np.pi, size=m)
    speed = init_rng.uniform(0.0, config.mobility.max_speed, size=m)
    velocities = np.stack([speed * np.cos(heading), speed * np.sin(heading)], axis=1)
    state = NetworkState(
        cells=cells, ue_ids=list(range(1, m + 1)), positions=positions, velocities=velocities,
        serving=np.zeros(m, dtype=np.int64), bounds=bounds, iteration=0, rng_seed=config.seed,
        radio=config.radio, mobility=config.mobility,
        mobility_rng=np.random.default_rng(mob_seq), radio_rng=np.random.default_rng(radio_seq),
        shadowing=np.zeros((m, len(cells))),
    )
    state.serving = np.argmax(mean_rsrp_matrix(state), axis=1)
    state.prev_serving = state.serving.copy()
    return state


def reflect(positions, velocities, bounds):
    """Mirror positions back into [0, bound] and flip the offending velocity components."""
    pos = positions.copy()
    vel = velocities.copy()
    for axis, hi in enumerate(bounds):
        for _ in range(4):
            low = pos[:, axis] < 0.0
            high = pos[:, axis] > hi
            if not (low.any() or high.any()):
                break
            pos[low, axis] = -pos[low, axis]
            pos[high, axis] = 2.0 * hi - pos[high, axis]
            vel[low | high, axis] = -vel[low | high, axis]
        pos[:, axis] = np.clip(pos[:, axis], 0.0, hi)
    return pos, vel


def step_mobility(state: NetworkState, noise=True) -> NetworkState:
    noise_term = 0.0
    if noise and state.mobility.sigma_move > 0:
        noise_term = state.mobility_rng.normal(0.0, state.mobility.sigma_move, size=state.positions.shape)
    state.positions, state.velocities = reflect(state.positions + state.velocities + noise_term,
                                                state.velocities, state.bounds)
    state.iteration += 1
    return state


def path_loss_db(distance, radio):
    d = np.maximum(np.asarray(distance, dtype=float), radio.d_min_m)
    return radio.pl0_db + 10.0 * radio.exponent * np.log10(d / radio.d0_m)


def mean_rsrp_matrix(state):
    """RSRP (dBm) of every cell at every UE without shadowing, shape (ues, cells)."""
    cell_pos = np.stack([c.position for c in state.cells])
    tx = np.array([c.tx_power for c in state.cells])
    dist = np.linalg.norm(state.positions[:, None, :] - cell_pos[None, :, :], axis=2)
    return tx[None, :] - path_loss_db(dist, state.radio)


def _dbm_to_mw(x):
    return np.power(10.0, np.asarray(x) / 10.0)


def _advance_shadowing(state):
    radio = state.radio
    draw = state.radio_rng.normal(0.0, 1.0, size=state.shadowing.shape)
    if not radio.shadowing:
        return
    rho = radio.shadowing_corr
    if state.iteration == 0:
        state.shadowing = radio.shadowing_sigma_db * draw
    else:
        state.shadowing = rho * state.shadowing + np.sqrt(1.0 - rho * rho) * radio.shadowing_sigma_db * draw


def radio_matrix(state):
    """Per-link (rsrp, rsrq, snir) arrays of shape (ues, cells), including current shadowing."""
    rsrp = mean_rsrp_matrix(state) - state.shadowing
    rx = _dbm_to_mw(rsrp)
    noise = _dbm_to_mw(state.radio.noise_dbm)
    total = rx.sum(axis=1, keepdims=True)
    snir = 10.0 * np.log10(rx / (noise + total - rx))
    rsrq = 10.0 * np.log10(rx / (noise + total))
    return rsrp, rsrq, snir


def compute_radio(state: NetworkState, ue: UeNode, cell: CellNode):
    """Radio quantities of a single link given the state's current shadowing."""
    rsrp_all, rsrq_all, snir_all = radio_matrix(state)
    j = state.ue_ids.index(ue.ue_id)
    i = state.cell_index(cell.cell_id)
    return float(rsrp_all[j, i]), float(rsrq_all[j, i]), float(snir_all[j, i])


def throughput(snir_db, prb_share, radio):
    rate = radio.bandwidth_hz * prb_share * np.log2(1.0 + _dbm_to_mw(snir_db))
    return np.clip(rate, 0.0, radio.max_thp_bps)


def emit_reports(state: NetworkState) -> KpiReportBatch:
    """Draw this iteration's shadowing and PRB jitter and report every UE and cell."""
    _advance_shadowing(state)
    jitter = state.radio_rng.normal(0.0, state.radio.prb_jitter_khz, size=len(state.cells))
    rsrp, rsrq, snir = radio_matrix(state)
    counts = state.counts()
    rows = np.arange(len(state.ue_ids))
    srv = state.serving
    share = 1.0 / np.maximum(counts[srv], 1)
    # with load sharing off every UE sees the full-band rate; prb ratios still report the share
    rate_share = share if state.radio.load_sharing else np.ones_like(share)
    thp_dl = throughput(snir[rows, srv], rate_share, state.radio)
    thp_ul = throughput(snir[rows, srv] - state.radio.ul_snir_offset_db, rate_share, state.radio)
    t = state.iteration
    cell_ids = state.cell_ids
    ue_reports = []
    for j, uid in enumerate(state.ue_ids):
        s = srv[j]
        ue_reports.append(UeKpiReport(
            ue_id=uid, serving_cell=cell_ids[s], timestamp=t,
            pdcp_thp_dl=float(thp_dl[j]), pdcp_thp_ul=float(thp_ul[j]),
            prb_ratio_dl=float(share[j]), prb_ratio_ul=float(share[j]),
            rsrp=float(rsrp[j, s]), rsrq=float(rsrq[j, s]), snir=float(snir[j, s]),
            position=(float(state.positions[j, 0]), float(state.positions[j, 1])),
            neighbor_rsrp={cid: float(rsrp[j, i]) for i, cid in enumerate(cell_ids) if i != s},
        ))
    cell_thp = np.bincount(srv, weights=thp_dl, minlength=len(cell_ids))
    moved = state.prev_serving != srv
    new = np.bincount(srv[moved], minlength=len(cell_ids))
    left = np.bincount(state.prev_serving[moved], minlength=len(cell_ids))
    cell_reports = [
        CellKpiReport(cell_id=cid, timestamp=t, throughput=float(cell_thp[i]),
                      meas_period_prb=float(state.radio.meas_period_prb_khz + jitter[i]),
                      num_ues=int(counts[i]), new_ues=int(new[i]), left_ues=int(left[i]))
        for i, cid in enumerate(cell_ids)
    ]
    state.prev_serving = srv.copy()
    return KpiReportBatch(t, ue_reports, cell_reports)


def apply_handover(state: NetworkState, req: HandoverRequest) -> NetworkState:
    if req.ue_id not in state.ue_ids:
        logger.warning("rejected handover for unknown UE %r", req.ue_id)
        raise HandoverRejected(f"unknown UE {req.ue_id!r}")
    if req.target_cell not in state.cell_ids:
        logger.warning("rejected handover to unknown cell %r", req.target_cell)
        raise HandoverRejected(f"unknown cell {req.target_cell!r}")
    j = state.ue_ids.index(req.ue_id)
    state.serving[j] = state.cell_index(req.target_cell)
    return state
