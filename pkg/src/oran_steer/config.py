"""Scenario configuration: nested dataclasses loaded from JSON with strict key checking."""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from typing import Optional


class ConfigError(ValueError):
    pass


@dataclass
class CellSpec:
    cell_id: str
    position: tuple
    tx_power: float = 30.0
    malicious: bool = False


def _default_cells():
    layout = [
        ("BS1", (170.0, 250.0), 30.0),
        ("BS2", (500.0, 250.0), 27.0),
        ("BS3", (830.0, 250.0), 33.0),
        ("BS4", (170.0, 750.0), 27.0),
        ("BS5", (500.0, 750.0), 25.0),
        ("BS6", (830.0, 750.0), 33.0),
    ]
    return [CellSpec(cid, pos, p) for cid, pos, p in layout]


@dataclass
class TopologyConfig:
    bounds: tuple = (1000.0, 1000.0)
    cells: list = field(default_factory=_default_cells)
    n_ues: int = 50


@dataclass
class RadioConfig:
    pl0_db: float = 40.0
    d0_m: float = 1.0
    exponent: float = 3.5
    shadowing: bool = True
    shadowing_sigma_db: float = 4.0
    shadowing_corr: float = 0.9
    noise_dbm: float = -97.0
    d_min_m: float = 1.0
    bandwidth_hz: float = 10e6
    max_thp_bps: float = 100e6
    load_sharing: bool = False
    ul_snir_offset_db: float = 3.0
    meas_period_prb_khz: float = 180.0
    prb_jitter_khz: float = 1.0


@dataclass
class MobilityConfig:
    max_speed: float = 3.0
    sigma_move: float = 3.0


@dataclass
class RicConfig:
    var_order: int = 2
    horizon: int = 1
    min_history: int = 20
    qp_window: int = 50
    handover_margin: float = 0.0
    neighbor_range_db: float = 20.0
    ad_trees: int = 100
    ad_subsample: int = 256
    ad_contamination: float = 0.1
    ad_train_iterations: int = 50


@dataclass
class AttackConfig:
    enabled: bool = False
    malicious_cells: list = field(default_factory=list)
    attack_start: int = 150
    oracle_mode: str = "substitute"
    max_l2: float = 3.0
    query_budget: int = 25_000
    hsj_iterations: int = 20
    hsj_directions: int = 100
    binary_tol: float = 1e-3
    substitute_hidden: tuple = (32, 32)
    substitute_epochs: int = 300
    min_agreement: float = 0.8
    max_attempts: int = 5
    seed: int = 0


@dataclass
class DetectionConfig:
    window_len: int = 10
    latent_dim: int = 8
    hidden_size: int = 16
    n_layers: int = 1
    epochs: int = 200
    batch_size: int = 32
    lr: float = 1e-3
    train_fraction: float = 0.8
    threshold_policy: str = "max_f1"
    quantile: float = 0.99
    benign_ratio: float = 4.0
    lae_latent: int = 4
    ocsvm_nu: float = 0.1
    seq_lengths: tuple = (3, 5, 7)
    train_seed: Optional[int] = None
    seed: int = 0


@dataclass
class ScenarioConfig:
    topology: TopologyConfig = field(default_factory=TopologyConfig)
    radio: RadioConfig = field(default_factory=RadioConfig)
    mobility: MobilityConfig = field(default_factory=MobilityConfig)
    ric: RicConfig = field(default_factory=RicConfig)
    attack: AttackConfig = field(default_factory=AttackConfig)
    detection: DetectionConfig = field(default_factory=DetectionConfig)
    iterations: int = 500
    seed: int = 7
    mode: str = "in_process"

    def validate(self):
        topo = self.topology
        if len(topo.cells) < 1:
            raise ConfigError("topology needs at least one cell")
        if topo.n_ues < 1:
            raise ConfigError(f"n_ues must be >= 1, got {topo.n_ues}")
        ids = [c.cell_id for c in topo.cells]
        if len(set(ids)) != len(ids):
            raise ConfigError(f"duplicate cell ids: {ids}")
        if self.iterations < 1:
            raise ConfigError("iterations must be >= 1")
        if self.mode not in ("in_process", "split"):
            raise ConfigError(f"unknown mode {self.mode!r}")
        if self.ric.handover_margin < 0:
            raise ConfigError("handover_margin must be >= 0")
        unknown = set(self.attack.malicious_cells) - set(ids)
        if unknown:
            raise ConfigError(f"malicious cells not in topology: {sorted(unknown)}")
        if self.attack.oracle_mode not in ("substitute", "exact"):
            raise ConfigError(f"unknown oracle_mode {self.attack.oracle_mode!r}")
        if self.attack.oracle_mode == "exact" and self.mode == "split":
            raise ConfigError("exact-oracle attacks need in-process access to the QP")
        if self.attack.max_l2 <= 0:
            raise ConfigError("max_l2 must be positive")
        if self.detection.threshold_policy not in ("max_f1", "benign_quantile"):
            raise ConfigError(f"unknown threshold policy {self.detection.threshold_policy!r}")
        return self

    @property
    def malicious_cells(self):
        flagged = {c.cell_id for c in self.topology.cells if c.malicious}
        return sorted(flagged | set(self.attack.malicious_cells),
                      key=[c.cell_id for c in self.topology.cells].index)

    def to_dict(self):
        return dataclasses.asdict(self)

    def fingerprint(self):
        blob = json.dumps(_jsonable(self.to_dict()), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()

    def replace(self, **blocks):
        """Copy with whole blocks or nested fields replaced, e.g. ``replace(attack={"enabled": True})``."""
        data = self.to_dict()
        for key, value in blocks.items():
            if isinstance(value, dict) and isinstance(data.get(key), dict):
                data[key] = {**data[key], **value}
            else:
                data[key] = value
        return from_dict(data)


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    return obj


def _build(cls, data, path):
    if not isinstance(data, dict):
        raise ConfigError(f"{path or 'config'} must be an object")
    names = {f.name: f for f in dataclasses.fields(cls)}
    unknown = set(data) - set(names)
    if unknown:
        raise ConfigError(f"unknown keys in {path or 'config'}: {sorted(unknown)}")
    kwargs = {}
    for key, value in data.items():
        sub = _NESTED.get((cls, key))
        where = f"{path}.{key}" if path else key
        if sub is list:
            kwargs[key] = [_build(CellSpec, v, f"{where}[{i}]") for i, v in enumerate(value)]
        elif sub is not None:
            kwargs[key] = _build(sub, value, where)
        elif isinstance(value, list) and key in ("position", "bounds", "substitute_hidden",
                                                 "seq_lengths"):
            kwargs[key] = tuple(value)
        else:
            kwargs[key] = value
    try:
        return cls(**kwargs)
    except TypeError as exc:
        raise ConfigError(f"{path or 'config'}: {exc}") from exc


_NESTED = {
    (ScenarioConfig, "topology"): TopologyConfig,
    (ScenarioConfig, "radio"): RadioConfig,
    (ScenarioConfig, "mobility"): MobilityConfig,
    (ScenarioConfig, "ric"): RicConfig,
    (ScenarioConfig, "attack"): AttackConfig,
    (ScenarioConfig, "detection"): DetectionConfig,
    (TopologyConfig, "cells"): list,
}


def from_dict(data):
    return _build(ScenarioConfig, data, "").validate()


def load_config(path):
    with open(path) as fh:
        return from_dict(json.load(fh))


def save_config(config, path):
    with open(path, "w") as fh:
        json.dump(_jsonable(config.to_dict()), fh, indent=2, sort_keys=True)
