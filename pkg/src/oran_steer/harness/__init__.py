"""Closed-loop orchestration, split-process transport, metrics, exports and experiments."""

from .experiment import (DetectionSplits, ExperimentReport, evaluate_detection, gain_tables,
                         run_experiment, run_scenario, run_scenarios, scenario_configs)
from .export import counts_csv, detection_csv, gain_csv, sequence_csv, write_manifest
from .loop import AttackController, RicSide, RunResult, SimulatorSide, run_closed_loop
from .metrics import (DetectionMetrics, MetricsError, RunMetrics, compute_attack_gain,
                      compute_detection_metrics)
from .split import run_split
from .wire import LockstepChecker, ProtocolError, WireMessage, decode_frame, encode_frame

__all__ = [
    "DetectionSplits", "ExperimentReport", "evaluate_detection", "gain_tables", "run_experiment",
    "run_scenario", "run_scenarios", "scenario_configs", "counts_csv", "detection_csv",
    "gain_csv", "sequence_csv", "write_manifest", "AttackController", "RicSide", "RunResult",
    "SimulatorSide", "run_closed_loop", "DetectionMetrics", "MetricsError", "RunMetrics",
    "compute_attack_gain", "compute_detection_metrics", "run_split", "LockstepChecker",
    "ProtocolError", "WireMessage", "decode_frame", "encode_frame",
]
