"""Command line entry point: ``oran-steer <command> --seed N [options]``."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from .config import ConfigError, ScenarioConfig, load_config, save_config
from .harness import export
from .harness.experiment import (DetectionSplits, balanced_subset, build_corpus, evaluate_detection,
                                 gain_tables, run_experiment, run_scenario, run_scenarios,
                                 scenario_configs, sequence_sweep)
from .harness.metrics import compute_detection_metrics
from .marrs import classify_loss, load_bundle, save_bundle

logger = logging.getLogger("oran_steer")

ATTACKS = ("sas", "mas")


def _config(args):
    cfg = load_config(args.config) if args.config else ScenarioConfig()
    top = {"seed": args.seed}
    if args.iterations is not None:
        top["iterations"] = args.iterations
    if args.mode is not None:
        top["mode"] = args.mode
    return cfg.replace(**top)


def _write_config(cfg, out):
    path = out / "config.json"
    out.mkdir(parents=True, exist_ok=True)
    save_config(cfg, path)
    return path


def _attacks(args):
    return ATTACKS if args.scenario == "both" else (args.scenario,)


def cmd_run(args):
    cfg = _config(args)
    res = run_scenario(cfg)
    out = Path(args.out)
    files = [export.counts_csv(out / "counts.csv", res.cell_ids, res.counts, res.injected),
             _write_config(cfg, out)]
    export.write_manifest(out / "manifest.json", cfg, files,
                          {"handovers": len(res.handovers), "injections": int(res.injected.sum())})
    print(f"{res.iterations} iterations, {len(res.handovers)} handovers -> {out}")


def cmd_attack(args):
    cfg = _config(args)
    runs = run_scenarios(cfg, ("benign", *_attacks(args)))
    out = Path(args.out)
    files = [_write_config(cfg, out)]
    for name, res in runs.items():
        files.append(export.counts_csv(out / f"counts_{name}.csv", res.cell_ids, res.counts,
                                       res.injected))
    for name, rows in gain_tables(runs).items():
        files.append(export.gain_csv(out / f"gain_{name}.csv", rows, name))
        for r in rows:
            print(f"{name} {r.cell_id}: {r.benign.mean:.2f} -> {r.malicious.mean:.2f} ({r.pct:.1f}%)")
    export.write_manifest(out / "manifest.json", cfg, files)


def cmd_train_detect(args):
    cfg = _config(args)
    runs = run_scenarios(cfg, ("benign", *_attacks(args)))
    rep = evaluate_detection(runs, cfg, segments=(4,), benchmarks=False, ablations=False)
    save_bundle(args.bundle, rep.detector, rep.scalers, cfg.fingerprint())
    m = rep.methods["marrs"]
    print(f"threshold {m.threshold:.4f} (validation F1 {m.validation_f1:.3f}) -> {args.bundle}")


def _scored_test_set(args, cfg):
    detector, scalers, fingerprint = load_bundle(args.bundle)
    if fingerprint and fingerprint != cfg.fingerprint():
        logger.warning("bundle was trained under a different configuration")
    runs = {name: run_scenario(c) for name, c in scenario_configs(cfg).items()
            if name in _attacks(args)}
    corpus = build_corpus(runs, scalers, cfg.detection.window_len)
    return detector, corpus


def cmd_evaluate(args):
    cfg = _config(args)
    detector, corpus = _scored_test_set(args, cfg)
    splits = DetectionSplits.default(cfg)
    items = corpus.index(*splits.test)
    labels = corpus.labels(items)
    keep = balanced_subset(labels, cfg.detection.benign_ratio,
                           np.random.default_rng(cfg.detection.seed))
    items = [items[i] for i in keep]
    scores = {run: detector.score(corpus.windows[run]) for run in corpus.windows}
    losses = np.array([scores[r][c][i] for r, c, i in items])
    metrics = compute_detection_metrics(classify_loss(losses, detector.threshold_), labels[keep])
    out = Path(args.out)
    files = [export.detection_csv(out / "detection.csv", {"marrs": metrics}), _write_config(cfg, out)]
    export.write_manifest(out / "manifest.json", cfg, files)
    print(f"F1 {metrics.f1:.3f} precision {metrics.precision:.3f} recall {metrics.recall:.3f}")


def cmd_sweep_seq(args):
    cfg = _config(args)
    detector, corpus = _scored_test_set(args, cfg)
    splits = DetectionSplits.default(cfg)
    scores = {run: detector.score(corpus.windows[run]) for run in corpus.windows}
    lengths = args.lengths or cfg.detection.seq_lengths
    sweep = sequence_sweep(scores, corpus, *splits.test, detector.threshold_.value, lengths,
                           cfg.detection.benign_ratio, cfg.detection.seed)
    out = Path(args.out)
    files = [export.sequence_csv(out / "sequence.csv", sweep), _write_config(cfg, out)]
    export.write_manifest(out / "manifest.json", cfg, files)
    for k, rule, m in sweep:
        print(f"k={k} {rule}: F1 {m.f1:.3f}")


def cmd_experiment(args):
    cfg = _config(args)
    rep = run_experiment(cfg, segments=(1, 4) if args.data_over_time else (4,))
    out = Path(args.out)
    files = [_write_config(cfg, out)]
    for name, res in rep.runs.items():
        files.append(export.counts_csv(out / f"counts_{name}.csv", res.cell_ids, res.counts,
                                       res.injected))
    for name, rows in rep.gains.items():
        files.append(export.gain_csv(out / f"gain_{name}.csv", rows, name))
    files.append(export.detection_csv(out / "detection.csv",
                                      {k: v.metrics for k, v in rep.methods.items()}))
    files.append(export.detection_csv(out / "data_over_time.csv",
                                      {f"x{k}": v.metrics for k, v in rep.data_over_time.items()}))
    files.append(export.sequence_csv(out / "sequence.csv", rep.sequence))
    if rep.detector is not None:
        save_bundle(out / "detector.bundle", rep.detector, rep.scalers, cfg.fingerprint())
        files.append(out / "detector.bundle")
    export.write_manifest(out / "manifest.json", cfg, files,
                          {"splits": {"train": list(rep.splits.train),
                                      "validation": list(rep.splits.validation),
                                      "test": list(rep.splits.test)},
                           "n_validation": rep.n_validation, "n_test": rep.n_test})
    for k, v in rep.methods.items():
        print(f"{k}: F1 {v.metrics.f1:.3f}")
    print(f"results -> {out}")


def build_parser():
    parser = argparse.ArgumentParser(prog="oran-steer",
                                     description="Traffic-steering closed loop, KPI falsification "
                                                 "attack and autoencoder defence.")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, required=True, help="master seed (required)")
    common.add_argument("--config", help="ScenarioConfig JSON file")
    common.add_argument("--iterations", type=int, help="override the number of iterations")
    common.add_argument("--mode", choices=("in_process", "split"), help="override the run mode")
    common.add_argument("--out", default="results", help="output directory")
    common.add_argument("--log-level", default="WARNING")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, fn, help_):
        p = sub.add_parser(name, parents=[common], help=help_)
        p.set_defaults(func=fn)
        return p

    add("run", cmd_run, "one closed-loop run as configured")
    for name, fn, help_ in (("attack", cmd_attack, "paired benign and attack runs, attack gain"),
                            ("train-detect", cmd_train_detect, "train and calibrate the detector"),
                            ("evaluate", cmd_evaluate, "score a saved detector on the test range"),
                            ("sweep-seq", cmd_sweep_seq, "sequence-rule sweep of a saved detector")):
        p = add(name, fn, help_)
        p.add_argument("--scenario", choices=(*ATTACKS, "both"), default="both")
        if name != "attack":
            p.add_argument("--bundle", default="detector.bundle", help="detector bundle path")
    sub.choices["sweep-seq"].add_argument("--lengths", type=int, nargs="+")
    p = add("experiment", cmd_experiment, "every scenario, detector and table")
    p.add_argument("--no-data-over-time", dest="data_over_time", action="store_false")
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=args.log_level.upper(), format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except (ConfigError, OSError, ValueError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
