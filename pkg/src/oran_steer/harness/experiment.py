"""Paired scenarios and the detection evaluation built on them.

Pipeline: a benign run, single- and multi-attacker runs sharing its mobility
stream, per-cell detectors trained on the benign run's first part, threshold
calibration on labelled attack windows, and evaluation on a disjoint range.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from sklearn.metrics import roc_auc_score

from ..anomaly import IsolationForest, LinearAutoencoder, OneClassSVM
from ..marrs import (Ae1Detector, Ae1PlusDetector, MarrsDetector, calibrate_threshold,
                     classify_loss, extract_features, max_f1_threshold, sequence_label,
                     stack_windows)
from ..marrs.rules import RULES
from .loop import run_closed_loop
from .metrics import RunMetrics, compute_attack_gain, compute_detection_metrics
from .split import run_split

logger = logging.getLogger(__name__)

SAS_CELLS = ("BS5",)
MAS_CELLS = ("BS1", "BS5")


def scenario_configs(config, sas_cells=SAS_CELLS, mas_cells=MAS_CELLS):
    """Benign, single-attacker and multi-attacker variants of one configuration."""
    benign = config.replace(attack={"enabled": False, "malicious_cells": []})
    return {
        "benign": benign,
        "sas": config.replace(attack={"enabled": True, "malicious_cells": list(sas_cells)}),
        "mas": config.replace(attack={"enabled": True, "malicious_cells": list(mas_cells)}),
    }


def run_scenario(config):
    runner = run_split if config.mode == "split" else run_closed_loop
    result = runner(config)
    if result.error:
        raise RuntimeError(f"scenario aborted: {result.error}")
    return result


def run_scenarios(config, names=("benign", "sas", "mas"), **cells):
    configs = scenario_configs(config, **cells)
    return {name: run_scenario(configs[name]) for name in names}


def gain_tables(runs, start=None):
    """Per attack scenario, the paired gain table over iterations ``[start, T)``."""
    out = {}
    for name, res in runs.items():
        if name == "benign":
            continue
        s = res.config.attack.attack_start if start is None else start
        out[name] = compute_attack_gain(RunMetrics.from_result(runs["benign"], s),
                                        RunMetrics.from_result(res, s))
    return out


def window_truth(injected, window_len):
    """True for windows that contain at least one injected report, per column of ``injected``."""
    flags = np.asarray(injected, dtype=np.int64)
    csum = np.concatenate([np.zeros((1, flags.shape[1]), dtype=np.int64), np.cumsum(flags, axis=0)])
    return (csum[window_len:] - csum[:-window_len]) > 0


@dataclass
class DetectionSplits:
    """Iteration ranges of the evaluation; windows must lie entirely inside a range."""

    train: tuple
    validation: tuple
    test: tuple

    @classmethod
    def default(cls, config):
        T = config.iterations
        cut = int(config.detection.train_fraction * T)
        return cls((0, cut), (cut, T), (config.attack.attack_start, cut))


@dataclass
class WindowCorpus:
    """Standardized windows of every evaluated run, with per-window ground truth."""

    window_len: int
    cells: list
    windows: dict  # run -> cell -> (N, W, F)
    truth: dict  # run -> cell -> (N,) bool
    starts: np.ndarray

    def index(self, lo, hi):
        """(run, cell, window) triples for windows within [lo, hi), in a fixed order."""
        sel = np.flatnonzero((self.starts >= lo) & (self.starts + self.window_len <= hi))
        return [(run, cell, int(i)) for run in sorted(self.windows) for cell in self.cells
                for i in sel]

    def labels(self, items):
        return np.array([self.truth[r][c][i] for r, c, i in items], dtype=bool)


def build_training_windows(store, cells, lo, hi, window_len):
    train, scalers = {}, {}
    for c in cells:
        ws, scalers[c] = extract_features(store, c, lo, hi, window_len)
        train[c] = stack_windows(ws)
    return train, scalers


def build_corpus(runs, scalers, window_len):
    cells = list(scalers)
    windows, truth = {}, {}
    T = None
    for name, res in runs.items():
        T = res.iterations
        windows[name] = {c: stack_windows(extract_features(res.store, c, 0, T, window_len,
                                                           scalers[c])[0]) for c in cells}
        mal = set(res.config.malicious_cells) if res.config.attack.enabled else set()
        wt = window_truth(res.injected, window_len)
        truth[name] = {c: wt[:, res.cell_ids.index(c)] & (c in mal) for c in cells}
    return WindowCorpus(window_len, cells, windows, truth, np.arange(T - window_len + 1))


def balanced_subset(labels, ratio, rng):
    """Indices keeping every positive and at most ``ratio`` negatives per positive."""
    pos = np.flatnonzero(labels)
    neg = np.flatnonzero(~labels)
    keep = min(len(neg), int(round(ratio * len(pos)))) if len(pos) else len(neg)
    neg = rng.choice(neg, size=keep, replace=False) if keep < len(neg) else neg
    return np.sort(np.concatenate([pos, neg]))


class WindowScorer:
    """Uniform scoring interface: losses for every corpus window, keyed like the corpus."""

    def __init__(self, name, score_fn):
        self.name = name
        self.score_fn = score_fn

    def scores(self, corpus):
        return {run: self.score_fn(corpus.windows[run]) for run in corpus.windows}


def _flat_scorer(model):
    def score(windows_by_cell):
        return {c: model.anomaly_score(w.reshape(len(w), -1)) for c, w in windows_by_cell.items()}
    return score


def _gather(scores, items):
    return np.array([scores[r][c][i] for r, c, i in items])


@dataclass
class MethodResult:
    name: str
    threshold: float
    validation_f1: float
    metrics: object
    test_auc: float = float("nan")
    test_scores: np.ndarray = field(repr=False, default=None)


def evaluate_scorer(scorer, corpus, val_items, test_items, policy="max_f1", quantile=0.99):
    scores = scorer.scores(corpus)
    sv, yv = _gather(scores, val_items), corpus.labels(val_items)
    st, yt = _gather(scores, test_items), corpus.labels(test_items)
    if policy == "max_f1":
        thr, vf1 = max_f1_threshold(sv, yv)
    else:
        thr = calibrate_threshold(sv, yv, policy, quantile).value
        vf1 = float("nan")
    pred = classify_loss(st, thr)
    auc = float(roc_auc_score(yt, st)) if 0 < yt.sum() < len(yt) else float("nan")
    return MethodResult(scorer.name, float(thr), vf1, compute_detection_metrics(pred, yt), auc, st)


def sequence_sweep(scores, corpus, lo, hi, threshold, lengths, ratio, seed):
    """Sequence verdicts over ``k`` consecutive windows with homogeneous ground truth.

    Returns rows ``(k, rule, DetectionMetrics)``.
    """
    W = corpus.window_len
    rows = []
    for k in lengths:
        losses, truth = [], []
        starts = np.flatnonzero((corpus.starts >= lo) & (corpus.starts + W + k - 1 <= hi))
        for run in sorted(corpus.windows):
            for c in corpus.cells:
                s, y = scores[run][c], corpus.truth[run][c]
                for i in starts:
                    seg = y[i:i + k]
                    if seg.all() or not seg.any():
                        losses.append(s[i:i + k])
                        truth.append(bool(seg[0]))
        losses, truth = np.array(losses), np.array(truth)
        keep = balanced_subset(truth, ratio, np.random.default_rng(seed + k))
        labels = classify_loss(losses[keep], threshold)
        for rule in RULES:
            pred = sequence_label(labels, rule, k)
            rows.append((k, rule, compute_detection_metrics(pred, truth[keep])))
    return rows


@dataclass
class ExperimentReport:
    gains: dict
    splits: DetectionSplits
    methods: dict
    data_over_time: dict
    sequence: list
    n_validation: int
    n_test: int
    runs: dict = field(default=None, repr=False)
    detector: object = field(default=None, repr=False)
    scalers: dict = field(default=None, repr=False)


def _detector_params(det_cfg, seed):
    return dict(hidden_size=det_cfg.hidden_size, latent_dim=det_cfg.latent_dim,
                n_layers=det_cfg.n_layers, epochs=det_cfg.epochs, batch_size=det_cfg.batch_size,
                lr=det_cfg.lr, seed=seed)


def train_marrs(store, cells, lo, hi, det_cfg):
    train, scalers = build_training_windows(store, cells, lo, hi, det_cfg.window_len)
    detector = MarrsDetector(**_detector_params(det_cfg, det_cfg.seed)).fit(train)
    return detector, scalers, train


def training_store(runs, config):
    """The benign store used for training: the paired run, or an independent one if configured."""
    det = config.detection
    if det.train_seed is None:
        return runs["benign"].store
    cfg = scenario_configs(config)["benign"].replace(seed=det.train_seed)
    return run_scenario(cfg).store


def evaluate_detection(runs, config, splits=None, segments=(1, 4), benchmarks=True,
                       ablations=True):
    """Train every detector on benign data and score them on the shared validation/test sets."""
    det = config.detection
    splits = splits or DetectionSplits.default(config)
    cells = runs["benign"].cell_ids
    store = training_store(runs, config)
    lo, hi = splits.train
    detector, scalers, train = train_marrs(store, cells, lo, hi, det)
    attack_runs = {k: v for k, v in runs.items() if k != "benign"}
    corpus = build_corpus(attack_runs, scalers, det.window_len)
    rng = np.random.default_rng(det.seed)
    val_all = corpus.index(*splits.validation)
    test_all = corpus.index(*splits.test)
    val_items = [val_all[i] for i in balanced_subset(corpus.labels(val_all), det.benign_ratio, rng)]
    test_items = [test_all[i] for i in balanced_subset(corpus.labels(test_all), det.benign_ratio, rng)]
    logger.info("validation %d windows (%d malicious), test %d (%d malicious)", len(val_items),
                corpus.labels(val_items).sum(), len(test_items), corpus.labels(test_items).sum())

    scorers = [WindowScorer("marrs", detector.score)]
    if ablations:
        scorers.append(WindowScorer("ae1", Ae1Detector.from_stage_one(detector).score))
        plus = Ae1PlusDetector(**_detector_params(det, det.seed)).fit(train)
        scorers.append(WindowScorer("ae1_plus", plus.score))
    if benchmarks:
        flat = np.concatenate([w.reshape(len(w), -1) for w in train.values()])
        scorers += [
            WindowScorer("linear_ae", _flat_scorer(LinearAutoencoder(
                latent_dim=det.lae_latent, epochs=det.epochs, batch_size=det.batch_size,
                lr=det.lr, seed=det.seed).fit(flat))),
            WindowScorer("iforest", _flat_scorer(IsolationForest(
                n_trees=config.ric.ad_trees, subsample_size=config.ric.ad_subsample,
                contamination=config.ric.ad_contamination, random_state=det.seed).fit(flat))),
            WindowScorer("ocsvm", _flat_scorer(OneClassSVM(nu=det.ocsvm_nu).fit(flat))),
        ]
    methods = {}
    for scorer in scorers:
        methods[scorer.name] = evaluate_scorer(scorer, corpus, val_items, test_items,
                                               det.threshold_policy, det.quantile)
        m = methods[scorer.name].metrics
        logger.info("%s: test F1 %.3f precision %.3f recall %.3f AUC %.3f", scorer.name, m.f1,
                    m.precision, m.recall, methods[scorer.name].test_auc)
    detector.threshold_ = calibrate_threshold(
        _gather(scorers[0].scores(corpus), val_items), corpus.labels(val_items),
        det.threshold_policy, det.quantile)

    data_over_time = {}
    span = hi - lo
    for n_seg in segments:
        seg_hi = lo + span * n_seg // 4
        if n_seg == 4:
            data_over_time[n_seg] = methods["marrs"]
            continue
        sub_det, sub_scalers, _ = train_marrs(store, cells, lo, seg_hi, det)
        sub_corpus = build_corpus(attack_runs, sub_scalers, det.window_len)
        data_over_time[n_seg] = evaluate_scorer(WindowScorer("marrs", sub_det.score), sub_corpus,
                                                val_items, test_items, det.threshold_policy,
                                                det.quantile)

    sweep = sequence_sweep(scorers[0].scores(corpus), corpus, *splits.test,
                           detector.threshold_.value, det.seq_lengths, det.benign_ratio, det.seed)
    return ExperimentReport({}, splits, methods, data_over_time, sweep, len(val_items),
                            len(test_items), runs, detector, scalers)


def run_experiment(config, segments=(1, 4), benchmarks=True, ablations=True):
    """Benign, SAS and MAS runs, their gain tables, and the full detection evaluation."""
    runs = run_scenarios(config)
    report = evaluate_detection(runs, config, segments=segments, benchmarks=benchmarks,
                                ablations=ablations)
    report.gains = gain_tables(runs)
    return report
