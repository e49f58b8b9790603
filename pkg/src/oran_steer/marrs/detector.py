"""Two-stage per-cell LSTM autoencoder detector and its single-stage ablations."""

from __future__ import annotations

import logging

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .. import container
from ..nn.models import Seq2SeqAutoencoder
from .features import FEATURE_NAMES, FeatureScaler
from .rules import Threshold, calibrate_threshold, classify_loss

logger = logging.getLogger(__name__)

_AE_PARAMS = ("hidden_size", "latent_dim", "n_layers", "epochs", "batch_size", "lr")


class MissingCellError(KeyError):
    pass


def _check_windows(windows_by_cell, name="windows"):
    lengths = {c: len(w) for c, w in windows_by_cell.items()}
    empty = [c for c, n in lengths.items() if n == 0]
    if empty:
        raise ValueError(f"no {name} for cells {empty}")
    if len(set(lengths.values())) > 1:
        raise ValueError(f"{name} are not time-aligned across cells: {lengths}")
    return {c: np.asarray(w, dtype=float) for c, w in windows_by_cell.items()}


def _autoencoder(params, seed):
    return Seq2SeqAutoencoder(**{k: params[k] for k in _AE_PARAMS}, seed=seed)


def train_ae1(windows_by_cell, seed=0, **params):
    """One reconstruction autoencoder per cell, keyed like the input."""
    windows = _check_windows(windows_by_cell)
    params = {**_defaults(), **params}
    models = {}
    for i, (cell, X) in enumerate(windows.items()):
        models[cell] = _autoencoder(params, seed + i).fit(X)
        logger.info("AE1 %s: loss %.4f -> %.4f", cell, models[cell].loss_history_[0],
                    models[cell].loss_history_[-1])
    return models


def embed(ae1, windows_by_cell):
    return {c: ae1[c].transform(np.asarray(w, dtype=float)) for c, w in windows_by_cell.items()}


def build_x2(embeddings, cells=None):
    """Own embedding concatenated with the mean of every other cell's embedding."""
    cells = list(embeddings) if cells is None else list(cells)
    missing = [c for c in cells if c not in embeddings]
    if missing:
        raise MissingCellError(f"missing embeddings for {missing}")
    if len(cells) < 2:
        raise ValueError("cross-cell enrichment needs at least two cells")
    stack = np.stack([np.asarray(embeddings[c], dtype=float) for c in cells])
    total = stack.sum(axis=0)
    n = len(cells)
    return {c: np.concatenate([stack[i], (total - stack[i]) / (n - 1)], axis=-1)
            for i, c in enumerate(cells)}


def train_ae2(x2_by_cell, x1_by_cell, seed=0, **params):
    """Per-cell decoders from the enriched code (a length-1 sequence) back to the feature window."""
    params = {**_defaults(), **params}
    models = {}
    for i, cell in enumerate(x2_by_cell):
        X2 = np.asarray(x2_by_cell[cell], dtype=float)
        X1 = np.asarray(x1_by_cell[cell], dtype=float)
        if len(X2) != len(X1):
            raise ValueError(f"{cell}: {len(X2)} enriched codes vs {len(X1)} target windows")
        models[cell] = _autoencoder(params, seed + 1000 + i).fit(X2[:, None, :], X1)
    return models


def _defaults():
    return dict(hidden_size=16, latent_dim=8, n_layers=1, epochs=200, batch_size=32, lr=1e-3)


class _CellDetector(BaseEstimator):
    """Shared thresholding and prediction for per-cell window scorers."""

    def __init__(self, hidden_size=16, latent_dim=8, n_layers=1, epochs=200, batch_size=32,
                 lr=1e-3, seed=0):
        self.hidden_size = hidden_size
        self.latent_dim = latent_dim
        self.n_layers = n_layers
        self.epochs = epochs
        self.batch_size = batch_size
        self.lr = lr
        self.seed = seed

    def _params(self):
        return {k: getattr(self, k) for k in _AE_PARAMS}

    def _split_known(self, windows_by_cell):
        check_is_fitted(self, "cells_")
        missing = [c for c in self.cells_ if c not in windows_by_cell]
        if missing:
            raise MissingCellError(f"windows missing for trained cells {missing}")
        known = _check_windows({c: windows_by_cell[c] for c in self.cells_})
        unknown = [c for c in windows_by_cell if c not in self.cells_]
        if unknown:
            logger.warning("cells %s have no trained models; reported as unmodeled", unknown)
        return known, unknown

    def score(self, windows_by_cell):
        """Per-window losses; cells unseen in training get NaN (unmodeled)."""
        known, unknown = self._split_known(windows_by_cell)
        out = self._score_known(known)
        n = len(next(iter(known.values())))
        for c in unknown:
            out[c] = np.full(n, np.nan)
        return out

    def calibrate(self, losses, labels=None, policy="max_f1", quantile=0.99):
        self.threshold_ = calibrate_threshold(losses, labels, policy, quantile)
        return self.threshold_

    def predict(self, windows_by_cell):
        """Labels per cell: 0 trusted, 1 untrusted, -1 unmodeled."""
        check_is_fitted(self, "threshold_")
        out = {}
        for c, loss in self.score(windows_by_cell).items():
            out[c] = np.where(np.isnan(loss), -1, classify_loss(np.nan_to_num(loss), self.threshold_))
        return out


class MarrsDetector(_CellDetector):
    """Per-cell encoders, cross-cell latent enrichment, and per-cell decoders of the features."""

    def fit(self, windows_by_cell, y=None):
        windows = _check_windows(windows_by_cell)
        if len(windows) < 2:
            raise ValueError("the two-stage detector needs at least two cells")
        self.cells_ = list(windows)
        self.ae1_ = train_ae1(windows, seed=self.seed, **self._params())
        x2 = build_x2(embed(self.ae1_, windows), self.cells_)
        self.ae2_ = train_ae2(x2, windows, seed=self.seed, **self._params())
        return self

    def enriched(self, windows_by_cell):
        known, _ = self._split_known(windows_by_cell)
        return build_x2(embed(self.ae1_, known), self.cells_)

    def _score_known(self, known):
        x2 = build_x2(embed(self.ae1_, known), self.cells_)
        return {c: self.ae2_[c].reconstruction_loss(x2[c][:, None, :], known[c]) for c in self.cells_}

    def models(self):
        return {**{f"ae1/{c}": m for c, m in self.ae1_.items()},
                **{f"ae2/{c}": m for c, m in self.ae2_.items()}}


class Ae1Detector(_CellDetector):
    """Ablation: the per-cell reconstruction autoencoders alone."""

    def fit(self, windows_by_cell, y=None):
        windows = _check_windows(windows_by_cell)
        self.cells_ = list(windows)
        self.ae1_ = train_ae1(windows, seed=self.seed, **self._params())
        return self

    @classmethod
    def from_stage_one(cls, marrs):
        """Share a fitted two-stage detector's AE1 models (identical to refitting with its seed)."""
        check_is_fitted(marrs, "ae1_")
        det = cls(**marrs.get_params())
        det.cells_ = list(marrs.cells_)
        det.ae1_ = dict(marrs.ae1_)
        return det

    def _score_known(self, known):
        return {c: self.ae1_[c].reconstruction_loss(known[c]) for c in self.cells_}

    def models(self):
        return {f"ae1/{c}": m for c, m in self.ae1_.items()}


def network_mean_input(windows_by_cell, cells):
    """Own window concatenated with the mean of the other cells' windows (2 x features columns)."""
    stack = np.stack([np.asarray(windows_by_cell[c], dtype=float) for c in cells])
    total = stack.sum(axis=0)
    n = len(cells)
    return {c: np.concatenate([stack[i], (total - stack[i]) / (n - 1)], axis=-1)
            for i, c in enumerate(cells)}


class Ae1PlusDetector(_CellDetector):
    """Ablation: one autoencoder per cell fed its features plus the network-mean features."""

    def fit(self, windows_by_cell, y=None):
        windows = _check_windows(windows_by_cell)
        if len(windows) < 2:
            raise ValueError("network-mean input needs at least two cells")
        self.cells_ = list(windows)
        wide = network_mean_input(windows, self.cells_)
        params = self._params()
        self.ae1_ = {c: _autoencoder(params, self.seed + i).fit(wide[c], windows[c])
                     for i, c in enumerate(self.cells_)}
        return self

    def _score_known(self, known):
        wide = network_mean_input(known, self.cells_)
        return {c: self.ae1_[c].reconstruction_loss(wide[c], known[c]) for c in self.cells_}

    def models(self):
        return {f"ae1p/{c}": m for c, m in self.ae1_.items()}


_DETECTORS = {"marrs": MarrsDetector, "ae1": Ae1Detector, "ae1_plus": Ae1PlusDetector}


class BundleSchemaError(ValueError):
    pass


def save_bundle(path, detector, scalers, fingerprint=""):
    """Write a fitted detector, its per-cell feature scalers and threshold to one container."""
    check_is_fitted(detector, "threshold_")
    kind = next(k for k, cls in _DETECTORS.items() if type(detector) is cls)
    arrays = {}
    for name, model in detector.models().items():
        arrays[f"model/{name}"] = np.frombuffer(model.to_bytes(), dtype=np.uint8)
    for cell, sc in scalers.items():
        arrays[f"scaler/{cell}/mean"] = sc.mean_
        arrays[f"scaler/{cell}/scale"] = sc.scale_
    meta = {"detector": kind, "params": detector.get_params(), "cells": detector.cells_,
            "feature_names": list(FEATURE_NAMES), "threshold": detector.threshold_.value,
            "policy": detector.threshold_.policy, "fingerprint": fingerprint}
    container.save(path, "detector_bundle", meta, arrays)


def load_bundle(path, feature_names=FEATURE_NAMES):
    """Inverse of :func:`save_bundle`; refuses bundles built for a different feature schema."""
    _, meta, arrays = container.load(path, "detector_bundle")
    if list(meta["feature_names"]) != list(feature_names):
        raise BundleSchemaError(f"bundle features {meta['feature_names']} do not match "
                                f"{list(feature_names)}")
    detector = _DETECTORS[meta["detector"]](**meta["params"])
    detector.cells_ = list(meta["cells"])
    groups = {}
    for key, blob in arrays.items():
        if key.startswith("model/"):
            stage, cell = key[len("model/"):].split("/", 1)
            groups.setdefault(stage, {})[cell] = Seq2SeqAutoencoder.from_bytes(blob.tobytes())
    if isinstance(detector, MarrsDetector):
        detector.ae1_, detector.ae2_ = groups["ae1"], groups["ae2"]
    else:
        detector.ae1_ = groups.get("ae1") or groups["ae1p"]
    detector.threshold_ = Threshold(meta["threshold"], meta["policy"])
    scalers = {c: FeatureScaler.from_state(arrays[f"scaler/{c}/mean"], arrays[f"scaler/{c}/scale"])
               for c in detector.cells_}
    return detector, scalers, meta["fingerprint"]
