"""CSV tables and the run manifest. Output bytes depend only on the inputs."""

from __future__ import annotations

import csv
import io
import json
import platform
from importlib import metadata
from pathlib import Path

import numpy as np


class ExportError(OSError):
    pass


def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def _write_csv(path, header, rows):
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([_fmt(v) for v in row])
    _write_text(path, buf.getvalue())
    return Path(path)


def _write_text(path, text):
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(text)
    except OSError as exc:
        raise ExportError(f"cannot write {path}: {exc}") from exc


def counts_csv(path, cell_ids, counts, injected=None):
    """One row per iteration: true UE count per cell, plus injection flags when given."""
    header = ["iteration", *cell_ids]
    if injected is not None:
        header += [f"{c}_injected" for c in cell_ids]
    rows = []
    for t, row in enumerate(np.asarray(counts)):
        extra = list(np.asarray(injected)[t]) if injected is not None else []
        rows.append([t, *row, *extra])
    return _write_csv(path, header, rows)


def gain_csv(path, rows, scenario=""):
    header = ["scenario", "cell", "benign_mean", "benign_min", "benign_max",
              "malicious_mean", "malicious_min", "malicious_max", "pct_of_benign"]
    return _write_csv(path, header, [
        [scenario, r.cell_id, r.benign.mean, r.benign.min, r.benign.max,
         r.malicious.mean, r.malicious.min, r.malicious.max, r.pct] for r in rows])


def detection_csv(path, results):
    """``results`` maps a method name to its :class:`DetectionMetrics`."""
    header = ["method", "tp", "fp", "fn", "tn", "accuracy", "precision", "recall", "f1"]
    rows = []
    for name, m in results.items():
        d = m.as_dict()
        rows.append([name, *(d[k] for k in header[1:])])
    return _write_csv(path, header, rows)


def sequence_csv(path, sweep):
    """``sweep`` rows are ``(k, rule, DetectionMetrics)``."""
    header = ["k", "rule", "tp", "fp", "fn", "tn", "accuracy", "precision", "recall", "f1"]
    rows = []
    for k, rule, m in sweep:
        d = m.as_dict()
        rows.append([k, rule, *(d[c] for c in header[2:])])
    return _write_csv(path, header, rows)


def versions():
    out = {"python": platform.python_version()}
    for dist in ("artifact", "numpy", "scikit-learn"):
        try:
            out[dist] = metadata.version(dist)
        except metadata.PackageNotFoundError:
            out[dist] = "unknown"
    return out


def write_manifest(path, config, files=(), extra=None):
    doc = {"config_hash": config.fingerprint(), "seed": config.seed, "mode": config.mode,
           "iterations": config.iterations, "versions": versions(),
           "files": sorted(Path(f).name for f in files)}
    if extra:
        doc.update(extra)
    _write_text(path, json.dumps(doc, indent=2, sort_keys=True) + "\n")
    return Path(path)
