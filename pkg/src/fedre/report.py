"""Comparison tables over a sweep of run directories.

Training runs leave ``summary.json`` and attack runs leave ``attack.json``.
Each table groups runs by its key columns and averages over everything else
(typically seeds). A table's grid is the product of the key values seen; a
missing cell is an error, so a half-finished sweep is never reported as if
it were complete.
"""

from __future__ import annotations

import itertools
import json
import math
from pathlib import Path

import numpy as np

from .federation import fmt

TABLES = ("utility", "defense", "pda-gain", "clip")
# opt-in extras, never part of the default set
EXTRA = ("psi",)
FILES = {
    "psi": "psi_scores.csv",
    "utility": "utility_vs_epsilon.csv",
    "defense": "defense_vs_epsilon.csv",
    "pda-gain": "pda_gain_vs_clients.csv",
    "clip": "iou_vs_clip.csv",
}


class SweepError(ValueError):
    """The runs do not cover the grid a table needs."""


def _num(v) -> float:
    return math.inf if v == "inf" else float(v)


def load_runs(dirs) -> tuple[list, list]:
    """Return ``(train_summaries, attack_summaries)`` found under ``dirs``."""
    train, attacks = [], []
    for d in dirs:
        d = Path(d)
        if not d.is_dir():
            raise FileNotFoundError(f"run directory {str(d)!r} does not exist")
        for p in sorted(d.rglob("summary.json")):
            rec = json.loads(p.read_text())
            if rec.get("final") is not None:
                train.append(rec)
        for p in sorted(d.rglob("attack.json")):
            attacks.append(json.loads(p.read_text()))
    return train, attacks


def _key(value):
    if isinstance(value, list):
        return ";".join(fmt(v) for v in value)
    if isinstance(value, str):
        return value
    return fmt(_num(value))


def _group(records, keys):
    groups = {}
    for rec in records:
        k = tuple(_key(rec["config"][name]) for name in keys)
        groups.setdefault(k, []).append(rec)
    return groups


def _missing(groups, keys, label):
    seen = [sorted({k[i] for k in groups}, key=_order) for i in range(len(keys))]
    absent = [c for c in itertools.product(*seen) if c not in groups]
    return [f"{label}: " + ", ".join(f"{n}={v}" for n, v in zip(keys, c)) for c in absent]


def _order(v: str):
    try:
        return (0, _num(v.split(";")[0]))
    except ValueError:
        return (1, v)


def _stats(values):
    a = np.asarray(values, dtype=np.float64)
    se = float(a.std(ddof=1) / math.sqrt(a.size)) if a.size > 1 else 0.0
    return float(a.mean()), se


def _csv(header, rows) -> str:
    return "\n".join([",".join(header)] + [",".join(r) for r in rows]) + "\n"


def utility_table(train):
    keys = ("epsilon", "aggregation")
    groups = _group(train, keys)
    rows = []
    for k in sorted(groups, key=lambda c: tuple(map(_order, c))):
        g = groups[k]
        iou, se = _stats([r["final"]["iou"] for r in g])
        rest = [fmt(_stats([r["final"][m] for r in g])[0]) for m in ("precision", "recall", "f_score")]
        rows.append(list(k) + [str(len(g)), fmt(iou), fmt(se)] + rest)
    header = list(keys) + ["runs", "iou", "iou_se", "precision", "recall", "f_score"]
    return _csv(header, rows), _missing(groups, keys, "utility")


def clip_table(train):
    keys = ("clip", "epsilon")
    groups = _group(train, keys)
    rows = []
    for k in sorted(groups, key=lambda c: tuple(map(_order, c))):
        iou, se = _stats([r["final"]["iou"] for r in groups[k]])
        rows.append(list(k) + [str(len(groups[k])), fmt(iou), fmt(se)])
    return _csv(list(keys) + ["runs", "iou", "iou_se"], rows), _missing(groups, keys, "clip")


def pda_gain_table(train):
    keys = ("epsilon", "clients", "aggregation")
    groups = _group(train, keys)
    missing = _missing(groups, keys, "pda-gain")
    rows = []
    cells = sorted({k[:2] for k in groups}, key=lambda c: tuple(map(_order, c)))
    for eps, K in cells:
        fa, pda = groups.get((eps, K, "fedavg")), groups.get((eps, K, "pda"))
        if not fa or not pda:
            continue
        a, b = _stats([r["final"]["iou"] for r in fa])[0], _stats([r["final"]["iou"] for r in pda])[0]
        rows.append([eps, K, str(len(fa)), str(len(pda)), fmt(a), fmt(b), fmt(b - a)])
    header = ["epsilon", "clients", "runs_fedavg", "runs_pda", "iou_fedavg", "iou_pda", "gain"]
    return _csv(header, rows), missing


def defense_table(attacks):
    keys = ("epsilon", "allocation")
    groups = _group(attacks, keys)
    rows = []
    for k in sorted(groups, key=lambda c: tuple(map(_order, c))):
        g = groups[k]
        vals = [fmt(_stats([_num(r["result"][m]) for r in g])[0]) for m in ("mse", "ssim", "psnr")]
        rows.append(list(k) + [str(len(g))] + vals)
    return _csv(list(keys) + ["runs", "mse", "ssim", "psnr"], rows), _missing(groups, keys, "defense")


def psi_table(dirs):
    """Mean client PSI score per layer over every scored upload in the runs."""
    per_layer = {}
    for d in dirs:
        for p in sorted(Path(d).rglob("history.json")):
            for rnd in json.loads(p.read_text()):
                for scores in rnd.get("psi") or []:
                    for l, v in enumerate(scores or []):
                        per_layer.setdefault(l, []).append(_num(v))
    if not per_layer:
        return _csv(["layer", "psi", "uploads"], []), ["psi: no scored uploads in history.json files"]
    rows = [[str(l), fmt(np.mean(v)), str(len(v))] for l, v in sorted(per_layer.items())]
    return _csv(["layer", "psi", "uploads"], rows), []


def build_report(dirs, out: Path, tables=TABLES) -> list[Path]:
    """Write every requested table that has data; raise on absent cells."""
    unknown = set(tables) - set(TABLES) - set(EXTRA)
    if unknown:
        raise ValueError(f"unknown tables {sorted(unknown)}; choose from {', '.join(TABLES + EXTRA)}")
    train, attacks = load_runs(dirs)
    if not train and not attacks:
        raise FileNotFoundError("no summary.json or attack.json found in the given directories")
    built, missing = {}, []
    if train:
        if "utility" in tables:
            built["utility"] = utility_table(train)
        if "clip" in tables:
            built["clip"] = clip_table(train)
        aggs = {r["config"]["aggregation"] for r in train}
        if "pda-gain" in tables and aggs == {"fedavg", "pda"}:
            built["pda-gain"] = pda_gain_table(train)
        if "psi" in tables:
            built["psi"] = psi_table(dirs)
    if attacks and "defense" in tables:
        built["defense"] = defense_table(attacks)
    for _, miss in built.values():
        missing += miss
    if missing:
        raise SweepError("incomplete sweep, absent cells:\n  " + "\n  ".join(missing))
    out.mkdir(parents=True, exist_ok=True)
    written = []
    for name, (text, _) in built.items():
        path = out / FILES[name]
        path.write_text(text)
        written.append(path)
    return written
