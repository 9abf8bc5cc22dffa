"""Analysis instruments: gradient conflict, negative-pair precision, selection AUC, CSV exports."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.stats import rankdata

from .plr import NegativeSets


def entanglement(g1: np.ndarray, g2: np.ndarray) -> float:
    """(g1 . g2) / ||g2||^2."""
    denom = float(np.dot(g2, g2))
    if denom == 0.0:
        raise ZeroDivisionError("reference gradient g2 is zero")
    return float(np.dot(g1, g2)) / denom


def magnitude_ratio(g1: np.ndarray, g2: np.ndarray) -> float:
    """||g1|| / ||g2||."""
    n2 = float(np.linalg.norm(g2))
    if n2 == 0.0:
        raise ZeroDivisionError("reference gradient g2 is zero")
    return float(np.linalg.norm(g1)) / n2


@dataclass(frozen=True)
class ConflictStats:
    entanglement: float
    magnitude_ratio: float
    batch: int = 0
    epoch: int = 0


def conflict_stats(g1, g2, batch: int = 0, epoch: int = 0) -> ConflictStats:
    return ConflictStats(entanglement(g1, g2), magnitude_ratio(g1, g2), batch, epoch)


@dataclass(frozen=True)
class NegPairStats:
    select_ratio: float
    correct_ratio: float | None
    n_selected: int
    n_correct: int
    n_possible: int
    epoch: int = 0


def neg_pair_stats(ns: NegativeSets, true_labels: np.ndarray, epoch: int = 0) -> NegPairStats:
    """Fraction of ordered non-self pairs selected, and of those, the fraction with differing true labels."""
    y = np.asarray(true_labels)
    b = ns.mask.shape[0]
    possible = b * (b - 1)
    selected = int(ns.mask.sum())
    correct = int(np.sum(ns.mask & (y[:, None] != y[None, :])))
    return NegPairStats(
        selected / possible if possible else 0.0,
        correct / selected if selected else None,
        selected, correct, possible, epoch,
    )


def separation_auc(w: np.ndarray, is_clean: np.ndarray) -> float:
    """Mann-Whitney AUC of ``w`` as a score for the clean class; ties count one half."""
    w = np.asarray(w, dtype=float)
    is_clean = np.asarray(is_clean, dtype=bool)
    n_pos = int(is_clean.sum())
    n_neg = len(w) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValueError("AUC needs both clean and noisy samples")
    ranks = rankdata(w)
    return float((ranks[is_clean].sum() - n_pos * (n_pos + 1) / 2) / (n_pos * n_neg))


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    v = float(v)
    return "" if math.isnan(v) else repr(v)


def write_rows(path: str | Path, header: list[str], rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([_fmt(r.get(k)) for k in header])


def export_fig4(path, records) -> None:
    """Per-batch entanglement / magnitude ratio for the PLR and vanilla contrastive losses."""
    write_rows(path, ["epoch", "net", "batch", "ent_plr", "ratio_plr", "ent_vanilla", "ratio_vanilla"], records)


def export_fig5(path, records) -> None:
    write_rows(path, ["epoch", "net", "kappa", "select_ratio", "correct_ratio"], records)


def export_fig6(path, l_cls, l_proto, w, is_true_clean) -> None:
    rows = [{"index": i, "l_cls": a, "l_proto": b, "w": c, "is_true_clean": bool(d)}
            for i, (a, b, c, d) in enumerate(zip(l_cls, l_proto, w, is_true_clean))]
    write_rows(path, ["index", "l_cls", "l_proto", "w", "is_true_clean"], rows)


def read_rows(path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def summarize_fig4(records: list[dict]) -> dict:
    """Fraction of negative entanglement and median magnitude ratio per contrastive variant."""
    out = {}
    for variant in ("plr", "vanilla"):
        ent = np.array([float(r[f"ent_{variant}"]) for r in records if r[f"ent_{variant}"] not in ("", None)])
        rat = np.array([float(r[f"ratio_{variant}"]) for r in records if r[f"ratio_{variant}"] not in ("", None)])
        out[variant] = {
            "n": len(ent),
            "frac_negative": float(np.mean(ent < 0)) if len(ent) else float("nan"),
            "median_ratio": float(np.median(rat)) if len(rat) else float("nan"),
        }
    return out
