"""Frame-level phase metrics with optional relaxed phase boundaries.

Accuracy is computed over all frames of a video. Precision, recall and
Jaccard are computed per phase and averaged over the phases present in that
video's ground truth. A phase present in the ground truth but never
predicted has precision 0.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

import numpy as np

METRICS = ("accuracy", "precision", "recall", "jaccard")


def _labels(x) -> np.ndarray:
    return np.asarray(getattr(x, "labels", x), dtype=np.int64)


@dataclass
class MetricReport:
    accuracy: float
    precision: float
    recall: float
    jaccard: float
    per_phase: dict = field(default_factory=dict)  # metric -> (K,) array, NaN if absent

    def as_dict(self) -> dict:
        return {m: getattr(self, m) for m in METRICS}


def confusion_counts(pred, gt, K: int):
    """Per-phase (TP, FP, FN) arrays of length K."""
    p, g = _labels(pred), _labels(gt)
    tp = np.bincount(g[p == g], minlength=K)[:K]
    fp = np.bincount(p[p != g], minlength=K)[:K]
    fn = np.bincount(g[p != g], minlength=K)[:K]
    return tp, fp, fn


def strict_metrics(pred, gt, K: int) -> MetricReport:
    p, g = _labels(pred), _labels(gt)
    if p.shape != g.shape:
        raise ValueError(f"length mismatch: pred {p.shape[0]} vs gt {g.shape[0]}")
    if p.size == 0:
        raise ValueError("empty timelines")
    tp, fp, fn = confusion_counts(p, g, K)
    present = np.bincount(g, minlength=K)[:K] > 0
    with np.errstate(invalid="ignore", divide="ignore"):
        prec = np.where(tp + fp > 0, tp / np.maximum(tp + fp, 1), 0.0)
        rec = tp / (tp + fn)
        jac = tp / (tp + fp + fn)
    per_phase = {}
    for name, arr in (("precision", prec), ("recall", rec), ("jaccard", jac)):
        per_phase[name] = np.where(present, arr, np.nan).astype(np.float64)
    return MetricReport(
        accuracy=float(np.mean(p == g)),
        precision=float(np.mean(prec[present])),
        recall=float(np.mean(rec[present])),
        jaccard=float(np.mean(jac[present])),
        per_phase=per_phase,
    )


def relax_boundaries(pred, gt, window_s: float = 10.0, fps: float = 1.0) -> np.ndarray:
    """Forgive predictions that lag or lead a ground-truth transition.

    For each transition ``prev -> cur`` at frame ``b`` and ``w =
    round(window_s * fps)``: frames ``b..b+w-1`` still labelled ``cur`` whose
    prediction is ``prev`` become ``cur``; frames ``b-w..b-1`` still labelled
    ``prev`` whose prediction is ``cur`` become ``prev``. Other frames are left
    alone. Returns the adjusted prediction labels.
    """
    p, g = _labels(pred), _labels(gt)
    if p.shape != g.shape:
        raise ValueError(f"length mismatch: pred {p.shape[0]} vs gt {g.shape[0]}")
    w = int(round(window_s * fps))
    out = p.copy()
    if w <= 0 or g.size < 2:
        return out
    for b in np.flatnonzero(g[1:] != g[:-1]) + 1:
        prev, cur = g[b - 1], g[b]
        after = slice(b, min(b + w, g.size))
        fix = (g[after] == cur) & (p[after] == prev)
        out[after][fix] = cur
        before = slice(max(b - w, 0), b)
        fix = (g[before] == prev) & (p[before] == cur)
        out[before][fix] = prev
    return out


def relaxed_metrics(pred, gt, K: int, window_s: float = 10.0, fps: float = 1.0) -> MetricReport:
    return strict_metrics(relax_boundaries(pred, gt, window_s, fps), gt, K)


@dataclass
class Summary:
    mean: dict
    std: dict
    n_videos: int


def aggregate(reports) -> Summary:
    """Mean and population std of each metric across videos."""
    reports = list(reports)
    if not reports:
        raise ValueError("aggregate needs at least one report")
    table = np.array([[getattr(r, m) for m in METRICS] for r in reports], dtype=np.float64)
    mean = table.mean(axis=0)
    std = table.std(axis=0)
    return Summary(dict(zip(METRICS, mean.tolist())), dict(zip(METRICS, std.tolist())),
                   len(reports))


def per_phase_mean(reports, metric: str = "jaccard") -> np.ndarray:
    """Per-phase average over the videos in which the phase occurs."""
    stack = np.stack([r.per_phase[metric] for r in reports])
    seen = (~np.isnan(stack)).sum(axis=0)
    total = np.where(np.isnan(stack), 0.0, stack).sum(axis=0)
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(seen > 0, total / seen, np.nan)


def fmt(x: float) -> str:
    return f"{x:.6f}"


def reports_csv(names, strict, relaxed=None) -> str:
    """CSV with one row per video plus mean and std rows."""
    buf = io.StringIO()
    wr = csv.writer(buf, lineterminator="\n")
    header = ["video"] + [f"strict_{m}" for m in METRICS]
    if relaxed is not None:
        header += [f"relaxed_{m}" for m in METRICS]
    wr.writerow(header)
    for i, name in enumerate(names):
        row = [name] + [fmt(getattr(strict[i], m)) for m in METRICS]
        if relaxed is not None:
            row += [fmt(getattr(relaxed[i], m)) for m in METRICS]
        wr.writerow(row)
    sums = [aggregate(strict)] + ([aggregate(relaxed)] if relaxed is not None else [])
    for label, attr in (("mean", "mean"), ("std", "std")):
        row = [label]
        for s in sums:
            row += [fmt(getattr(s, attr)[m]) for m in METRICS]
        wr.writerow(row)
    return buf.getvalue()
