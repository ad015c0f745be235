"""Regression and classification metrics plus the evaluation report.

Metrics are fractions; percentages appear only in formatted output.
"""

from __future__ import annotations

from dataclasses import dataclass, field
import csv
import io

import numpy as np
from scipy.stats import rankdata

HIST_BINS = np.arange(0, 161)  # 1 px bins over [0, 160], overflow counted in the last bin


class UndefinedMetric(ValueError):
    """Raised when a metric has no defined value for its inputs (e.g. zero variance)."""


def _pair(pred, gt):
    pred = np.asarray(pred, dtype=np.float64).ravel()
    gt = np.asarray(gt, dtype=np.float64).ravel()
    if pred.shape != gt.shape:
        raise ValueError(f"length mismatch: {pred.size} predictions vs {gt.size} ground truths")
    if pred.size == 0:
        raise UndefinedMetric("no samples")
    return pred, gt


def r2_score(pred, gt) -> float:
    """Coefficient of determination, 1 - SS_res / SS_tot."""
    pred, gt = _pair(pred, gt)
    ss_tot = np.sum((gt - gt.mean()) ** 2)
    if ss_tot == 0:
        raise UndefinedMetric("R^2 undefined: ground truth is constant")
    return float(1.0 - np.sum((gt - pred) ** 2) / ss_tot)


def pearson(pred, gt) -> float:
    pred, gt = _pair(pred, gt)
    a = pred - pred.mean()
    b = gt - gt.mean()
    denom = np.sqrt(np.sum(a * a) * np.sum(b * b))
    if denom == 0:
        raise UndefinedMetric("Pearson undefined: a series has zero variance")
    return float(np.clip(np.sum(a * b) / denom, -1.0, 1.0))


def roc_auc(scores, labels) -> float:
    """Rank-based AUC (Mann-Whitney U) with midranks for ties."""
    scores = np.asarray(scores, dtype=np.float64).ravel()
    labels = np.asarray(labels).ravel().astype(bool)
    if scores.shape != labels.shape:
        raise ValueError("scores and labels differ in length")
    n_pos = int(labels.sum())
    n_neg = labels.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise UndefinedMetric("AUC undefined: labels contain a single class")
    ranks = rankdata(scores)  # midranks
    u = ranks[labels].sum() - n_pos * (n_pos + 1) / 2
    return float(u / (n_pos * n_neg))


def roc_curve(scores, labels) -> tuple[np.ndarray, np.ndarray]:
    """(false positive rate, true positive rate) points, thresholds high to low."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels).astype(bool)
    order = np.argsort(-scores, kind="stable")
    s, y = scores[order], labels[order]
    distinct = np.r_[np.nonzero(np.diff(s))[0], s.size - 1]
    tps = np.cumsum(y)[distinct]
    fps = (distinct + 1) - tps
    return (np.r_[0, fps / max(fps[-1], 1)], np.r_[0, tps / max(tps[-1], 1)])


@dataclass
class PixelErrorStats:
    distances: np.ndarray
    histogram: np.ndarray
    median: float


def pixel_error_stats(pred_uv, gt_uv) -> PixelErrorStats:
    pred_uv = np.asarray(pred_uv, dtype=np.float64).reshape(-1, 2)
    gt_uv = np.asarray(gt_uv, dtype=np.float64).reshape(-1, 2)
    if pred_uv.shape != gt_uv.shape:
        raise ValueError("prediction and ground-truth lists differ in length")
    dist = np.hypot(*(pred_uv - gt_uv).T)
    hist, _ = np.histogram(np.minimum(dist, HIST_BINS[-1]), bins=HIST_BINS)
    median = float(np.median(dist)) if dist.size else float("nan")
    return PixelErrorStats(dist, hist, median)


@dataclass
class EvalReport:
    n: int
    r2: dict[str, float | None]
    pearson: dict[str, float | None]
    median_px: float
    histogram: np.ndarray
    auc: float | None
    missed: int = 0
    undefined: list[str] = field(default_factory=list)
    auc_groups: dict[str, float | None] = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return not self.undefined

    def rows(self) -> list[tuple[str, str, str]]:
        rows = []
        for key in ("u", "v", "d"):
            rows.append((f"r2_{key}", _fmt(self.r2[key]), _pct(self.r2[key])))
            rows.append((f"pearson_{key}", _fmt(self.pearson[key]), _pct(self.pearson[key])))
        rows.append(("median_px", _fmt(self.median_px), ""))
        rows.append(("auc_led", _fmt(self.auc), _pct(self.auc)))
        for name, val in self.auc_groups.items():
            rows.append((f"auc_led[{name}]", _fmt(val), _pct(val)))
        rows.append(("n", str(self.n), ""))
        rows.append(("missed", str(self.missed), ""))
        return rows

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["metric", "value", "percent"])
        w.writerows(self.rows())
        return buf.getvalue()

    def format(self) -> str:
        return "\n".join(f"{name:<16}{val:>12}{(pct + ' %') if pct else '':>10}"
                         for name, val, pct in self.rows())


def _fmt(x):
    return "undefined" if x is None else f"{x:.6f}"


def _pct(x):
    return "" if x is None else f"{100 * x:.1f}"


def _safe(fn, name, undefined, *args):
    try:
        return fn(*args)
    except UndefinedMetric:
        undefined.append(name)
        return None


def evaluate(pred_uvd, led_scores, gt_uvd, led_labels, groups=None) -> EvalReport:
    """Metrics over matched predictions.

    ``pred_uvd`` rows may be NaN where the decoder reported no detection;
    those samples are counted in ``missed`` and are excluded from the
    regression metrics but scored at the maximum histogram distance and a
    0.0 LED score. ``groups`` optionally maps each sample to a key for a
    per-group AUC breakdown.
    """
    pred = np.asarray(pred_uvd, dtype=np.float64).reshape(-1, 3)
    gt = np.asarray(gt_uvd, dtype=np.float64).reshape(-1, 3)
    scores = np.asarray(led_scores, dtype=np.float64).ravel()
    labels = np.asarray(led_labels).ravel().astype(bool)
    hit = np.all(np.isfinite(pred), axis=1)
    undefined: list[str] = []
    r2, rho = {}, {}
    for k, key in enumerate("uvd"):
        r2[key] = _safe(r2_score, f"r2_{key}", undefined, pred[hit, k], gt[hit, k])
        rho[key] = _safe(pearson, f"pearson_{key}", undefined, pred[hit, k], gt[hit, k])
    far = np.where(hit[:, None], pred[:, :2], gt[:, :2] + HIST_BINS[-1])
    stats = pixel_error_stats(far, gt[:, :2])
    scores = np.where(np.isfinite(scores), scores, 0.0)
    auc = _safe(roc_auc, "auc_led", undefined, scores, labels)
    auc_groups = {}
    if groups is not None:
        groups = np.asarray(groups)
        for g in sorted(set(groups.tolist())):
            sel = groups == g
            try:
                auc_groups[str(g)] = roc_auc(scores[sel], labels[sel])
            except UndefinedMetric:
                auc_groups[str(g)] = None
    return EvalReport(len(gt), r2, rho, stats.median, stats.histogram, auc,
                      int((~hit).sum()), undefined, auc_groups)


def histogram_svg(hist: np.ndarray, median: float | None = None, width: int = 640,
                  height: int = 320, title: str = "image-space error [px]") -> str:
    """Bar chart of a 1-px-bin error histogram with a dashed median line."""
    pad = 40
    peak = max(int(np.max(hist)), 1) if len(hist) else 1
    bw = (width - 2 * pad) / max(len(hist), 1)
    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}">',
             f'<rect width="{width}" height="{height}" fill="white"/>',
             f'<text x="{width / 2}" y="20" text-anchor="middle" font-size="14">{title}</text>']
    for i, c in enumerate(hist):
        h = (height - 2 * pad) * c / peak
        parts.append(f'<rect x="{pad + i * bw:.2f}" y="{height - pad - h:.2f}" '
                     f'width="{bw:.2f}" height="{h:.2f}" fill="#5b4b9a"/>')
    parts.append(f'<line x1="{pad}" y1="{height - pad}" x2="{width - pad}" '
                 f'y2="{height - pad}" stroke="black"/>')
    for tick in range(0, len(hist) + 1, 20):
        x = pad + tick * bw
        parts.append(f'<text x="{x:.2f}" y="{height - pad + 15}" text-anchor="middle" '
                     f'font-size="10">{tick}</text>')
    if median is not None and np.isfinite(median):
        x = pad + min(median, len(hist)) * bw
        parts.append(f'<line x1="{x:.2f}" y1="{pad}" x2="{x:.2f}" y2="{height - pad}" '
                     f'stroke="black" stroke-dasharray="6,4"/>')
        parts.append(f'<text x="{x + 4:.2f}" y="{pad + 12}" font-size="11">'
                     f'median {median:.2f} px</text>')
    parts.append("</svg>")
    return "\n".join(parts)
