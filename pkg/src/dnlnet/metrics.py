"""Saliency evaluation metrics: MAE, F-beta, PR and threshold curves.

Predictions are min-max normalized per image before thresholding
(constant maps are kept as-is), binarized with `>= threshold`, and
precision/recall are averaged over the dataset at each threshold.
When an image has no predicted positives its precision is defined as 1
with recall 0, keeping the curves total. All accumulation is float64.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError

Array = np.ndarray

DEFAULT_BETA2 = 0.3
DEFAULT_LEVELS = 256


@dataclass(frozen=True)
class SaliencyEval:
    """One prediction/ground-truth pair: P in [0,1], G binary, same shape."""

    pred: Array
    gt: Array

    def __post_init__(self) -> None:
        p = np.asarray(self.pred, dtype=np.float64)
        g = np.asarray(self.gt)
        if p.shape != g.shape or p.ndim != 2:
            raise ConfigError(
                f"prediction {p.shape} and ground truth {g.shape} must be equal 2D shapes"
            )
        if p.min() < 0 or p.max() > 1:
            raise ConfigError("prediction values must lie in [0, 1]")
        vals = np.unique(g)
        if not np.all(np.isin(vals, (0, 1))):
            raise ConfigError("ground truth must be binary {0, 1}")
        object.__setattr__(self, "pred", p)
        object.__setattr__(self, "gt", g.astype(np.float64))


@dataclass(frozen=True)
class MetricsConfig:
    beta2: float = DEFAULT_BETA2
    thresholds: tuple[float, ...] = tuple(np.linspace(0.0, 1.0, DEFAULT_LEVELS))

    def __post_init__(self) -> None:
        if self.beta2 <= 0:
            raise ConfigError(f"beta2 must be positive, got {self.beta2}")
        t = np.asarray(self.thresholds, dtype=np.float64)
        if t.size == 0 or np.any(np.diff(t) <= 0):
            raise ConfigError("thresholds must be a strictly increasing list")


def mae(pred: Array, gt: Array, binarize_pred: bool = False) -> float:
    """Mean absolute difference; continuous prediction by default.

    `binarize_pred=True` thresholds the prediction at 0.5 first, matching
    the binarized-map reading of the metric.
    """
    p = np.asarray(pred, dtype=np.float64)
    g = np.asarray(gt, dtype=np.float64)
    if p.shape != g.shape:
        raise ConfigError(f"shape mismatch: {p.shape} vs {g.shape}")
    if binarize_pred:
        p = (p >= 0.5).astype(np.float64)
    return float(np.abs(p - g).mean())


def f_beta(precision: float, recall: float, beta2: float = DEFAULT_BETA2) -> float:
    denom = beta2 * precision + recall
    if denom == 0:
        return 0.0
    return (1.0 + beta2) * precision * recall / denom


def normalize_prediction(pred: Array) -> Array:
    """Min-max normalize to [0, 1]; constant maps pass through unchanged."""
    p = np.asarray(pred, dtype=np.float64)
    lo, hi = p.min(), p.max()
    if hi - lo <= 0:
        return p
    return (p - lo) / (hi - lo)


def _binary_counts(pred_norm: Array, gt: Array, threshold: float) -> tuple[int, int, int]:
    binary = pred_norm >= threshold
    fg = gt > 0.5
    tp = int(np.count_nonzero(binary & fg))
    fp = int(np.count_nonzero(binary & ~fg))
    fn = int(np.count_nonzero(~binary & fg))
    return tp, fp, fn


def _precision_recall(tp: int, fp: int, fn: int) -> tuple[float, float]:
    if tp + fp == 0:
        return 1.0, 0.0
    precision = tp / (tp + fp)
    recall = tp / (tp + fn) if tp + fn > 0 else 0.0
    return precision, recall


@dataclass
class CurvePoint:
    threshold: float
    precision: float
    recall: float
    fbeta: float


def pr_curve(
    dataset: list[SaliencyEval], cfg: MetricsConfig | None = None
) -> list[CurvePoint]:
    """Dataset-averaged precision/recall/F-beta per threshold."""
    if not dataset:
        raise ConfigError("pr_curve needs a non-empty dataset")
    cfg = cfg or MetricsConfig()
    normed = [normalize_prediction(item.pred) for item in dataset]
    points = []
    for t in cfg.thresholds:
        precisions = []
        recalls = []
        for p, item in zip(normed, dataset):
            prec, rec = _precision_recall(*_binary_counts(p, item.gt, t))
            precisions.append(prec)
            recalls.append(rec)
        avg_p = float(np.mean(precisions))
        avg_r = float(np.mean(recalls))
        points.append(CurvePoint(float(t), avg_p, avg_r, f_beta(avg_p, avg_r, cfg.beta2)))
    return points


def max_f_measure(dataset: list[SaliencyEval], cfg: MetricsConfig | None = None) -> float:
    """Maximum over thresholds of the dataset-averaged F-beta."""
    if not dataset:
        raise ConfigError("max_f_measure needs a non-empty dataset")
    return max(pt.fbeta for pt in pr_curve(dataset, cfg))


@dataclass
class MetricsReport:
    max_f: float
    mean_mae: float
    curve: list[CurvePoint] = field(default_factory=list)

    def summary_text(self) -> str:
        return f"maxF={self.max_f:.6f}\nMAE={self.mean_mae:.6f}\n"

    def curve_csv(self) -> str:
        lines = ["threshold,precision,recall,fbeta"]
        for pt in self.curve:
            lines.append(
                f"{pt.threshold:.6f},{pt.precision:.6f},{pt.recall:.6f},{pt.fbeta:.6f}"
            )
        return "\n".join(lines) + "\n"


def evaluate_dataset(
    dataset: list[SaliencyEval], cfg: MetricsConfig | None = None
) -> MetricsReport:
    if not dataset:
        raise ConfigError("evaluation needs a non-empty dataset")
    curve = pr_curve(dataset, cfg)
    mean_mae = float(np.mean([mae(item.pred, item.gt) for item in dataset]))
    return MetricsReport(
        max_f=max(pt.fbeta for pt in curve), mean_mae=mean_mae, curve=curve
    )
