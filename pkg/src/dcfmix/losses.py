"""Training losses: masked cross-entropy, reverse-Huber depth loss, composite.

All losses report the pixel count they averaged over so callers can log
coverage alongside the value. Empty supports yield a zero loss with count 0
rather than NaN.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidArgument, ShapeMismatch
from .scene import IGNORE, LabelMap

LOG_CLAMP = 1e-12
CHANNEL_SUM_TOL = 1e-6
BERHU_CUTOFF_FRACTION = 0.2
DEFAULT_LAMBDA_DEPTH = 1e-3


@dataclass(eq=False)
class ProbMap:
    """Per-pixel class distribution, channels-first (C, H, W)."""

    probs: np.ndarray

    def __post_init__(self):
        p = np.array(self.probs, dtype=np.float64, copy=True)
        if p.ndim != 3:
            raise InvalidArgument(f"prob map must be (C, H, W), got {p.shape}")
        if np.any(p < 0):
            raise InvalidArgument("probabilities must be non-negative")
        sums = p.sum(axis=0)
        if np.any(np.abs(sums - 1.0) > CHANNEL_SUM_TOL):
            worst = float(np.abs(sums - 1.0).max())
            raise InvalidArgument(f"channel sums deviate from 1 by {worst:.3g}")
        p.flags.writeable = False
        self.probs = p

    @property
    def classes(self) -> int:
        return self.probs.shape[0]


@dataclass(frozen=True)
class LossValue:
    value: float
    pixel_count: int


def softmax(logits: np.ndarray) -> ProbMap:
    """Stable channels-first softmax, (C, H, W) logits to a ProbMap."""
    z = np.asarray(logits, dtype=np.float64)
    z = z - z.max(axis=0, keepdims=True)
    e = np.exp(z)
    return ProbMap(e / e.sum(axis=0, keepdims=True))


def cross_entropy(
    probs: ProbMap, labels: LabelMap, pixel_weights: np.ndarray | None = None
) -> LossValue:
    """Mean over non-ignored pixels of -w * log p[label].

    Probabilities are clamped at 1e-12 before the log. `pixel_weights` is an
    optional (H, W) per-pixel factor (confidence weighting); the denominator
    stays the pixel count either way.
    """
    lab = labels.data
    if probs.probs.shape[1:] != lab.shape:
        raise ShapeMismatch(f"prob map {probs.probs.shape[1:]} vs labels {lab.shape}")
    if labels.classes != probs.classes:
        raise ShapeMismatch(
            f"prob map has {probs.classes} classes, labels expect {labels.classes}"
        )
    valid = lab != IGNORE
    n = int(valid.sum())
    if n == 0:
        return LossValue(0.0, 0)
    h, w = np.nonzero(valid)
    p = probs.probs[lab[h, w].astype(np.int64), h, w]
    nll = -np.log(np.maximum(p, LOG_CLAMP))
    if pixel_weights is not None:
        pixel_weights = np.asarray(pixel_weights, dtype=np.float64)
        if pixel_weights.shape != lab.shape:
            raise ShapeMismatch(f"weights {pixel_weights.shape} vs labels {lab.shape}")
        nll = nll * pixel_weights[h, w]
    return LossValue(float(nll.sum() / n), n)


def berhu(pred: np.ndarray, true: np.ndarray) -> LossValue:
    """Reverse Huber over pixels with valid ground truth (depth > 0).

    L1 inside the cutoff, scaled L2 outside; the cutoff is 0.2 * max |error|
    recomputed per call, which makes the two branches meet with matching value
    at the crossover. All-zero residuals give a zero loss.
    """
    pred = np.asarray(pred, dtype=np.float64)
    true = np.asarray(true, dtype=np.float64)
    if pred.shape != true.shape:
        raise ShapeMismatch(f"pred {pred.shape} vs true {true.shape}")
    valid = true > 0
    n = int(valid.sum())
    if n == 0:
        return LossValue(0.0, 0)
    err = np.abs(pred[valid] - true[valid])
    cutoff = BERHU_CUTOFF_FRACTION * float(err.max())
    if cutoff == 0.0:
        return LossValue(0.0, n)
    per_pixel = np.where(err <= cutoff, err, (err**2 + cutoff**2) / (2 * cutoff))
    return LossValue(float(per_pixel.mean()), n)


def total_loss(
    l_hr_s: LossValue,
    l_vis_s: LossValue,
    l_depth_s: LossValue,
    l_hr_f: LossValue,
    l_vis_f: LossValue,
    lambda_depth: float = DEFAULT_LAMBDA_DEPTH,
) -> LossValue:
    """Composite objective: both segmentation branches on source and fused
    (mixed) batches plus the down-weighted source depth term."""
    value = (
        l_hr_s.value
        + l_vis_s.value
        + lambda_depth * l_depth_s.value
        + l_hr_f.value
        + l_vis_f.value
    )
    count = (
        l_hr_s.pixel_count
        + l_vis_s.pixel_count
        + l_depth_s.pixel_count
        + l_hr_f.pixel_count
        + l_vis_f.pixel_count
    )
    return LossValue(float(value), count)
