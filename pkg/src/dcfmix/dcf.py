"""Depth-guided contextual filtering of naive mix masks.

Compares per-class depth densities of the target scene before and after a
naive paste. A pasted class whose density difference exceeds its threshold is
judged to violate the target's depth layout and its pasted pixels are struck
from the mask, either wholesale (whole_class mode) or only at the violating
depth intervals (per_bin mode). The filtered mask is always a subset of the
input mask.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .depth_stats import (
    ClassDepthHistogram,
    DepthBinning,
    bin_map,
    class_depth_histogram,
    histogram_delta,
)
from .errors import BinningMismatch, InvalidArgument
from .mixer import composite
from .scene import IGNORE, MixMask, SceneSample

STUFF_TAU = 0.15
THING_TAU = 0.05

MODES = ("whole_class", "per_bin")


@dataclass(frozen=True)
class ThresholdTable:
    """Per-class density-difference thresholds; larger values filter less."""

    values: np.ndarray
    default: float = THING_TAU

    def __post_init__(self):
        v = np.array(self.values, dtype=np.float64, copy=True)
        if v.ndim != 1:
            raise InvalidArgument("thresholds must be a flat per-class vector")
        if np.any(np.isnan(v)) or np.any(v < 0):
            raise InvalidArgument("thresholds must be >= 0")
        v.flags.writeable = False
        object.__setattr__(self, "values", v)

    @classmethod
    def uniform(cls, classes: int, tau: float) -> "ThresholdTable":
        return cls(values=np.full(classes, tau), default=tau)


def default_thresholds(
    class_names: list[str],
    stuff_classes: set[str],
    stuff_tau: float = STUFF_TAU,
    thing_tau: float = THING_TAU,
    overrides: dict[str, float] | None = None,
) -> ThresholdTable:
    """Stuff classes (large aggregated regions) get a looser threshold than
    thing classes (small objects); both calibrated on synthetic scenes and
    overridable per class name."""
    values = np.array(
        [stuff_tau if name in stuff_classes else thing_tau for name in class_names]
    )
    if overrides:
        for name, tau in overrides.items():
            values[class_names.index(name)] = tau
    return ThresholdTable(values=values, default=thing_tau)


@dataclass
class ClassFilterStats:
    """Filtering outcome for one pasted class."""

    pasted: int
    removed: int
    max_delta: float
    violating_bins: list[int] = field(default_factory=list)


@dataclass(eq=False)
class FilterReport:
    """Observability record for one dcf_filter call."""

    per_class: dict[int, ClassFilterStats]
    mask_before: MixMask
    mask_after: MixMask
    mode: str

    @property
    def pasted_total(self) -> int:
        return sum(s.pasted for s in self.per_class.values())

    @property
    def removed_total(self) -> int:
        return sum(s.removed for s in self.per_class.values())

    def to_json(self, class_names: list[str] | None = None) -> dict:
        def name(i):
            return class_names[i] if class_names else str(i)

        return {
            "mode": self.mode,
            "pasted_total": self.pasted_total,
            "removed_total": self.removed_total,
            "per_class": {
                name(i): {
                    "pasted": s.pasted,
                    "removed": s.removed,
                    "max_delta": s.max_delta,
                    "violating_bins": s.violating_bins,
                }
                for i, s in sorted(self.per_class.items())
            },
        }


def dcf_filter(
    target: SceneSample,
    source: SceneSample,
    mask: MixMask,
    binning: DepthBinning,
    thresholds: ThresholdTable,
    mode: str = "whole_class",
    target_hist: ClassDepthHistogram | None = None,
) -> tuple[MixMask, FilterReport]:
    """Strip pasted pixels that break the target's per-class depth layout.

    Computes pre-mix densities on the target (pseudo labels + target depth),
    composites the naive mix, recomputes densities on the mixed planes, and
    removes pasted pixels of any class whose per-bin absolute density change
    exceeds that class's threshold. whole_class mode removes every pasted
    pixel of a violating class; per_bin mode removes only pasted pixels lying
    in violating depth intervals. Target labels are expected to be pseudo
    labels; `target_hist` may carry a precomputed pre-mix histogram (its
    binning must match).
    """
    if mode not in MODES:
        raise InvalidArgument(f"mode must be one of {MODES}, got {mode!r}")
    c = target.labels.classes
    if thresholds.values.shape[0] != c:
        raise InvalidArgument(
            f"threshold table covers {thresholds.values.shape[0]} classes, scene has {c}"
        )
    if target_hist is None:
        target_hist = class_depth_histogram(target.labels, target.depth, binning)
    elif target_hist.binning != binning:
        raise BinningMismatch("precomputed target histogram uses a different binning")

    mixed = composite(source, target, mask)
    mixed_hist = class_depth_histogram(mixed.labels, mixed.depth, binning)

    pasted_labels = source.labels.data
    keep = mask.data.copy()
    per_class: dict[int, ClassFilterStats] = {}
    for i in np.unique(pasted_labels[mask.data]):
        if i == IGNORE:
            continue
        i = int(i)
        class_pixels = mask.data & (pasted_labels == i)
        delta = histogram_delta(target_hist, mixed_hist, i)
        tau = float(thresholds.values[i])
        violating = np.flatnonzero(delta > tau)
        stats = ClassFilterStats(
            pasted=int(class_pixels.sum()),
            removed=0,
            max_delta=float(delta.max()),
            violating_bins=[int(k) for k in violating],
        )
        if violating.size:
            if mode == "whole_class":
                removed = class_pixels
            else:
                # Pasted pixels carry source depth, so bin them by it.
                bins = bin_map(source.depth, binning)
                removed = class_pixels & np.isin(bins, violating)
            keep &= ~removed
            stats.removed = int(removed.sum())
        per_class[i] = stats

    mask_after = MixMask(keep)
    report = FilterReport(
        per_class=per_class, mask_before=mask, mask_after=mask_after, mode=mode
    )
    return mask_after, report


def apply_filtered_mask(
    source: SceneSample, target: SceneSample, mask_dcf: MixMask
) -> SceneSample:
    """Composite source over target under the filtered mask."""
    return composite(source, target, mask_dcf)
