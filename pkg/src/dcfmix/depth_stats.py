"""Depth interval partitioning and per-class depth-density histograms.

The density table answers: for each class, what fraction of its valid pixels
falls into each depth interval? Densities are normalized per class, so a class
with any valid pixels sums to 1 across bins; ignore-labeled pixels and pixels
with the invalid-depth sentinel contribute nothing.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionMismatch, InvalidArgument, ShapeMismatch
from .scene import IGNORE, DepthMap, LabelMap

# Returned by bin_of for the 0.0 invalid-depth sentinel.
INVALID_BIN = -1

DEFAULT_N_BINS = 64
DEFAULT_D_MAX = 80.0
LOG_D_MIN = 0.5


@dataclass(frozen=True)
class DepthBinning:
    """n_bins half-open depth intervals [edges[k], edges[k+1]), top-clamped."""

    edges: np.ndarray
    scale: str = "linear"

    def __post_init__(self):
        edges = np.array(self.edges, dtype=np.float64, copy=True)
        if edges.ndim != 1 or edges.size < 2:
            raise InvalidArgument("binning needs at least 2 edges")
        if np.any(np.diff(edges) <= 0):
            raise InvalidArgument("bin edges must be strictly increasing")
        edges.flags.writeable = False
        object.__setattr__(self, "edges", edges)

    @property
    def n_bins(self) -> int:
        return self.edges.size - 1

    @property
    def d_max(self) -> float:
        return float(self.edges[-1])

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, DepthBinning)
            and self.scale == other.scale
            and np.array_equal(self.edges, other.edges)
        )


def make_binning(
    n_bins: int = DEFAULT_N_BINS, d_max: float = DEFAULT_D_MAX, scale: str = "linear"
) -> DepthBinning:
    """Build a binning over [0, d_max].

    linear: uniform edges. log: geometric edges from 0.5 m to d_max with the
    first edge forced to 0, so the first bin absorbs near-camera depths.
    """
    if n_bins < 1:
        raise InvalidArgument(f"n_bins must be >= 1, got {n_bins}")
    if d_max <= 0:
        raise InvalidArgument(f"d_max must be > 0, got {d_max}")
    if scale == "linear":
        edges = np.linspace(0.0, d_max, n_bins + 1)
    elif scale == "log":
        if n_bins == 1:
            edges = np.array([0.0, d_max])
        else:
            if d_max <= LOG_D_MIN:
                raise InvalidArgument(
                    f"log binning needs d_max > {LOG_D_MIN}, got {d_max}"
                )
            edges = np.concatenate(
                [[0.0], np.geomspace(LOG_D_MIN, d_max, n_bins)]
            )
    else:
        raise InvalidArgument(f"unknown scale {scale!r}")
    return DepthBinning(edges=edges, scale=scale)


def bin_of(depth: float, binning: DepthBinning) -> int:
    """Bin index of one depth value; 0.0 maps to INVALID_BIN, overflow clamps."""
    if depth == 0.0:
        return INVALID_BIN
    k = int(np.searchsorted(binning.edges, depth, side="right")) - 1
    return min(k, binning.n_bins - 1)


def bin_map(depth: DepthMap, binning: DepthBinning) -> np.ndarray:
    """Vectorized bin_of over a whole depth map, shape (H, W) int64."""
    k = np.searchsorted(binning.edges, depth.data, side="right") - 1
    k = np.minimum(k, binning.n_bins - 1)
    k[depth.data == 0.0] = INVALID_BIN
    return k


@dataclass(eq=False)
class ClassDepthHistogram:
    """Per-class depth densities: (C, n_bins) rows summing to 1 where supported."""

    densities: np.ndarray
    support: np.ndarray
    binning: DepthBinning

    def __post_init__(self):
        d = np.array(self.densities, dtype=np.float64, copy=True)
        s = np.array(self.support, dtype=np.int64, copy=True)
        if d.ndim != 2 or s.ndim != 1 or d.shape[0] != s.shape[0]:
            raise ShapeMismatch("densities must be (C, n_bins) with support (C,)")
        if d.shape[1] != self.binning.n_bins:
            raise ShapeMismatch("densities width disagrees with binning")
        d.flags.writeable = False
        s.flags.writeable = False
        object.__setattr__(self, "densities", d)
        object.__setattr__(self, "support", s)

    @property
    def classes(self) -> int:
        return self.densities.shape[0]

    @property
    def n_bins(self) -> int:
        return self.densities.shape[1]


def class_depth_histogram(
    labels: LabelMap, depth: DepthMap, binning: DepthBinning
) -> ClassDepthHistogram:
    """Count class pixels per depth interval and normalize per class.

    densities[i][k] = |{p : labels(p)=i, bin(depth(p))=k}| / support[i], with
    support[i] the class-i pixel count over pixels that are neither ignore-
    labeled nor missing depth. Classes with zero support get all-zero rows.
    """
    if (labels.height, labels.width) != (depth.height, depth.width):
        raise DimensionMismatch(
            f"labels {labels.height}x{labels.width} vs depth {depth.height}x{depth.width}"
        )
    c = labels.classes
    bins = bin_map(depth, binning)
    valid = (labels.data != IGNORE) & (bins != INVALID_BIN)
    lab = labels.data[valid].astype(np.int64)
    kin = bins[valid]
    counts = np.bincount(
        lab * binning.n_bins + kin, minlength=c * binning.n_bins
    ).reshape(c, binning.n_bins)
    support = counts.sum(axis=1)
    densities = np.zeros_like(counts, dtype=np.float64)
    nonzero = support > 0
    densities[nonzero] = counts[nonzero] / support[nonzero, None]
    return ClassDepthHistogram(densities=densities, support=support, binning=binning)


def histogram_delta(
    before: ClassDepthHistogram, after: ClassDepthHistogram, class_index: int
) -> np.ndarray:
    """Per-bin absolute density difference for one class."""
    if before.densities.shape != after.densities.shape:
        raise ShapeMismatch(
            f"histogram shapes differ: {before.densities.shape} vs {after.densities.shape}"
        )
    if not 0 <= class_index < before.classes:
        raise ShapeMismatch(f"class index {class_index} out of range")
    return np.abs(before.densities[class_index] - after.densities[class_index])


def histogram_to_json(hist: ClassDepthHistogram, class_names: list[str]) -> dict:
    """JSON-ready export used by the CLI stats command."""
    return {
        "class_names": class_names,
        "edges": hist.binning.edges.tolist(),
        "densities": hist.densities.tolist(),
        "support": hist.support.tolist(),
    }
