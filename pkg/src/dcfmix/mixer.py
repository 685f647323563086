"""ClassMix-style cross-domain mixing.

Half of the classes present in a source label map are chosen at random; a
binary mask marks their pixels, and compositing copies image, label, and depth
values from the source wherever the mask is set, from the target elsewhere.
The depth plane travels with the pasted pixels so that post-mix depth
statistics can see what the paste did to the scene's geometry.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DimensionMismatch, EmptySource
from .scene import DepthMap, Image, LabelMap, MixMask, SceneSample


@dataclass(frozen=True)
class ClassSelection:
    """Classes chosen for pasting, plus the seed that produced the draw."""

    chosen: frozenset[int]
    seed: int


def select_classes(source_labels: LabelMap, seed: int) -> ClassSelection:
    """Uniformly pick ceil(m/2) of the m classes present, without replacement.

    Deterministic under seed. Raises EmptySource when the map holds only
    ignore pixels.
    """
    present = source_labels.present_classes()
    if present.size == 0:
        raise EmptySource("source label map has no non-ignore pixels")
    k = math.ceil(present.size / 2)
    rng = np.random.default_rng(seed)
    chosen = rng.choice(present, size=k, replace=False)
    return ClassSelection(chosen=frozenset(int(c) for c in chosen), seed=seed)


def build_mask(source_labels: LabelMap, selection: ClassSelection) -> MixMask:
    """Mask true exactly where the source label is one of the chosen classes."""
    if not selection.chosen:
        return MixMask(np.zeros(source_labels.data.shape, dtype=bool))
    chosen = np.fromiter(selection.chosen, dtype=np.int64)
    return MixMask(np.isin(source_labels.data, chosen))


def composite(source: SceneSample, target: SceneSample, mask: MixMask) -> SceneSample:
    """Per-pixel select: source where mask is true, target elsewhere.

    Applies identically to image, label, and depth planes; no interpolation.
    """
    if (source.height, source.width) != (target.height, target.width) or (
        source.height,
        source.width,
    ) != (mask.height, mask.width):
        raise DimensionMismatch(
            f"source {source.height}x{source.width}, target "
            f"{target.height}x{target.width}, mask {mask.height}x{mask.width}"
        )
    if source.labels.classes != target.labels.classes:
        raise DimensionMismatch("source and target class counts differ")
    m = mask.data
    return SceneSample(
        image=Image(np.where(m[..., None], source.image.data, target.image.data)),
        labels=LabelMap(
            np.where(m, source.labels.data, target.labels.data),
            classes=target.labels.classes,
        ),
        depth=DepthMap(np.where(m, source.depth.data, target.depth.data)),
        id=f"mix[{source.id}|{target.id}]",
    )
