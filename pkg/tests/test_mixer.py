"""Class selection, mask construction, and three-plane compositing."""

import math

import numpy as np
import pytest

from dcfmix import (
    ClassSelection,
    DepthMap,
    DimensionMismatch,
    EmptySource,
    Image,
    LabelMap,
    MixMask,
    SceneSample,
    build_mask,
    composite,
    select_classes,
)
from dcfmix.scene import IGNORE


def make_sample(rng, sid, classes=6, shape=(8, 8), ignore_frac=0.0):
    h, w = shape
    labels = rng.integers(0, classes, size=(h, w)).astype(np.uint8)
    if ignore_frac:
        labels[rng.random((h, w)) < ignore_frac] = IGNORE
    depth = rng.integers(1, 60001, size=(h, w)).astype(np.float64) / 1000.0
    image = rng.integers(0, 256, size=(h, w, 3)).astype(np.uint8)
    return SceneSample(image=Image(image), labels=LabelMap(labels, classes=classes),
                       depth=DepthMap(depth), id=sid)


def test_selection_deterministic_and_half_sized():
    rng = np.random.default_rng(31)
    for _ in range(30):
        sample = make_sample(rng, "s", classes=int(rng.integers(1, 9)),
                             ignore_frac=0.2)
        present = set(sample.labels.present_classes().tolist())
        if not present:
            continue
        seed = int(rng.integers(2**31))
        sel1 = select_classes(sample.labels, seed)
        sel2 = select_classes(sample.labels, seed)
        assert sel1.chosen == sel2.chosen
        assert sel1.chosen <= present
        assert len(sel1.chosen) == math.ceil(len(present) / 2)


def test_single_class_is_always_selected():
    labels = LabelMap(np.full((3, 3), 4, dtype=np.uint8), classes=5)
    sel = select_classes(labels, seed=0)
    assert sel.chosen == {4}


def test_all_ignore_source_rejected():
    labels = LabelMap(np.full((3, 3), IGNORE, dtype=np.uint8), classes=5)
    with pytest.raises(EmptySource):
        select_classes(labels, seed=0)


def test_mask_is_membership_test():
    labels = LabelMap(np.array([[0, 1], [2, 0]], dtype=np.uint8), classes=3)
    mask = build_mask(labels, ClassSelection(chosen=frozenset({0}), seed=0))
    assert np.array_equal(mask.data, [[True, False], [False, True]])


def test_full_selection_covers_exactly_non_ignore():
    rng = np.random.default_rng(32)
    sample = make_sample(rng, "s", ignore_frac=0.3)
    present = frozenset(sample.labels.present_classes().tolist())
    mask = build_mask(sample.labels, ClassSelection(chosen=present, seed=0))
    assert np.array_equal(mask.data, sample.labels.data != IGNORE)


def test_empty_selection_gives_empty_mask():
    rng = np.random.default_rng(33)
    sample = make_sample(rng, "s")
    mask = build_mask(sample.labels, ClassSelection(chosen=frozenset(), seed=0))
    assert mask.count() == 0


def test_composite_reduces_to_target_under_empty_mask():
    rng = np.random.default_rng(34)
    src = make_sample(rng, "src")
    tgt = make_sample(rng, "tgt")
    out = composite(src, tgt, MixMask(np.zeros((8, 8), dtype=bool)))
    assert np.array_equal(out.image.data, tgt.image.data)
    assert np.array_equal(out.labels.data, tgt.labels.data)
    assert np.array_equal(out.depth.data, tgt.depth.data)


def test_composite_reduces_to_source_under_full_mask():
    rng = np.random.default_rng(35)
    src = make_sample(rng, "src")
    tgt = make_sample(rng, "tgt")
    out = composite(src, tgt, MixMask(np.ones((8, 8), dtype=bool)))
    assert np.array_equal(out.image.data, src.image.data)
    assert np.array_equal(out.labels.data, src.labels.data)
    assert np.array_equal(out.depth.data, src.depth.data)


def test_composite_selects_per_pixel_in_all_planes():
    rng = np.random.default_rng(36)
    src = make_sample(rng, "src", shape=(2, 2))
    tgt = make_sample(rng, "tgt", shape=(2, 2))
    mask = np.array([[True, False], [False, False]])
    out = composite(src, tgt, MixMask(mask))
    for y in range(2):
        for x in range(2):
            pick = src if mask[y, x] else tgt
            assert np.array_equal(out.image.data[y, x], pick.image.data[y, x])
            assert out.labels.data[y, x] == pick.labels.data[y, x]
            assert out.depth.data[y, x] == pick.depth.data[y, x]


def test_composite_never_interpolates():
    rng = np.random.default_rng(37)
    src = make_sample(rng, "src")
    tgt = make_sample(rng, "tgt")
    mask = rng.random((8, 8)) < 0.5
    out = composite(src, tgt, MixMask(mask))
    from_src = np.all(out.image.data == src.image.data, axis=-1)
    from_tgt = np.all(out.image.data == tgt.image.data, axis=-1)
    assert np.all(from_src | from_tgt)


def test_complement_masks_agree():
    rng = np.random.default_rng(38)
    src = make_sample(rng, "src", ignore_frac=0.2)
    tgt = make_sample(rng, "tgt", ignore_frac=0.2)
    mask = rng.random((8, 8)) < 0.5
    a = composite(src, tgt, MixMask(mask))
    b = composite(tgt, src, MixMask(~mask))
    assert np.array_equal(a.image.data, b.image.data)
    keep = (a.labels.data != IGNORE) & (b.labels.data != IGNORE)
    assert np.array_equal(a.labels.data[keep], b.labels.data[keep])


def test_composite_rejects_plane_disagreement():
    rng = np.random.default_rng(39)
    src = make_sample(rng, "src", shape=(4, 4))
    tgt = make_sample(rng, "tgt", shape=(5, 4))
    with pytest.raises(DimensionMismatch):
        composite(src, tgt, MixMask(np.zeros((4, 4), dtype=bool)))
    tgt2 = make_sample(rng, "tgt2", shape=(4, 4), classes=3)
    with pytest.raises(DimensionMismatch):
        composite(src, tgt2, MixMask(np.zeros((4, 4), dtype=bool)))


def test_mixed_id_names_both_parents():
    rng = np.random.default_rng(40)
    src = make_sample(rng, "src")
    tgt = make_sample(rng, "tgt")
    out = composite(src, tgt, MixMask(np.zeros((8, 8), dtype=bool)))
    assert "src" in out.id and "tgt" in out.id
