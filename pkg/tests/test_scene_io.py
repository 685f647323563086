"""PNG round-trips, manifest handling, and mask/overlay rendering."""

import json

import numpy as np
import pytest
from PIL import Image as PILImage

from dcfmix import (
    BadEncoding,
    ClassOutOfRange,
    CorpusManifest,
    DepthMap,
    DimensionMismatch,
    Image,
    IoFailure,
    LabelMap,
    ManifestEntry,
    MixMask,
    SceneSample,
    load_mask,
    load_sample,
    overlay_mask,
    save_mask,
    save_sample,
)
from dcfmix.scene import IGNORE, MAX_ENCODABLE_DEPTH


def write_planes(directory, image, label, depth_mm, stem="s"):
    """Write raw PNGs with PIL only, bypassing the library's save path."""
    paths = {
        "image": directory / f"{stem}_image.png",
        "label": directory / f"{stem}_label.png",
        "depth": directory / f"{stem}_depth.png",
    }
    PILImage.fromarray(image, mode="RGB").save(paths["image"])
    PILImage.fromarray(label, mode="L").save(paths["label"])
    PILImage.fromarray(depth_mm.astype(np.uint16)).save(paths["depth"])
    return ManifestEntry(id=stem, image=paths["image"],
                         label=paths["label"], depth=paths["depth"])


def random_sample(rng, sid, classes=5, shape=(6, 7)):
    h, w = shape
    labels = rng.integers(0, classes, size=(h, w)).astype(np.uint8)
    labels[rng.random((h, w)) < 0.15] = IGNORE
    depth = rng.integers(0, 65536, size=(h, w)).astype(np.float64) / 1000.0
    depth[rng.random((h, w)) < 0.1] = 0.0
    image = rng.integers(0, 256, size=(h, w, 3)).astype(np.uint8)
    return SceneSample(image=Image(image), labels=LabelMap(labels, classes=classes),
                       depth=DepthMap(depth), id=sid)


def test_label_png_decodes_to_class_indices(tmp_path):
    image = np.zeros((2, 2, 3), dtype=np.uint8)
    label = np.array([[0, 1], [1, 0]], dtype=np.uint8)
    depth = np.full((2, 2), 5000, dtype=np.uint16)
    entry = write_planes(tmp_path, image, label, depth)
    sample = load_sample(entry, classes=2)
    assert np.array_equal(sample.labels.data, label)


def test_depth_png_converts_millimeters_to_meters(tmp_path):
    image = np.zeros((2, 2, 3), dtype=np.uint8)
    label = np.zeros((2, 2), dtype=np.uint8)
    depth = np.full((2, 2), 5000, dtype=np.uint16)
    entry = write_planes(tmp_path, image, label, depth)
    sample = load_sample(entry, classes=1)
    assert np.all(sample.depth.data == 5.0)


def test_label_above_class_count_rejected(tmp_path):
    image = np.zeros((2, 2, 3), dtype=np.uint8)
    label = np.full((2, 2), 7, dtype=np.uint8)
    depth = np.full((2, 2), 1000, dtype=np.uint16)
    entry = write_planes(tmp_path, image, label, depth)
    with pytest.raises(ClassOutOfRange):
        load_sample(entry, classes=5)


def test_wrong_encodings_rejected(tmp_path):
    image = np.zeros((2, 2, 3), dtype=np.uint8)
    label = np.zeros((2, 2), dtype=np.uint8)
    depth = np.full((2, 2), 1000, dtype=np.uint16)
    good = write_planes(tmp_path, image, label, depth)

    rgb_label = tmp_path / "rgb_label.png"
    PILImage.fromarray(image, mode="RGB").save(rgb_label)
    bad = ManifestEntry(id="x", image=good.image, label=rgb_label, depth=good.depth)
    with pytest.raises(BadEncoding):
        load_sample(bad, classes=1)

    depth8 = tmp_path / "depth8.png"
    PILImage.fromarray(label, mode="L").save(depth8)
    bad = ManifestEntry(id="x", image=good.image, label=good.label, depth=depth8)
    with pytest.raises(BadEncoding):
        load_sample(bad, classes=1)


def test_missing_file_is_io_failure(tmp_path):
    entry = ManifestEntry(id="x", image=tmp_path / "nope_image.png",
                          label=tmp_path / "nope_label.png",
                          depth=tmp_path / "nope_depth.png")
    with pytest.raises(IoFailure):
        load_sample(entry, classes=1)


def test_round_trip_is_bit_exact(tmp_path):
    rng = np.random.default_rng(21)
    for i in range(25):
        sample = random_sample(rng, f"rt-{i:03d}")
        entry = save_sample(sample, tmp_path)
        again = load_sample(entry, classes=sample.labels.classes)
        assert np.array_equal(sample.image.data, again.image.data)
        assert np.array_equal(sample.labels.data, again.labels.data)
        assert np.array_equal(sample.depth.data, again.depth.data)
        assert again.id == sample.id


def test_ignore_pixels_stored_as_255(tmp_path):
    labels = np.array([[IGNORE, 0]], dtype=np.uint8)
    sample = SceneSample(
        image=Image(np.zeros((1, 2, 3), dtype=np.uint8)),
        labels=LabelMap(labels, classes=1),
        depth=DepthMap(np.array([[0.0, 1.0]])), id="ig")
    entry = save_sample(sample, tmp_path)
    raw = np.asarray(PILImage.open(entry.label))
    assert raw[0, 0] == 255
    again = load_sample(entry, classes=1)
    assert again.labels.data[0, 0] == IGNORE


def test_millimeter_grid_is_exact_up_to_ceiling(tmp_path):
    mm = np.arange(0, 65536, 97, dtype=np.float64)
    mm = np.concatenate([mm, [65535.0]])
    depth = (mm / 1000.0).reshape(1, -1)
    sample = SceneSample(
        image=Image(np.zeros((1, depth.shape[1], 3), dtype=np.uint8)),
        labels=LabelMap(np.zeros(depth.shape, dtype=np.uint8), classes=1),
        depth=DepthMap(depth), id="grid")
    entry = save_sample(sample, tmp_path)
    again = load_sample(entry, classes=1)
    assert np.array_equal(again.depth.data, depth)


def test_depth_beyond_encoding_ceiling_rejected(tmp_path):
    sample = SceneSample(
        image=Image(np.zeros((1, 1, 3), dtype=np.uint8)),
        labels=LabelMap(np.zeros((1, 1), dtype=np.uint8), classes=1),
        depth=DepthMap(np.array([[MAX_ENCODABLE_DEPTH + 0.001]])), id="deep")
    with pytest.raises(BadEncoding):
        save_sample(sample, tmp_path)


def test_unwritable_directory_is_io_failure(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("not a directory")
    rng = np.random.default_rng(0)
    sample = random_sample(rng, "x")
    with pytest.raises(IoFailure):
        save_sample(sample, blocker / "sub")


def test_overlay_identity_on_empty_mask():
    rng = np.random.default_rng(5)
    img = Image(rng.integers(0, 256, size=(4, 4, 3)).astype(np.uint8))
    mask = MixMask(np.zeros((4, 4), dtype=bool))
    out = overlay_mask(img, mask, (255, 0, 0))
    assert np.array_equal(out.data, img.data)


def test_overlay_blends_half_with_floor():
    img = Image(np.zeros((2, 2, 3), dtype=np.uint8))
    mask = MixMask(np.ones((2, 2), dtype=bool))
    out = overlay_mask(img, mask, (255, 0, 0))
    assert np.all(out.data == np.array([127, 0, 0], dtype=np.uint8))


def test_overlay_rejects_mismatched_mask():
    img = Image(np.zeros((2, 2, 3), dtype=np.uint8))
    with pytest.raises(DimensionMismatch):
        overlay_mask(img, MixMask(np.zeros((3, 3), dtype=bool)), (255, 0, 0))


def test_mask_round_trip(tmp_path):
    rng = np.random.default_rng(6)
    mask = MixMask(rng.random((9, 5)) < 0.4)
    path = save_mask(mask, tmp_path / "m.png")
    again = load_mask(path)
    assert np.array_equal(mask.data, again.data)


def test_mask_with_stray_values_rejected(tmp_path):
    path = tmp_path / "gray.png"
    PILImage.fromarray(np.full((2, 2), 128, dtype=np.uint8), mode="L").save(path)
    with pytest.raises(BadEncoding):
        load_mask(path)


def test_manifest_round_trip_and_relative_paths(tmp_path):
    rng = np.random.default_rng(7)
    sub = tmp_path / "corpus"
    entries = [save_sample(random_sample(rng, f"a-{i}"), sub) for i in range(3)]
    manifest = CorpusManifest(role="source", classes=5,
                              class_names=["a", "b", "c", "d", "e"],
                              entries=entries)
    path = sub / "manifest.json"
    manifest.save(path)
    blob = json.loads(path.read_text())
    assert all("/" not in e["image"] for e in blob["entries"])  # stored relative
    again = CorpusManifest.load(path)
    assert again.role == "source"
    assert [e.id for e in again.entries] == [e.id for e in entries]
    sample = load_sample(again.entries[0], classes=again.classes)
    assert sample.id == "a-0"


def test_manifest_with_missing_plane_rejected(tmp_path):
    rng = np.random.default_rng(8)
    sub = tmp_path / "corpus"
    entries = [save_sample(random_sample(rng, "a-0"), sub)]
    manifest = CorpusManifest(role="target", classes=5,
                              class_names=["a", "b", "c", "d", "e"],
                              entries=entries)
    path = sub / "manifest.json"
    manifest.save(path)
    entries[0].depth.unlink()
    with pytest.raises(IoFailure):
        CorpusManifest.load(path)


def test_sample_rejects_plane_disagreement():
    with pytest.raises(DimensionMismatch):
        SceneSample(
            image=Image(np.zeros((2, 2, 3), dtype=np.uint8)),
            labels=LabelMap(np.zeros((2, 3), dtype=np.uint8), classes=1),
            depth=DepthMap(np.zeros((2, 2))), id="bad")
