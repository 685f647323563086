"""Scene sample domain types, bit-exact PNG I/O, and corpus manifests.

A scene sample is an aligned (image, label map, depth map) triplet. Labels are
8-bit class indices with 255 reserved as the ignore sentinel. Depth is stored
in meters in memory and encoded as 16-bit millimeters on disk, with 0.0 (0 mm)
meaning "no valid depth". All types are immutable after construction: array
payloads are copied in and marked read-only.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image as PILImage

from .errors import (
    BadEncoding,
    ClassOutOfRange,
    DimensionMismatch,
    IoFailure,
)

IGNORE = 255
INVALID_DEPTH = 0.0

# 16-bit millimeter PNG ceiling, in meters.
MAX_ENCODABLE_DEPTH = 65.535


def _freeze(arr: np.ndarray) -> np.ndarray:
    out = np.array(arr, copy=True)
    out.flags.writeable = False
    return out


@dataclass(eq=False)
class LabelMap:
    """Per-pixel class indices, shape (H, W) uint8; 255 = ignore."""

    data: np.ndarray
    classes: int

    def __post_init__(self):
        data = np.asarray(self.data)
        if data.ndim != 2:
            raise DimensionMismatch(f"label map must be 2-D, got shape {data.shape}")
        if not 0 < self.classes <= IGNORE:
            raise ClassOutOfRange(f"class count {self.classes} out of range")
        if data.dtype != np.uint8:
            if not np.issubdtype(data.dtype, np.integer):
                raise ClassOutOfRange("label data must be integral")
            if data.size and (data.min() < 0 or data.max() > IGNORE):
                raise ClassOutOfRange("label values outside [0, 255]")
            data = data.astype(np.uint8)
        bad = data[(data != IGNORE) & (data >= self.classes)]
        if bad.size:
            raise ClassOutOfRange(
                f"label value {int(bad[0])} >= class count {self.classes}"
            )
        object.__setattr__(self, "data", _freeze(data))

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    def present_classes(self) -> np.ndarray:
        """Sorted class indices that appear in the map (ignore excluded)."""
        vals = np.unique(self.data)
        return vals[vals != IGNORE].astype(np.int64)


@dataclass(eq=False)
class DepthMap:
    """Per-pixel depth in meters, shape (H, W) float64; 0.0 = invalid."""

    data: np.ndarray

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.float64)
        if data.ndim != 2:
            raise DimensionMismatch(f"depth map must be 2-D, got shape {data.shape}")
        if not np.all(np.isfinite(data)):
            raise ValueError("depth map contains non-finite values")
        if np.any(data < 0):
            raise ValueError("depth map contains negative values")
        object.__setattr__(self, "data", _freeze(data))

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    def valid(self) -> np.ndarray:
        """Boolean map of pixels carrying a real measurement."""
        return self.data > INVALID_DEPTH


@dataclass(eq=False)
class Image:
    """8-bit RGB image, shape (H, W, 3) uint8."""

    data: np.ndarray

    def __post_init__(self):
        data = np.asarray(self.data)
        if data.ndim != 3 or data.shape[2] != 3:
            raise DimensionMismatch(f"image must be (H, W, 3), got shape {data.shape}")
        if data.dtype != np.uint8:
            if data.size and (data.min() < 0 or data.max() > 255):
                raise ValueError("image intensities outside [0, 255]")
            data = data.astype(np.uint8)
        object.__setattr__(self, "data", _freeze(data))

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]


@dataclass(eq=False)
class MixMask:
    """Boolean paste mask, shape (H, W); True = pixel comes from source."""

    data: np.ndarray

    def __post_init__(self):
        data = np.asarray(self.data)
        if data.ndim != 2:
            raise DimensionMismatch(f"mask must be 2-D, got shape {data.shape}")
        object.__setattr__(self, "data", _freeze(data.astype(bool)))

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    def count(self) -> int:
        return int(self.data.sum())


@dataclass(eq=False)
class SceneSample:
    """Aligned (image, labels, depth) triplet for one frame."""

    image: Image
    labels: LabelMap
    depth: DepthMap
    id: str

    def __post_init__(self):
        shapes = {
            "image": (self.image.height, self.image.width),
            "labels": (self.labels.height, self.labels.width),
            "depth": (self.depth.height, self.depth.width),
        }
        if len(set(shapes.values())) != 1:
            raise DimensionMismatch(f"plane dimensions disagree: {shapes}")

    @property
    def height(self) -> int:
        return self.labels.height

    @property
    def width(self) -> int:
        return self.labels.width


@dataclass
class ManifestEntry:
    id: str
    image: Path
    label: Path
    depth: Path


@dataclass
class CorpusManifest:
    """Index of one corpus: role, class vocabulary, and per-sample file paths."""

    role: str
    classes: int
    class_names: list[str]
    entries: list[ManifestEntry] = field(default_factory=list)

    def __post_init__(self):
        if self.role not in ("source", "target"):
            raise ValueError(f"role must be 'source' or 'target', got {self.role!r}")
        if len(self.class_names) != self.classes:
            raise ValueError("class_names length must equal class count")
        ids = [e.id for e in self.entries]
        if len(set(ids)) != len(ids):
            raise ValueError("manifest entry ids are not unique")

    @classmethod
    def load(cls, path) -> "CorpusManifest":
        """Read a manifest JSON; relative entry paths resolve against its directory.

        Every referenced file must exist.
        """
        path = Path(path)
        try:
            raw = json.loads(path.read_text())
        except OSError as exc:
            raise IoFailure(f"cannot read manifest {path}: {exc}") from exc
        base = path.parent
        entries = []
        for e in raw["entries"]:
            entry = ManifestEntry(
                id=e["id"],
                image=_resolve(base, e["image"]),
                label=_resolve(base, e["label"]),
                depth=_resolve(base, e["depth"]),
            )
            for p in (entry.image, entry.label, entry.depth):
                if not p.is_file():
                    raise IoFailure(f"manifest references missing file: {p}")
            entries.append(entry)
        return cls(
            role=raw["role"],
            classes=int(raw["classes"]),
            class_names=list(raw["class_names"]),
            entries=entries,
        )

    def save(self, path) -> None:
        """Write manifest JSON with entry paths relative to the manifest dir."""
        path = Path(path)
        base = path.parent.resolve()
        payload = {
            "role": self.role,
            "classes": self.classes,
            "class_names": self.class_names,
            "entries": [
                {
                    "id": e.id,
                    "image": _relativize(base, e.image),
                    "label": _relativize(base, e.label),
                    "depth": _relativize(base, e.depth),
                }
                for e in self.entries
            ],
        }
        try:
            path.write_text(json.dumps(payload, indent=2) + "\n")
        except OSError as exc:
            raise IoFailure(f"cannot write manifest {path}: {exc}") from exc


def _resolve(base: Path, p: str) -> Path:
    q = Path(p)
    return q if q.is_absolute() else (base / q)


def _relativize(base: Path, p: Path) -> str:
    try:
        return os.path.relpath(Path(p).resolve(), base)
    except ValueError:
        return str(p)


def _open_png(path: Path) -> PILImage.Image:
    try:
        im = PILImage.open(path)
        im.load()
        return im
    except OSError as exc:
        raise IoFailure(f"cannot read {path}: {exc}") from exc


def load_sample(entry: ManifestEntry, classes: int) -> SceneSample:
    """Decode one manifest entry into a SceneSample.

    The image must be 8-bit RGB, the label an 8-bit single-channel PNG of
    class indices, and the depth a 16-bit single-channel PNG in millimeters
    (converted here to meters). Raises BadEncoding for wrong formats,
    ClassOutOfRange for labels outside [0, classes) that are not 255, and
    DimensionMismatch if the three planes disagree.
    """
    img = _open_png(entry.image)
    if img.mode != "RGB":
        raise BadEncoding(f"{entry.image}: expected 8-bit RGB, got mode {img.mode}")
    lab = _open_png(entry.label)
    if lab.mode != "L":
        raise BadEncoding(
            f"{entry.label}: expected 8-bit single-channel PNG, got mode {lab.mode}"
        )
    dep = _open_png(entry.depth)
    if dep.mode not in ("I;16", "I"):
        raise BadEncoding(
            f"{entry.depth}: expected 16-bit single-channel PNG, got mode {dep.mode}"
        )
    depth_mm = np.asarray(dep)
    if depth_mm.min() < 0 or depth_mm.max() > 65535:
        raise BadEncoding(f"{entry.depth}: values outside 16-bit range")
    return SceneSample(
        image=Image(np.asarray(img)),
        labels=LabelMap(np.asarray(lab), classes=classes),
        depth=DepthMap(depth_mm.astype(np.float64) / 1000.0),
        id=entry.id,
    )


def save_sample(sample: SceneSample, directory) -> ManifestEntry:
    """Write the three planes as PNGs under `directory`, named by sample id.

    Round-trip property: load_sample(save_sample(s)) reproduces s bit-exactly,
    provided depth values are exact multiples of 1 mm (as all toolkit-produced
    samples are). Depth above 65.535 m cannot be encoded.
    """
    directory = Path(directory)
    mm = np.round(sample.depth.data * 1000.0)
    if mm.max() > 65535:
        raise BadEncoding(
            f"sample {sample.id}: depth {sample.depth.data.max():.3f} m exceeds "
            f"the {MAX_ENCODABLE_DEPTH} m 16-bit millimeter ceiling"
        )
    entry = ManifestEntry(
        id=sample.id,
        image=directory / f"{sample.id}_image.png",
        label=directory / f"{sample.id}_label.png",
        depth=directory / f"{sample.id}_depth.png",
    )
    try:
        directory.mkdir(parents=True, exist_ok=True)
        PILImage.fromarray(sample.image.data, mode="RGB").save(entry.image)
        PILImage.fromarray(sample.labels.data, mode="L").save(entry.label)
        PILImage.fromarray(mm.astype(np.uint16)).save(entry.depth)
    except OSError as exc:
        raise IoFailure(f"cannot write sample {sample.id} to {directory}: {exc}") from exc
    return entry


def overlay_mask(image: Image, mask: MixMask, color=(255, 0, 0)) -> Image:
    """Render a mask over an image: 50% blend (integer floor) where mask is true."""
    if (image.height, image.width) != (mask.height, mask.width):
        raise DimensionMismatch(
            f"image {image.height}x{image.width} vs mask {mask.height}x{mask.width}"
        )
    out = image.data.astype(np.uint16).copy()
    tint = np.asarray(color, dtype=np.uint16)
    out[mask.data] = (out[mask.data] + tint) // 2
    return Image(out.astype(np.uint8))


def save_mask(mask: MixMask, path) -> Path:
    """Binary mask as an 8-bit single-channel PNG: 255 where true, 0 elsewhere."""
    path = Path(path)
    data = np.where(mask.data, 255, 0).astype(np.uint8)
    try:
        PILImage.fromarray(data, mode="L").save(path, format="PNG")
    except OSError as exc:
        raise IoFailure(f"cannot write mask to {path}: {exc}") from exc
    return path


def load_mask(path) -> MixMask:
    """Reload a mask written by save_mask."""
    img = _open_png(path)
    if img.mode != "L":
        raise BadEncoding(
            f"{path}: expected 8-bit single-channel PNG, got mode {img.mode}"
        )
    arr = np.asarray(img)
    if arr.size and not np.isin(arr, (0, 255)).all():
        raise BadEncoding(f"{path}: mask pixels must be 0 or 255")
    return MixMask(arr == 255)
