"""Linear image ingestion, masking, luminance normalization and relighting."""
from __future__ import annotations

import csv
import json
import os
from dataclasses import dataclass, field, replace
from pathlib import Path

import cv2
import numpy as np

from . import _kernels
from .colorspace import chromaticity_of
from .errors import (
    DegenerateIlluminant,
    DimensionMismatch,
    EmptyImage,
    MissingFile,
    OutOfBounds,
    UnsupportedFormat,
)

CAMERA_BLACK_LEVELS = {"canon1d": 0, "canon5d": 129}
SENSOR_MAX = 65535
SATURATION_FRACTION = 0.98


def _frozen(a: np.ndarray) -> np.ndarray:
    a.flags.writeable = False
    return a


@dataclass(frozen=True, eq=False)
class LinearImage:
    """Black-level corrected linear RGB raster, shape (H, W, 3), float64."""

    pixels: np.ndarray
    valid_mask: np.ndarray
    camera_id: str = "unknown"
    name: str = ""

    def __post_init__(self):
        px = np.ascontiguousarray(self.pixels, dtype=np.float64)
        mask = np.ascontiguousarray(self.valid_mask, dtype=bool)
        if px.ndim != 3 or px.shape[2] != 3:
            raise DimensionMismatch(f"pixels must be (H, W, 3), got {px.shape}")
        if mask.shape != px.shape[:2]:
            raise DimensionMismatch(f"mask shape {mask.shape} != image shape {px.shape[:2]}")
        object.__setattr__(self, "pixels", _frozen(px))
        object.__setattr__(self, "valid_mask", _frozen(mask))

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def n_valid(self) -> int:
        return int(self.valid_mask.sum())

    def scaled(self, k: float) -> "LinearImage":
        return replace(self, pixels=self.pixels * k)


@dataclass(frozen=True, eq=False)
class GroundTruth:
    illuminant: np.ndarray
    raw_magnitude: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "illuminant", _frozen(np.array(self.illuminant, dtype=np.float64)))

    @classmethod
    def from_rgb(cls, rgb) -> "GroundTruth":
        rgb = np.asarray(rgb, dtype=np.float64)
        return cls(chromaticity_of(rgb), float(np.abs(rgb).sum()))


@dataclass(frozen=True)
class NormalizedLuminanceMap:
    y: np.ndarray
    median_l1: float


# -- file formats -------------------------------------------------------------

def read_raw(path) -> np.ndarray:
    """Read a 16-bit RGB PNG or P6 PPM as a uint16 (H, W, 3) array in RGB order."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(str(path))
    raw = cv2.imread(str(path), cv2.IMREAD_UNCHANGED)
    if raw is None:
        raise UnsupportedFormat(f"{path}: not a readable image")
    if raw.dtype != np.uint16 or raw.ndim != 3 or raw.shape[2] != 3:
        raise UnsupportedFormat(f"{path}: expected 16-bit 3-channel image, got {raw.dtype} {raw.shape}")
    return np.ascontiguousarray(raw[:, :, ::-1])


def write_raw(path, raw: np.ndarray) -> None:
    """Write a uint16 (H, W, 3) RGB array as 16-bit PNG or PPM (by suffix)."""
    raw = np.asarray(raw)
    if raw.dtype != np.uint16 or raw.ndim != 3 or raw.shape[2] != 3:
        raise UnsupportedFormat("write_raw expects uint16 (H, W, 3)")
    if not cv2.imwrite(str(path), np.ascontiguousarray(raw[:, :, ::-1])):
        raise UnsupportedFormat(f"could not write {path}")


def load_linear_image(path, camera_id: str = "unknown", black_level: int | None = None,
                      saturation: int = SENSOR_MAX, mask_path=None) -> LinearImage:
    """Load a linear raster, subtract the black level and flag clipped pixels.

    Pixels with any raw channel at or above 0.98 of ``saturation`` are
    marked invalid. ``mask_path`` optionally names an 8-bit sidecar image
    whose nonzero pixels are excluded.
    """
    if black_level is None:
        black_level = CAMERA_BLACK_LEVELS.get(camera_id, 0)
    raw = read_raw(path)
    valid = ~np.any(raw >= SATURATION_FRACTION * saturation, axis=2)
    pixels = np.maximum(raw.astype(np.float64) - black_level, 0.0)
    if mask_path is not None:
        side = cv2.imread(str(mask_path), cv2.IMREAD_GRAYSCALE)
        if side is None:
            raise UnsupportedFormat(f"{mask_path}: unreadable mask")
        if side.shape != raw.shape[:2]:
            raise DimensionMismatch(f"mask {side.shape} vs image {raw.shape[:2]}")
        valid &= side == 0
    return LinearImage(pixels, valid, camera_id, Path(path).name)


def apply_checker_mask(img: LinearImage, rects) -> LinearImage:
    """Invalidate every (x0, y0, x1, y1) rectangle, inclusive-exclusive."""
    mask = img.valid_mask.copy()
    for x0, y0, x1, y1 in rects:
        if not (0 <= x0 <= x1 <= img.width and 0 <= y0 <= y1 <= img.height):
            raise OutOfBounds(f"rectangle {(x0, y0, x1, y1)} outside {img.width}x{img.height}")
        mask[y0:y1, x0:x1] = False
    return replace(img, valid_mask=mask)


def _l1(img: LinearImage) -> np.ndarray:
    return _kernels.l1_norms(img.pixels.reshape(-1, 3)).reshape(img.valid_mask.shape)


def median_l1(img: LinearImage, l1: np.ndarray | None = None) -> float:
    """Lower median of L1 luminance over valid pixels with nonzero luminance."""
    l1 = _l1(img) if l1 is None else l1
    sel = l1[img.valid_mask & (l1 > 0)]
    if sel.size == 0:
        raise EmptyImage(f"{img.name or 'image'} has no valid nonzero pixels")
    k = (sel.size - 1) // 2
    return float(np.partition(sel, k)[k])


def normalize_luminance(img: LinearImage) -> NormalizedLuminanceMap:
    """Per-pixel L1 luminance over its per-image median; 0 at invalid pixels."""
    l1 = _l1(img)
    median = median_l1(img, l1)
    return NormalizedLuminanceMap(np.where(img.valid_mask, l1 / median, 0.0), median)


def _check_illuminant(m) -> np.ndarray:
    m = np.asarray(m, dtype=np.float64)
    if np.any(m <= 0):
        raise DegenerateIlluminant(f"illuminant {m} has a non-positive channel")
    return m


def relight(img: LinearImage, gt: GroundTruth, new_illum) -> tuple[LinearImage, GroundTruth]:
    old = _check_illuminant(gt.illuminant)
    new = np.asarray(new_illum, dtype=np.float64)
    pixels = img.pixels * (new / old)
    return replace(img, pixels=pixels), GroundTruth(new, gt.raw_magnitude)


def correct_image(img: LinearImage, illum) -> LinearImage:
    """Divide out ``illum`` per channel, keeping the peak channel value."""
    m = _check_illuminant(illum)
    x = img.pixels / m
    peak_in, peak_out = img.pixels.max(), x.max()
    if peak_out > 0:
        x = x * (peak_in / peak_out)
    return replace(img, pixels=x)


# -- dataset listing ----------------------------------------------------------

def _rows(path):
    with open(path, newline="") as f:
        return [
            {k.strip(): (v or "").strip() for k, v in row.items()}
            for row in csv.DictReader(f)
        ]


def load_ground_truth(path) -> dict[str, GroundTruth]:
    return {
        r["filename"]: GroundTruth.from_rgb([float(r["r"]), float(r["g"]), float(r["b"])])
        for r in _rows(path)
    }


def load_masks(path) -> dict[str, list[tuple[int, int, int, int]]]:
    out: dict[str, list] = {}
    for r in _rows(path):
        rect = tuple(int(r[k]) for k in ("x0", "y0", "x1", "y1"))
        out.setdefault(r["filename"], []).append(rect)
    return out


@dataclass(frozen=True)
class ManifestEntry:
    filename: str
    camera_id: str
    black_level: int
    saturation: int = SENSOR_MAX


def load_camera_map(path) -> list[ManifestEntry]:
    entries = []
    for r in _rows(path):
        cam = r["camera_id"]
        bl = r.get("black_level", "")
        sat = r.get("saturation", "")
        entries.append(ManifestEntry(
            r["filename"], cam,
            int(bl) if bl else CAMERA_BLACK_LEVELS.get(cam, 0),
            int(sat) if sat else SENSOR_MAX,
        ))
    return entries


@dataclass
class Manifest:
    """Dataset listing: image directory plus camera map, ground truth and masks.

    On disk this is a JSON object with keys ``images``, ``camera_map``,
    ``ground_truth`` and optional ``masks``; relative paths resolve against
    the manifest's directory.
    """

    image_dir: Path
    entries: list[ManifestEntry]
    truth: dict[str, GroundTruth]
    masks: dict[str, list] = field(default_factory=dict)
    source: Path | None = None

    @classmethod
    def load(cls, path) -> "Manifest":
        path = Path(path)
        if not path.exists():
            raise MissingFile(f"manifest {path} not found")
        doc = json.loads(path.read_text())
        base = path.parent

        def resolve(key):
            return base / doc[key]

        entries = load_camera_map(resolve("camera_map"))
        truth = load_ground_truth(resolve("ground_truth"))
        masks = load_masks(resolve("masks")) if doc.get("masks") else {}
        missing = [e.filename for e in entries if e.filename not in truth]
        if missing:
            raise MissingFile(f"no ground truth for {missing[:5]}")
        return cls(resolve("images"), entries, truth, masks, path)

    def by_name(self) -> dict[str, ManifestEntry]:
        return {e.filename: e for e in self.entries}

    def read(self, entry: ManifestEntry) -> tuple[LinearImage, GroundTruth]:
        path = self.image_dir / entry.filename
        if not os.path.exists(path):
            raise MissingFile(f"image {path} listed in manifest is missing")
        img = load_linear_image(path, entry.camera_id, entry.black_level, entry.saturation)
        rects = self.masks.get(entry.filename)
        if rects:
            img = apply_checker_mask(img, rects)
        return img, self.truth[entry.filename]


def write_manifest(path, image_dir, camera_map, ground_truth, masks=None) -> None:
    """Write a manifest JSON whose paths are relative to its own directory."""
    path = Path(path)
    base = path.parent.resolve()

    def rel(p):
        return os.path.relpath(Path(p).resolve(), base)

    doc = {"images": rel(image_dir), "camera_map": rel(camera_map), "ground_truth": rel(ground_truth)}
    if masks is not None:
        doc["masks"] = rel(masks)
    path.write_text(json.dumps(doc, indent=2) + "\n")
