"""Synthetic scenes for tests, benchmarks and smoke runs of the CLI.

Scenes are tiled with materials drawn from a fixed reflectance palette,
shaded per pixel and lit by an illuminant from a warm-to-cool curve.
"""
from __future__ import annotations

import csv
from pathlib import Path

import numpy as np

from .imaging import GroundTruth, LinearImage, write_manifest, write_raw

# Palette of true colors; brightest entries are the least saturated.
REFLECTANCES = np.array([
    [0.90, 0.90, 0.88],
    [0.75, 0.78, 0.80],
    [0.60, 0.45, 0.30],
    [0.30, 0.55, 0.25],
    [0.25, 0.35, 0.60],
    [0.70, 0.30, 0.25],
    [0.45, 0.60, 0.55],
    [0.55, 0.50, 0.20],
    [0.35, 0.25, 0.45],
    [0.20, 0.45, 0.45],
])


def planckian_like(n: int = 12) -> np.ndarray:
    """``n`` unit illuminants from warm (red-heavy) to cool (blue-heavy)."""
    t = np.linspace(0.0, 1.0, n)
    rgb = np.stack([1.25 - 0.75 * t, 1.0 + 0.08 * np.sin(np.pi * t), 0.35 + 0.85 * t], axis=1)
    return rgb / np.linalg.norm(rgb, axis=1, keepdims=True)


def make_scene(rng: np.random.Generator, shape=(48, 64), tile: int = 8,
               n_materials: int = 5, noise: float = 0.01) -> np.ndarray:
    """True-color image (H, W, 3) under a white light."""
    h, w = shape
    mats = rng.choice(len(REFLECTANCES), size=min(n_materials, len(REFLECTANCES)), replace=False)
    th, tw = -(-h // tile), -(-w // tile)
    labels = rng.choice(mats, size=(th, tw))
    labels = np.repeat(np.repeat(labels, tile, 0), tile, 1)[:h, :w]
    refl = REFLECTANCES[labels]
    shading = rng.uniform(0.3, 1.0, size=(h, w, 1))
    jitter = 1.0 + noise * rng.standard_normal((h, w, 3))
    return np.clip(refl * shading * jitter, 1e-4, None)


def render(scene: np.ndarray, illuminant, exposure: float = 1.0) -> np.ndarray:
    return scene * np.asarray(illuminant) * exposure


def make_dataset(n_images: int, rng: np.random.Generator, illuminants=None, shape=(48, 64),
                 **scene_kw) -> list[tuple[LinearImage, GroundTruth]]:
    illuminants = planckian_like() if illuminants is None else np.asarray(illuminants)
    out = []
    for k in range(n_images):
        m = illuminants[rng.integers(len(illuminants))]
        px = render(make_scene(rng, shape, **scene_kw), m, rng.uniform(0.5, 2.0))
        img = LinearImage(px, np.ones(shape, dtype=bool), "synthetic", f"img{k:04d}")
        out.append((img, GroundTruth(m)))
    return out


def write_dataset(root, n_per_camera=(6, 12), seed: int = 0, shape=(48, 64),
                  illuminants=None, **scene_kw) -> Path:
    """Write a two-camera dataset with masked gray charts; returns the manifest path.

    The first camera has no black level, the second a black level of 129.
    """
    root = Path(root)
    (root / "images").mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    illuminants = planckian_like() if illuminants is None else np.asarray(illuminants)
    cams = (("canon1d", 0), ("canon5d", 129))
    cam_rows, gt_rows, mask_rows = [], [], []
    for (cam, black), count in zip(cams, n_per_camera):
        for k in range(count):
            name = f"{cam}_{k:04d}.png"
            m = illuminants[rng.integers(len(illuminants))]
            scene = make_scene(rng, shape, **scene_kw)
            y0, x0 = shape[0] - 10, shape[1] - 14
            scene[y0:y0 + 6, x0:x0 + 10] = 0.5
            v = render(scene, m, rng.uniform(0.5, 2.0)) * 20000.0
            raw = np.clip(np.round(v) + black, 0, 65535).astype(np.uint16)
            write_raw(root / "images" / name, raw)
            gray = raw[y0:y0 + 6, x0:x0 + 10].reshape(-1, 3).astype(float).mean(0) - black
            cam_rows.append([name, cam, black])
            gt_rows.append([name, *(repr(float(v)) for v in gray)])
            mask_rows.append([name, x0, y0, x0 + 10, y0 + 6])
    for fname, header, rows in (
        ("camera_map.csv", ["filename", "camera_id", "black_level"], cam_rows),
        ("ground_truth.csv", ["filename", "r", "g", "b"], gt_rows),
        ("masks.csv", ["filename", "x0", "y0", "x1", "y1"], mask_rows),
    ):
        with open(root / fname, "w", newline="") as f:
            w = csv.writer(f, lineterminator="\n")
            w.writerow(header)
            w.writerows(rows)
    manifest = root / "manifest.json"
    write_manifest(manifest, root / "images", root / "camera_map.csv",
                   root / "ground_truth.csv", root / "masks.csv")
    return manifest
