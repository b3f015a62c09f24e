"""Per-image illuminant estimation from a belief table and candidate set."""
from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import cv2
import numpy as np

from . import _kernels
from .colorspace import CHROMA_RES, N_CHROMA_BINS, N_LUM_BINS, angular_error, bin_centers, quantize_chroma_flat
from .errors import DegenerateIlluminant, EmptyImage
from .imaging import GroundTruth, LinearImage, NormalizedLuminanceMap, median_l1
from .model import CandidateSet, ModelBundle


@dataclass(frozen=True, eq=False)
class GMap:
    """``table[c, i]``: bin of the true chroma of observed bin ``c`` under candidate ``i``."""

    table: np.ndarray

    @property
    def by_candidate(self) -> np.ndarray:
        # Cached (M, 2^14) contiguous copy for the kernels.
        cached = self.__dict__.get("_by_candidate")
        if cached is None:
            cached = np.ascontiguousarray(self.table.T, dtype=np.int32)
            object.__setattr__(self, "_by_candidate", cached)
        return cached

    @property
    def M(self) -> int:
        return self.table.shape[1]


def build_gmap(candidates: CandidateSet) -> GMap:
    chromas = candidates.chromas
    if np.any(chromas <= 0):
        raise DegenerateIlluminant("candidate with a non-positive channel")
    centers = bin_centers(CHROMA_RES)
    table = np.empty((N_CHROMA_BINS, candidates.M), dtype=np.int32)
    for i, m in enumerate(chromas):
        x = centers / m
        x /= np.sqrt(np.sum(x * x, axis=1, keepdims=True))
        table[:, i] = quantize_chroma_flat(x, CHROMA_RES)
    return GMap(table)


@dataclass(frozen=True, eq=False)
class PixelHistogram:
    """Occupied (chroma bin, luminance bin) cells, sorted by ``y * 2^14 + c``."""

    chroma: np.ndarray
    lum: np.ndarray
    counts: np.ndarray
    N: int

    @property
    def n_cells(self) -> int:
        return len(self.counts)


def pixel_cells(img: LinearImage, lum: NormalizedLuminanceMap | None = None):
    """Observed (chroma bin, luminance bin) per pixel, flat; -1 where unusable."""
    median = median_l1(img) if lum is None else lum.median_l1
    rgb = img.pixels.reshape(-1, 3)
    valid = img.valid_mask.reshape(-1).view(np.uint8)
    return _kernels.bin_pixels(rgb, valid, median)


def histogram_cells(chroma: np.ndarray, ybin: np.ndarray) -> PixelHistogram:
    ok = chroma >= 0
    flat = ybin[ok].astype(np.int64) * N_CHROMA_BINS + chroma[ok]
    if flat.size == 0:
        raise EmptyImage("no valid pixels to histogram")
    if flat.size > N_LUM_BINS * N_CHROMA_BINS // 4:
        full = np.bincount(flat, minlength=N_LUM_BINS * N_CHROMA_BINS)
        cells = np.flatnonzero(full)
        counts = full[cells]
    else:
        cells, counts = np.unique(flat, return_counts=True)
    y, c = np.divmod(cells, N_CHROMA_BINS)
    return PixelHistogram(c.astype(np.int32), y.astype(np.int32),
                          counts.astype(np.float64), int(flat.size))


def histogram_pixels(img: LinearImage, lum: NormalizedLuminanceMap | None = None) -> PixelHistogram:
    return histogram_cells(*pixel_cells(img, lum))


def mean_table_scores(hist: PixelHistogram, table: np.ndarray, gmap: GMap) -> np.ndarray:
    """(1/N) * sum over pixels of table[y(n), gmap[c(n), i]], for every candidate."""
    if hist.N == 0:
        raise EmptyImage("empty histogram")
    sums = _kernels.score_cells(hist.chroma, hist.lum, hist.counts, gmap.by_candidate, table)
    return sums / hist.N


def score_candidates(hist: PixelHistogram, bundle: ModelBundle, gmap: GMap) -> np.ndarray:
    s = mean_table_scores(hist, bundle.table, gmap)
    return bundle.alpha * s + bundle.beta * bundle.candidates.priors


def posterior(scores) -> np.ndarray:
    scores = np.asarray(scores, dtype=np.float64)
    z = np.exp(scores - scores.max(axis=-1, keepdims=True))
    return z / z.sum(axis=-1, keepdims=True)


def estimate_illuminant(p, candidates: CandidateSet | np.ndarray) -> np.ndarray:
    chromas = candidates.chromas if isinstance(candidates, CandidateSet) else np.asarray(candidates)
    v = np.asarray(p) @ chromas
    norm = np.sqrt(np.sum(v * v, axis=-1, keepdims=True))
    assert np.all(norm > 0), "posterior-weighted candidate sum vanished"
    return v / norm


@dataclass
class EstimationResult:
    scores: np.ndarray
    posterior: np.ndarray
    estimate: np.ndarray
    error_deg: float | None = None
    per_pixel_error: np.ndarray | None = None
    per_pixel_variance: np.ndarray | None = None


def estimate(img: LinearImage, bundle: ModelBundle, gmap: GMap,
             gt: GroundTruth | None = None) -> EstimationResult:
    hist = histogram_pixels(img)
    scores = score_candidates(hist, bundle, gmap)
    p = posterior(scores)
    m = estimate_illuminant(p, bundle.candidates)
    err = angular_error(m, gt.illuminant) if gt is not None else None
    return EstimationResult(scores, p, m, err)


def per_pixel_maps(img: LinearImage, lum: NormalizedLuminanceMap | None, bundle: ModelBundle,
                   gmap: GMap, gt: GroundTruth | None = None, include_prior: bool = True,
                   chunk: int = 8192):
    """Single-pixel estimate error and score variance rasters (NaN where invalid).

    The error raster is None when no ground truth is given.
    """
    chroma, ybin = pixel_cells(img, lum)
    ok = chroma >= 0
    if not ok.any():
        raise EmptyImage("no valid pixels")
    cell = ybin.astype(np.int64) * N_CHROMA_BINS + chroma
    cells, inverse = np.unique(cell[ok], return_inverse=True)
    cy, cc = np.divmod(cells, N_CHROMA_BINS)
    cy, cc = cy.astype(np.int32), cc.astype(np.int32)
    prior = bundle.beta * bundle.candidates.priors if include_prior else 0.0
    var = np.empty(len(cells))
    err = np.empty(len(cells)) if gt is not None else None
    for lo in range(0, len(cells), chunk):
        sl = slice(lo, lo + chunk)
        scores = bundle.alpha * _kernels.cell_scores(cc[sl], cy[sl], gmap.by_candidate, bundle.table)
        scores = scores + prior
        var[sl] = scores.var(axis=1)
        if err is not None:
            m = estimate_illuminant(posterior(scores), bundle.candidates)
            err[sl] = angular_error(m, gt.illuminant)
    shape = img.valid_mask.shape
    var_map = np.full(cell.shape, np.nan)
    var_map[ok] = var[inverse]
    err_map = None
    if err is not None:
        err_map = np.full(cell.shape, np.nan)
        err_map[ok] = err[inverse]
        err_map = err_map.reshape(shape)
    return err_map, var_map.reshape(shape)


# -- output files -----------------------------------------------------------------

def write_diagnostic_png(path, raster: np.ndarray) -> tuple[float, float]:
    """Write a raster as 16-bit grayscale PNG; returns the (min, max) decode range.

    Code 0 marks NaN pixels; finite values map linearly onto 1..65535.
    A ``<stem>_range.csv`` with ``min,max`` is written alongside.
    """
    path = Path(path)
    finite = np.isfinite(raster)
    lo = float(raster[finite].min()) if finite.any() else 0.0
    hi = float(raster[finite].max()) if finite.any() else 0.0
    span = hi - lo if hi > lo else 1.0
    out = np.zeros(raster.shape, dtype=np.uint16)
    out[finite] = 1 + np.round((raster[finite] - lo) / span * 65534).astype(np.uint16)
    cv2.imwrite(str(path), out)
    with open(path.with_name(path.stem + "_range.csv"), "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["min", "max"])
        w.writerow([repr(lo), repr(hi)])
    return lo, hi


def read_diagnostic_png(path) -> np.ndarray:
    path = Path(path)
    codes = cv2.imread(str(path), cv2.IMREAD_UNCHANGED)
    with open(path.with_name(path.stem + "_range.csv"), newline="") as f:
        row = list(csv.DictReader(f))[0]
    lo, hi = float(row["min"]), float(row["max"])
    span = hi - lo if hi > lo else 1.0
    out = lo + (codes.astype(np.float64) - 1) / 65534 * span
    out[codes == 0] = np.nan
    return out


ESTIMATE_FIELDS = ["filename", "r", "g", "b", "angular_error_deg"]


def write_estimates(path, rows) -> None:
    """``rows``: iterable of (filename, chromaticity, error or None)."""
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(ESTIMATE_FIELDS)
        for name, m, err in rows:
            w.writerow([name, *(repr(float(v)) for v in m), "" if err is None else repr(float(err))])


def read_estimates(path) -> dict[str, np.ndarray]:
    with open(path, newline="") as f:
        return {
            r["filename"]: np.array([float(r["r"]), float(r["g"]), float(r["b"])])
            for r in csv.DictReader(f)
        }
