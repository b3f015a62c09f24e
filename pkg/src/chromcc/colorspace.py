"""Chromaticity algebra on the non-negative octant of the unit sphere.

Chromaticities are plain float64 arrays with a trailing axis of length 3
(r, g, b). Every function here broadcasts over leading axes.

Quantization uses the (u, theta) parametrization ``u = g`` and
``theta = atan2(b, r)``, each split into ``R`` uniform bins. A bin's flat
index is ``u_idx * R + theta_idx``.
"""
from __future__ import annotations

from typing import NamedTuple

import numpy as np

from .errors import ZeroVector

CHROMA_RES = 128
ILLUM_RES = 64
N_CHROMA_BINS = CHROMA_RES * CHROMA_RES
N_LUM_BINS = 20
LUM_CLIP = 4.0
LUM_STEP = 0.2


class ChromaBin(NamedTuple):
    u_idx: int
    theta_idx: int
    resolution: int

    @property
    def flat(self) -> int:
        return self.u_idx * self.resolution + self.theta_idx

    @classmethod
    def from_flat(cls, flat: int, resolution: int) -> "ChromaBin":
        u, t = divmod(int(flat), resolution)
        return cls(u, t, resolution)


def chromaticity_of(v) -> np.ndarray:
    """L2-normalize RGB intensities.

    Raises ZeroVector if any input vector has zero norm.
    """
    v = np.asarray(v, dtype=np.float64)
    norm = np.sqrt(np.sum(v * v, axis=-1, keepdims=True))
    if np.any(norm == 0):
        raise ZeroVector("cannot take the chromaticity of a zero vector")
    return v / norm


def angular_error(a, b) -> np.ndarray | float:
    """Angle between two chromaticities in degrees.

    Evaluated as atan2(|a x b|, a . b), which agrees with the arccosine of
    the clamped dot product for unit inputs but keeps full precision for
    nearly parallel vectors.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    cross = np.linalg.norm(np.cross(a, b), axis=-1)
    dot = np.sum(a * b, axis=-1)
    out = np.degrees(np.arctan2(cross, dot))
    return float(out) if np.ndim(out) == 0 else out


def _uv_indices(chroma: np.ndarray, resolution: int) -> tuple[np.ndarray, np.ndarray]:
    u = chroma[..., 1]
    theta = np.arctan2(chroma[..., 2], chroma[..., 0])
    u_idx = np.minimum(np.floor(u * resolution), resolution - 1)
    # (theta * 2R) / pi keeps theta = pi/4 exactly on a bin edge.
    t_idx = np.minimum(np.floor(theta * (2 * resolution) / np.pi), resolution - 1)
    return u_idx.astype(np.int64), t_idx.astype(np.int64)


def quantize_chroma(chroma, resolution: int = CHROMA_RES) -> ChromaBin:
    u_idx, t_idx = _uv_indices(np.asarray(chroma, dtype=np.float64), resolution)
    return ChromaBin(int(u_idx), int(t_idx), resolution)


def quantize_chroma_flat(chroma, resolution: int = CHROMA_RES) -> np.ndarray:
    """Vectorized quantization returning flat bin indices (int64)."""
    u_idx, t_idx = _uv_indices(np.asarray(chroma, dtype=np.float64), resolution)
    return u_idx * resolution + t_idx


def bin_centers(resolution: int) -> np.ndarray:
    """Chromaticities at the (u, theta) midpoints of all bins, in flat order."""
    idx = np.arange(resolution * resolution)
    return bin_center_flat(idx, resolution)


def bin_center_flat(flat, resolution: int) -> np.ndarray:
    flat = np.asarray(flat, dtype=np.int64)
    u_idx, t_idx = np.divmod(flat, resolution)
    u_c = (u_idx + 0.5) / resolution
    theta_c = (t_idx + 0.5) * np.pi / (2 * resolution)
    rho = np.sqrt(1.0 - u_c * u_c)
    return np.stack([rho * np.cos(theta_c), u_c, rho * np.sin(theta_c)], axis=-1)


def bin_center(b: ChromaBin, resolution: int | None = None) -> np.ndarray:
    res = b.resolution if resolution is None else resolution
    return bin_center_flat(b.u_idx * res + b.theta_idx, res)


def quantize_luminance(y) -> np.ndarray | int:
    y = np.asarray(y, dtype=np.float64)
    idx = np.minimum(np.floor(np.minimum(y, LUM_CLIP) / LUM_STEP), N_LUM_BINS - 1)
    idx = idx.astype(np.int64)
    return int(idx) if idx.ndim == 0 else idx
