"""Candidate illuminants, the chromaticity-luminance belief table, and model files.

The belief table is stored luminance-major: ``values[y, c]`` for luminance
bin ``y`` (20 bins) and flat chromaticity bin ``c`` (128 x 128 grid).
"""
from __future__ import annotations

import json
import os
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import _kernels
from .colorspace import (
    CHROMA_RES,
    ILLUM_RES,
    N_CHROMA_BINS,
    N_LUM_BINS,
    bin_center_flat,
    quantize_chroma_flat,
)
from .errors import (
    BadMagic,
    ChecksumMismatch,
    DegenerateIlluminant,
    EmptyTrainingSet,
    IoFailure,
    VersionMismatch,
)
from .imaging import GroundTruth, LinearImage, median_l1

MAGIC = b"CHCC"
FORMAT_VERSION = 1
PSEUDO_COUNT = 1.0


@dataclass(frozen=True, eq=False)
class CandidateSet:
    """Quantized training illuminants (bin centers at R=64) with log-priors."""

    chromas: np.ndarray
    priors: np.ndarray

    def __post_init__(self):
        chromas = np.array(self.chromas, dtype=np.float64).reshape(-1, 3)
        priors = np.array(self.priors, dtype=np.float64).reshape(-1)
        if len(chromas) != len(priors):
            raise ValueError("chromas and priors differ in length")
        chromas.flags.writeable = False
        priors.flags.writeable = False
        object.__setattr__(self, "chromas", chromas)
        object.__setattr__(self, "priors", priors)

    @property
    def M(self) -> int:
        return len(self.priors)

    @property
    def bins(self) -> np.ndarray:
        return quantize_chroma_flat(self.chromas, ILLUM_RES)

    def __eq__(self, other):
        return (isinstance(other, CandidateSet)
                and np.array_equal(self.chromas, other.chromas)
                and np.array_equal(self.priors, other.priors))


def build_candidate_set(train_illums) -> CandidateSet:
    illums = np.asarray(train_illums, dtype=np.float64).reshape(-1, 3)
    if len(illums) == 0:
        raise EmptyTrainingSet("no training illuminants")
    bins, counts = np.unique(quantize_chroma_flat(illums, ILLUM_RES), return_counts=True)
    priors = np.log(counts / counts.sum())
    return CandidateSet(bin_center_flat(bins, ILLUM_RES), priors)


@dataclass(eq=False)
class ModelBundle:
    table: np.ndarray
    candidates: CandidateSet
    alpha: float = 1.0
    beta: float = 1.0
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        self.table = np.ascontiguousarray(self.table, dtype=np.float64)
        if self.table.shape != (N_LUM_BINS, N_CHROMA_BINS):
            raise ValueError(f"table shape {self.table.shape} != {(N_LUM_BINS, N_CHROMA_BINS)}")
        if not self.alpha > 0 or not self.beta >= 0:
            raise ValueError(f"need alpha > 0 and beta >= 0, got {self.alpha}, {self.beta}")

    def __eq__(self, other):
        return (isinstance(other, ModelBundle)
                and np.array_equal(self.table, other.table)
                and self.candidates == other.candidates
                and self.alpha == other.alpha
                and self.beta == other.beta
                and self.provenance == other.provenance)

    def with_params(self, alpha=None, beta=None, **provenance) -> "ModelBundle":
        return ModelBundle(
            self.table,
            self.candidates,
            self.alpha if alpha is None else alpha,
            self.beta if beta is None else beta,
            {**self.provenance, **provenance},
        )

    def folded(self) -> "ModelBundle":
        """Multiply alpha into the table and reset alpha to 1."""
        return ModelBundle(self.table * self.alpha, self.candidates, 1.0, self.beta,
                           dict(self.provenance))


def true_chroma_cells(img: LinearImage, gt: GroundTruth) -> tuple[np.ndarray, np.ndarray]:
    """Flat (chroma bin, luminance bin) per pixel of the illuminant-corrected image.

    Invalid or zero pixels get -1 in both outputs.
    """
    m = np.asarray(gt.illuminant, dtype=np.float64)
    if np.any(m <= 0):
        raise DegenerateIlluminant(f"ground truth {m} has a non-positive channel")
    median = median_l1(img)
    valid = img.valid_mask.reshape(-1).view(np.uint8)
    rgb = img.pixels.reshape(-1, 3)
    chroma, _ = _kernels.bin_pixels(np.ascontiguousarray(rgb / m), valid, 1.0)
    _, ybin = _kernels.bin_pixels(rgb, valid, median)
    return chroma, ybin


def count_cells(chroma: np.ndarray, ybin: np.ndarray) -> np.ndarray:
    ok = chroma >= 0
    flat = ybin[ok].astype(np.int64) * N_CHROMA_BINS + chroma[ok]
    counts = np.bincount(flat, minlength=N_LUM_BINS * N_CHROMA_BINS)
    return counts.reshape(N_LUM_BINS, N_CHROMA_BINS)


def table_from_counts(counts: np.ndarray, pseudo_count: float = PSEUDO_COUNT) -> np.ndarray:
    smoothed = counts.astype(np.float64) + pseudo_count
    return np.log(smoothed / smoothed.sum(axis=1, keepdims=True))


def train_empirical(dataset, pseudo_count: float = PSEUDO_COUNT) -> np.ndarray:
    """Log of add-one smoothed, per-luminance-bin normalized true-chroma counts.

    ``dataset`` is an iterable of ``(LinearImage, GroundTruth)`` pairs and is
    consumed once, so generators that load images lazily are fine.
    """
    counts = np.zeros((N_LUM_BINS, N_CHROMA_BINS), dtype=np.int64)
    for img, gt in dataset:
        counts += count_cells(*true_chroma_cells(img, gt))
    return table_from_counts(counts, pseudo_count)


# -- model file ----------------------------------------------------------------

_HEADER = struct.Struct("<4sIIIIdd")


def to_bytes(bundle: ModelBundle) -> bytes:
    cand = bundle.candidates
    prov = json.dumps(bundle.provenance, sort_keys=True).encode()
    parts = [
        _HEADER.pack(MAGIC, FORMAT_VERSION, CHROMA_RES, N_LUM_BINS, cand.M,
                     float(bundle.alpha), float(bundle.beta)),
        cand.chromas.astype("<f8").tobytes(),
        cand.priors.astype("<f8").tobytes(),
        bundle.table.astype("<f8").tobytes(),
        struct.pack("<I", len(prov)),
        prov,
    ]
    body = b"".join(parts)
    return body + struct.pack("<Q", _kernels.crc64(np.frombuffer(body, dtype=np.uint8)))


def from_bytes(data: bytes) -> ModelBundle:
    if len(data) < 4 or data[:4] != MAGIC:
        raise BadMagic("not a model file")
    if len(data) < _HEADER.size + 8:
        raise ChecksumMismatch("model file truncated")
    _, version, res, n_lum, m, alpha, beta = _HEADER.unpack_from(data)
    if version != FORMAT_VERSION:
        raise VersionMismatch(f"model format {version}, expected {FORMAT_VERSION}")
    body, stored = data[:-8], struct.unpack("<Q", data[-8:])[0]
    if _kernels.crc64(np.frombuffer(body, dtype=np.uint8)) != stored:
        raise ChecksumMismatch("model file checksum mismatch")
    if res != CHROMA_RES or n_lum != N_LUM_BINS:
        raise VersionMismatch(f"unsupported grid {res}x{res} x {n_lum}")
    off = _HEADER.size
    chromas = np.frombuffer(body, "<f8", m * 3, off).reshape(m, 3)
    off += m * 24
    priors = np.frombuffer(body, "<f8", m, off)
    off += m * 8
    n_tab = N_LUM_BINS * N_CHROMA_BINS
    table = np.frombuffer(body, "<f8", n_tab, off).reshape(N_LUM_BINS, N_CHROMA_BINS)
    off += n_tab * 8
    (plen,) = struct.unpack_from("<I", body, off)
    prov = json.loads(body[off + 4:off + 4 + plen].decode()) if plen else {}
    return ModelBundle(table.astype(np.float64), CandidateSet(chromas, priors), alpha, beta, prov)


def serialize(bundle: ModelBundle, path) -> None:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    try:
        tmp.write_bytes(to_bytes(bundle))
        os.replace(tmp, path)
    except OSError as exc:
        raise IoFailure(f"cannot write {path}: {exc}") from exc


def deserialize(path) -> ModelBundle:
    try:
        data = Path(path).read_bytes()
    except OSError as exc:
        raise IoFailure(f"cannot read {path}: {exc}") from exc
    return from_bytes(data)
