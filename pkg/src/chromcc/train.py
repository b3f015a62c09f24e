"""End-to-end refinement of the belief table by SGD with momentum.

The cost for one image is the posterior-expected angular error of the
candidate illuminants. One image is used per step, with its pixels
subsampled in 16x16 patches.
"""
from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import _kernels
from .colorspace import N_CHROMA_BINS, N_LUM_BINS, angular_error
from .errors import DivergenceDetected, EmptyImage, InsufficientIlluminants
from .imaging import GroundTruth, LinearImage, median_l1, relight
from .inference import (
    GMap,
    PixelHistogram,
    build_gmap,
    estimate_illuminant,
    histogram_cells,
    histogram_pixels,
    mean_table_scores,
    posterior,
)
from .model import ModelBundle, serialize

log = logging.getLogger(__name__)

DEFAULT_SCHEDULE = ((20, 100.0), (10, 10.0))


@dataclass
class TrainConfig:
    momentum: float = 0.9
    schedule: tuple = DEFAULT_SCHEDULE
    patch_size: int = 16
    keep_fraction: float = 1 / 128
    n_relight_train: int = 6
    n_relight_val: int = 1
    rng_seed: int = 0
    cost_units: str = "deg"
    divergence_factor: float = 4.0

    def __post_init__(self):
        self.schedule = tuple((int(n), float(r)) for n, r in self.schedule)
        if not 0 <= self.momentum < 1:
            raise ValueError("momentum must be in [0, 1)")
        if any(n < 0 or r < 0 for n, r in self.schedule):
            raise ValueError("schedule entries must be non-negative")
        if self.cost_units not in ("deg", "rad"):
            raise ValueError("cost_units must be 'deg' or 'rad'")


def parse_schedule(text: str) -> tuple:
    """Parse ``"20x100,10x10"`` into ((20, 100.0), (10, 10.0))."""
    out = []
    for part in text.split(","):
        n, _, r = part.strip().partition("x")
        if not r:
            raise ValueError(f"bad schedule entry {part!r}; expected EPOCHSxRATE")
        out.append((int(n), float(r)))
    return tuple(out)


@dataclass(eq=False)
class Instance:
    """A training image, optionally relit to ``target``.

    ``source`` is a ``(LinearImage, GroundTruth)`` pair or a zero-argument
    callable returning one (for datasets too large to keep in memory).
    """

    source: object
    target: np.ndarray | None = None
    name: str = ""
    _median: float | None = field(default=None, repr=False)
    _hist: PixelHistogram | None = field(default=None, repr=False)

    def base(self) -> tuple[LinearImage, GroundTruth]:
        return self.source() if callable(self.source) else self.source

    def channel_scale(self, gt: GroundTruth) -> np.ndarray:
        if self.target is None:
            return np.ones(3)
        return np.asarray(self.target) / np.asarray(gt.illuminant)

    def materialize(self) -> tuple[LinearImage, GroundTruth]:
        img, gt = self.base()
        if self.target is None:
            return img, gt
        return relight(img, gt, self.target)

    @property
    def truth(self) -> np.ndarray:
        if self.target is not None:
            return np.asarray(self.target)
        return np.asarray(self.base()[1].illuminant)

    def median(self) -> float:
        if self._median is None:
            self._median = median_l1(self.materialize()[0])
        return self._median

    def full_histogram(self) -> PixelHistogram:
        if self._hist is None:
            self._hist = histogram_pixels(self.materialize()[0])
        return self._hist


def augment_dataset(train, cfg: TrainConfig, rng: np.random.Generator, illuminants=None):
    """Original images plus relit copies for training, one more relit copy each for validation.

    Relight targets are drawn without replacement from the distinct
    training illuminants other than the image's own. Returns
    ``(train_instances, val_instances)``.
    """
    pairs = [p if isinstance(p, Instance) else Instance(p) for p in train]
    if illuminants is None:
        illuminants = [np.asarray(p.base()[1].illuminant) for p in pairs]
    pool = np.unique(np.asarray(illuminants, dtype=np.float64).reshape(-1, 3), axis=0)
    need = cfg.n_relight_train + cfg.n_relight_val
    train_aug, val = [], []
    for inst in pairs:
        own = np.asarray(inst.base()[1].illuminant)
        choices = pool[~np.all(pool == own, axis=1)]
        if len(choices) < need:
            raise InsufficientIlluminants(
                f"{len(choices)} distinct relight targets available, need {need}")
        picks = choices[rng.choice(len(choices), size=need, replace=False)]
        train_aug.append(Instance(inst.source, None, inst.name))
        for k, target in enumerate(picks):
            copy = Instance(inst.source, target, f"{inst.name}@relit{k}")
            (train_aug if k < cfg.n_relight_train else val).append(copy)
    return train_aug, val


def subsample_pixels(img: LinearImage, cfg: TrainConfig, rng: np.random.Generator) -> np.ndarray:
    """Flat indices of valid pixels inside randomly chosen aligned patches.

    ``ceil(n_valid * keep_fraction / patch_size**2)`` patches are drawn
    without replacement from those containing at least one valid pixel.
    """
    n_valid = img.n_valid
    if n_valid == 0:
        raise EmptyImage(f"{img.name or 'image'} has no valid pixels")
    ps = cfg.patch_size
    h, w = img.valid_mask.shape
    ph, pw = -(-h // ps), -(-w // ps)
    padded = np.zeros((ph * ps, pw * ps), dtype=bool)
    padded[:h, :w] = img.valid_mask
    per_patch = padded.reshape(ph, ps, pw, ps).sum(axis=(1, 3)).reshape(-1)
    usable = np.flatnonzero(per_patch)
    want = math.ceil(n_valid * cfg.keep_fraction / (ps * ps))
    chosen = np.sort(rng.choice(usable, size=min(want, len(usable)), replace=False))
    rows, cols = np.divmod(chosen, pw)
    keep = np.zeros((ph, pw), dtype=bool)
    keep[rows, cols] = True
    sel = np.repeat(np.repeat(keep, ps, axis=0), ps, axis=1)[:h, :w] & img.valid_mask
    return np.flatnonzero(sel)


def candidate_errors(bundle_or_chromas, truth, units: str = "deg") -> np.ndarray:
    chromas = getattr(getattr(bundle_or_chromas, "candidates", None), "chromas", bundle_or_chromas)
    e = angular_error(np.asarray(chromas), np.asarray(truth))
    return np.radians(e) if units == "rad" else e


def image_cost(hist: PixelHistogram, bundle: ModelBundle, gmap: GMap, gt, units: str = "deg"):
    """Expected angular error under the posterior. Returns (cost, p, scores)."""
    truth = gt.illuminant if isinstance(gt, GroundTruth) else gt
    l = bundle.alpha * mean_table_scores(hist, bundle.table, gmap) + bundle.beta * bundle.candidates.priors
    p = posterior(l)
    e = candidate_errors(bundle.candidates.chromas, truth, units)
    return float(p @ e), p, l


def score_gradient(p, e, cost) -> np.ndarray:
    p = np.asarray(p, dtype=np.float64)
    return p * (np.asarray(e, dtype=np.float64) - cost)


def table_gradient(hist: PixelHistogram, gmap: GMap, dl, N: int | None = None,
                   alpha: float = 1.0, out: np.ndarray | None = None) -> np.ndarray:
    """Dense (20, 2^14) gradient of the cost w.r.t. table cells.

    Only cells reached by some (pixel, candidate) pair are nonzero.
    """
    N = hist.N if N is None else N
    if out is None:
        out = np.zeros((N_LUM_BINS, N_CHROMA_BINS), dtype=np.float64)
    else:
        out.fill(0.0)
    coef = np.ascontiguousarray(alpha * np.asarray(dl, dtype=np.float64) / N)
    _kernels.scatter_gradient(hist.chroma, hist.lum, hist.counts, gmap.by_candidate, coef, out)
    return out


def subset_histogram(inst: Instance, cfg: TrainConfig, rng) -> PixelHistogram:
    img, gt = inst.base()
    idx = subsample_pixels(img, cfg, rng)
    rgb = np.ascontiguousarray(img.pixels.reshape(-1, 3)[idx] * inst.channel_scale(gt))
    chroma, ybin = _kernels.bin_pixels(rgb, np.ones(len(idx), dtype=np.uint8), inst.median())
    return histogram_cells(chroma, ybin)


def validation_errors(table: np.ndarray, bundle: ModelBundle, gmap: GMap, val_set) -> np.ndarray:
    errs = []
    prior = bundle.beta * bundle.candidates.priors
    for inst in val_set:
        l = bundle.alpha * mean_table_scores(inst.full_histogram(), table, gmap) + prior
        m = estimate_illuminant(posterior(l), bundle.candidates)
        errs.append(angular_error(m, inst.truth))
    return np.asarray(errs)


LOG_FIELDS = ["epoch", "lr", "train_cost_mean", "val_mean_deg", "val_median_deg", "snapshot_path"]


def sgd_train(init: ModelBundle, train_aug, val_set, cfg: TrainConfig, gmap: GMap | None = None,
              log_path=None, snapshot_dir=None, history: list | None = None) -> ModelBundle:
    """Momentum SGD over single images; returns the epoch with lowest validation mean.

    The initial table counts as epoch 0. With an empty ``val_set`` the final
    table is returned. Raises DivergenceDetected when the
    validation mean exceeds ``divergence_factor`` times its initial value.
    """
    bundle = init if init.alpha == 1.0 else init.folded()
    gmap = build_gmap(bundle.candidates) if gmap is None else gmap
    rng = np.random.default_rng(cfg.rng_seed)
    table = bundle.table.copy()
    velocity = np.zeros_like(table)
    grad = np.zeros_like(table)
    working = ModelBundle(table, bundle.candidates, 1.0, bundle.beta)
    history = [] if history is None else history

    def record(epoch, lr, costs, tab):
        errs = validation_errors(tab, bundle, gmap, val_set) if len(val_set) else np.array([np.nan])
        snap = ""
        if snapshot_dir is not None:
            snap = str(Path(snapshot_dir) / f"epoch_{epoch:03d}.chcc")
            serialize(ModelBundle(tab, bundle.candidates, 1.0, bundle.beta,
                                  {**bundle.provenance, "mode": "e2e", "epoch": epoch}), snap)
        row = {
            "epoch": epoch,
            "lr": lr,
            "train_cost_mean": float(np.mean(costs)) if costs else float("nan"),
            "val_mean_deg": float(np.mean(errs)),
            "val_median_deg": float(np.median(errs)),
            "snapshot_path": snap,
        }
        history.append(row)
        if log_path is not None:
            _write_log(log_path, history)
        return row["val_mean_deg"]

    best_val = initial = record(0, 0.0, [], table)
    best_table, best_epoch = table.copy(), 0
    epoch = 0
    for n_epochs, lr in cfg.schedule:
        for _ in range(n_epochs):
            epoch += 1
            costs = []
            for t in rng.permutation(len(train_aug)):
                inst = train_aug[t]
                hist = subset_histogram(inst, cfg, rng)
                cost, p, _ = image_cost(hist, working, gmap, inst.truth, cfg.cost_units)
                e = candidate_errors(bundle.candidates.chromas, inst.truth, cfg.cost_units)
                dl = score_gradient(p, e, cost)
                table_gradient(hist, gmap, dl, hist.N, 1.0, out=grad)
                velocity *= cfg.momentum
                velocity += lr * grad
                table -= velocity
                costs.append(cost)
            val_mean = record(epoch, lr, costs, table)
            log.info("epoch %d lr %g train %.4f val %.4f", epoch, lr, np.mean(costs), val_mean)
            if np.isfinite(initial) and not val_mean <= cfg.divergence_factor * initial:
                raise DivergenceDetected(
                    f"validation mean {val_mean:.3f} exceeds {cfg.divergence_factor}x "
                    f"initial {initial:.3f} at epoch {epoch}", history)
            if val_mean < best_val or not len(val_set):
                best_val, best_table, best_epoch = val_mean, table.copy(), epoch
    prov = {**bundle.provenance, "mode": "e2e", "best_epoch": best_epoch}
    return ModelBundle(best_table, bundle.candidates, 1.0, bundle.beta, prov)


def _write_log(path, rows) -> None:
    with open(path, "w", newline="") as f:
        w = csv.DictWriter(f, fieldnames=LOG_FIELDS, lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in r.items()})
