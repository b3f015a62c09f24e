"""Cross-validation protocol, parameter grid search and error statistics."""
from __future__ import annotations

import csv
import hashlib
import json
import logging
from collections import OrderedDict
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .colorspace import N_CHROMA_BINS, N_LUM_BINS, angular_error
from .errors import BadK, LengthMismatch
from .imaging import Manifest
from .inference import (
    build_gmap,
    estimate_illuminant,
    histogram_pixels,
    mean_table_scores,
    posterior,
    write_estimates,
)
from .model import (
    FORMAT_VERSION,
    ModelBundle,
    build_candidate_set,
    count_cells,
    serialize,
    table_from_counts,
    true_chroma_cells,
)
from .train import Instance, TrainConfig, augment_dataset, sgd_train

log = logging.getLogger(__name__)

ALPHA_GRID = tuple(2.0 ** k for k in range(-4, 7))
BETA_GRID = (0.0, 0.25, 0.5, 1.0, 2.0, 4.0)


@dataclass
class FoldSpec:
    k: int
    assignments: dict
    boundaries: dict

    def test_names(self, fold: int) -> list[str]:
        return sorted(n for n, f in self.assignments.items() if f == fold)

    def train_names(self, fold: int) -> list[str]:
        return sorted(n for n, f in self.assignments.items() if f != fold)

    def save(self, path, holdout: int | None = None) -> None:
        data = {"k": self.k, "assignments": self.assignments, "boundaries": self.boundaries}
        if holdout is not None:
            data["holdout"] = holdout
        Path(path).write_text(json.dumps(data, indent=2, sort_keys=True) + "\n")

    @classmethod
    def load(cls, path) -> tuple["FoldSpec", int | None]:
        data = json.loads(Path(path).read_text())
        return cls(data["k"], data["assignments"], data.get("boundaries", {})), data.get("holdout")


def make_folds(entries, k: int) -> FoldSpec:
    """Per camera, sort by filename and cut into k contiguous near-equal runs."""
    by_cam: dict[str, list[str]] = {}
    for e in entries:
        by_cam.setdefault(e.camera_id, []).append(e.filename)
    if not by_cam:
        raise BadK("empty manifest")
    smallest = min(len(v) for v in by_cam.values())
    if k < 2 or k > smallest:
        raise BadK(f"k={k} must be in [2, {smallest}]")
    assignments, boundaries = {}, {}
    for cam in sorted(by_cam):
        names = sorted(by_cam[cam])
        runs = np.array_split(np.arange(len(names)), k)
        boundaries[cam] = [int(r[0]) for r in runs] + [len(names)]
        for f, run in enumerate(runs):
            for j in run:
                assignments[names[j]] = f
    return FoldSpec(k, assignments, boundaries)


# -- statistics -------------------------------------------------------------------

def _interp_quantile(sorted_errs: np.ndarray, q: float) -> float:
    n = len(sorted_errs)
    h = (n - 1) * q
    lo = int(np.floor(h))
    hi = min(lo + 1, n - 1)
    return float(sorted_errs[lo] + (h - lo) * (sorted_errs[hi] - sorted_errs[lo]))


@dataclass
class ErrorReport:
    errors: np.ndarray
    mean: float
    median: float
    trimean: float
    p25: float
    p75: float
    p90: float

    STATS = ("mean", "median", "trimean", "p25", "p75", "p90")

    @classmethod
    def from_errors(cls, errors) -> "ErrorReport":
        errs = np.asarray(errors, dtype=np.float64)
        if errs.size == 0:
            raise LengthMismatch("no errors to summarize")
        s = np.sort(errs)
        median = float(s[(len(s) - 1) // 2])
        p25, p75, p90 = (_interp_quantile(s, q) for q in (0.25, 0.75, 0.90))
        return cls(errs, float(errs.mean()), median, (p25 + 2 * median + p75) / 4, p25, p75, p90)

    def as_row(self) -> dict:
        return {"n": len(self.errors), **{k: getattr(self, k) for k in self.STATS}}

    def write_csv(self, path) -> None:
        row = self.as_row()
        with open(path, "w", newline="") as f:
            w = csv.writer(f, lineterminator="\n")
            w.writerow(list(row))
            w.writerow([row["n"]] + [repr(row[k]) for k in self.STATS])

    def pretty(self) -> str:
        head = f"{'n':>6} " + " ".join(f"{k:>8}" for k in self.STATS)
        vals = f"{len(self.errors):>6} " + " ".join(f"{getattr(self, k):8.3f}" for k in self.STATS)
        return head + "\n" + vals


def evaluate(estimates, truths) -> ErrorReport:
    est = np.asarray(estimates, dtype=np.float64).reshape(-1, 3)
    gts = [getattr(t, "illuminant", t) for t in truths]
    gt = np.asarray(gts, dtype=np.float64).reshape(-1, 3)
    if len(est) != len(gt):
        raise LengthMismatch(f"{len(est)} estimates vs {len(gt)} ground truths")
    return ErrorReport.from_errors(angular_error(est, gt))


# -- parameter search --------------------------------------------------------------

def grid_errors(mean_scores: np.ndarray, truths: np.ndarray, candidates, alpha: float,
                beta: float) -> np.ndarray:
    """Per-image error for the given (alpha, beta); ``mean_scores`` is (n_images, M)."""
    l = alpha * mean_scores + beta * candidates.priors
    m = estimate_illuminant(posterior(l), candidates)
    return angular_error(m, truths)


def grid_search_ab(mean_scores, truths, candidates, alphas=ALPHA_GRID, betas=BETA_GRID):
    """Return (alpha, beta, mean error) minimizing mean training error.

    Ties go to the smaller alpha, then the smaller beta.
    """
    mean_scores = np.atleast_2d(np.asarray(mean_scores, dtype=np.float64))
    truths = np.asarray(truths, dtype=np.float64).reshape(-1, 3)
    best = None
    for a in sorted(alphas):
        for b in sorted(betas):
            err = float(np.mean(grid_errors(mean_scores, truths, candidates, a, b)))
            if best is None or err < best[2]:
                best = (a, b, err)
    return best


# -- cross-validation ---------------------------------------------------------------

class _Loader:
    """Loads manifest images with a small LRU cache."""

    def __init__(self, manifest: Manifest, cache_size: int = 32):
        self.manifest = manifest
        self.cache: OrderedDict = OrderedDict()
        self.cache_size = cache_size
        self.entries = manifest.by_name()

    def __call__(self, name: str):
        if name in self.cache:
            self.cache.move_to_end(name)
            return self.cache[name]
        pair = self.manifest.read(self.entries[name])
        if self.cache_size:
            self.cache[name] = pair
            while len(self.cache) > self.cache_size:
                self.cache.popitem(last=False)
        return pair

    def source(self, name: str):
        return lambda: self(name)


def train_fold_empirical(loader: _Loader, names, alphas=ALPHA_GRID, betas=BETA_GRID,
                         grid_search=True, alpha=1.0, beta=1.0, provenance=None) -> ModelBundle:
    """Candidates, empirical table and grid-searched (alpha, beta) from ``names``."""
    counts = np.zeros((N_LUM_BINS, N_CHROMA_BINS), dtype=np.int64)
    hists, truths = [], []
    for name in names:
        img, gt = loader(name)
        counts += count_cells(*true_chroma_cells(img, gt))
        hists.append(histogram_pixels(img))
        truths.append(gt.illuminant)
    table = table_from_counts(counts)
    candidates = build_candidate_set(truths)
    prov = {"mode": "empirical", **(provenance or {})}
    if grid_search:
        gmap = build_gmap(candidates)
        scores = np.array([mean_table_scores(h, table, gmap) for h in hists])
        alpha, beta, err = grid_search_ab(scores, np.array(truths), candidates, alphas, betas)
        log.info("grid search: alpha=%g beta=%g train mean %.3f", alpha, beta, err)
    return ModelBundle(table, candidates, alpha, beta, prov)


def train_fold_e2e(loader: _Loader, names, init: ModelBundle, cfg: TrainConfig, seed,
                   log_path=None) -> ModelBundle:
    rng = np.random.default_rng(seed)
    instances = [Instance(loader.source(n), None, n) for n in names]
    illums = [loader(n)[1].illuminant for n in names]
    train_aug, val = augment_dataset(instances, cfg, rng, illums)
    return sgd_train(init.folded(), train_aug, val, cfg, log_path=log_path)


def _digest(obj) -> str:
    return hashlib.sha256(json.dumps(obj, sort_keys=True).encode()).hexdigest()


def _file_digest(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def run_crossval(manifest: Manifest, k: int, mode: str = "empirical", cfg: TrainConfig | None = None,
                 out_dir=None, seed: int = 0, resume: bool = False, alphas=ALPHA_GRID,
                 betas=BETA_GRID, cache_size: int = 32) -> ErrorReport:
    """k-fold cross-validation; pools every test-fold error into one report.

    Per fold, ``out_dir/fold_XX`` receives the model(s), test estimates, the
    training log and ``training_set.json`` listing the images each artifact
    was trained on.
    """
    if mode not in ("empirical", "e2e"):
        raise ValueError(f"unknown mode {mode!r}")
    cfg = cfg or TrainConfig()
    folds = make_folds(manifest.entries, k)
    loader = _Loader(manifest, cache_size)
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        folds.save(out / "folds.json")
    pooled: dict[str, tuple] = {}
    for f in range(k):
        train_names, test_names = folds.train_names(f), folds.test_names(f)
        assert not set(train_names) & set(test_names)
        fold_dir = out / f"fold_{f:02d}" if out is not None else None
        key = _digest({
            "format": FORMAT_VERSION, "mode": mode, "k": k, "fold": f, "seed": seed,
            "cfg": asdict(cfg), "alphas": list(alphas), "betas": list(betas),
            "train": [[n, manifest.truth[n].illuminant.tolist(), asdict(loader.entries[n])]
                      for n in train_names],
            "test": test_names,
        })
        cached = _load_fold(fold_dir, key, mode) if (resume and fold_dir is not None) else None
        if cached is not None:
            log.info("fold %d: reusing cached artifacts", f)
            pooled.update(cached)
            continue
        prov = {"fold": f, "k": k, "train_hash": _digest(train_names)}
        bundle = train_fold_empirical(loader, train_names, alphas, betas, provenance=prov)
        if fold_dir is not None:
            fold_dir.mkdir(parents=True, exist_ok=True)
            serialize(bundle, fold_dir / "model_empirical.chcc")
        if mode == "e2e":
            seed_seq = np.random.SeedSequence([seed, f])
            cfg_f = TrainConfig(**{**asdict(cfg), "rng_seed": int(seed_seq.generate_state(1)[0])})
            bundle = train_fold_e2e(loader, train_names, bundle, cfg_f, [seed, f, 1],
                                    fold_dir / "train_log.csv" if fold_dir is not None else None)
            if fold_dir is not None:
                serialize(bundle, fold_dir / "model_e2e.chcc")
        results = _estimate_names(loader, bundle, test_names)
        pooled.update(results)
        if fold_dir is not None:
            write_estimates(fold_dir / "estimates.csv",
                            [(n, m, e) for n, (m, e) in sorted(results.items())])
            (fold_dir / "training_set.json").write_text(json.dumps({
                "fold": f, "mode": mode, "train": train_names, "test": test_names,
                "train_hash": prov["train_hash"]}, indent=2) + "\n")
            (fold_dir / "key.txt").write_text(key + "\n" + _model_digests(fold_dir, mode))
    names = sorted(pooled)
    report = ErrorReport.from_errors([pooled[n][1] for n in names])
    if out is not None:
        write_estimates(out / "estimates.csv", [(n, *pooled[n]) for n in names])
        report.write_csv(out / "report.csv")
    return report


def _estimate_names(loader, bundle: ModelBundle, names) -> dict[str, tuple]:
    gmap = build_gmap(bundle.candidates)
    out = {}
    for n in names:
        img, gt = loader(n)
        l = bundle.alpha * mean_table_scores(histogram_pixels(img), bundle.table, gmap)
        l = l + bundle.beta * bundle.candidates.priors
        m = estimate_illuminant(posterior(l), bundle.candidates)
        out[n] = (m, angular_error(m, gt.illuminant))
    return out


def _model_files(fold_dir: Path, mode: str) -> list[Path]:
    names = ["model_empirical.chcc"] + (["model_e2e.chcc"] if mode == "e2e" else [])
    return [fold_dir / n for n in names]


def _model_digests(fold_dir: Path, mode: str) -> str:
    return "".join(f"{p.name} {_file_digest(p)}\n" for p in _model_files(fold_dir, mode))


def _load_fold(fold_dir: Path, key: str, mode: str):
    keyfile = fold_dir / "key.txt"
    est = fold_dir / "estimates.csv"
    if not (keyfile.exists() and est.exists()):
        return None
    if not all(p.exists() for p in _model_files(fold_dir, mode)):
        return None
    stored = keyfile.read_text()
    if stored != key + "\n" + _model_digests(fold_dir, mode):
        return None
    out = {}
    with open(est, newline="") as f:
        for r in csv.DictReader(f):
            out[r["filename"]] = (np.array([float(r["r"]), float(r["g"]), float(r["b"])]),
                                  float(r["angular_error_deg"]))
    return out

