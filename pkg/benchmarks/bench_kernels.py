"""Compare the compiled and NumPy kernel backends.

    python3 benchmarks/bench_kernels.py --megapixels 9 --candidates 200

Kernel timings use both backends in-process. The end-to-end row runs
``estimate`` in a subprocess per backend, since the backend is fixed at import.
"""
import argparse
import json
import os
import subprocess
import sys
import time

import numpy as np

from chromcc import _pykernels
from chromcc.colorspace import CHROMA_RES, N_LUM_BINS

try:
    from chromcc import _ckernels
except ImportError:
    _ckernels = None

END_TO_END = """
import json, sys, time
import numpy as np
from chromcc import _kernels
from chromcc.colorspace import ILLUM_RES, bin_center_flat
from chromcc.imaging import LinearImage
from chromcc.inference import build_gmap, estimate
from chromcc.model import CandidateSet, ModelBundle, table_from_counts
h, w, m, reps = map(int, sys.argv[1:5])
rng = np.random.default_rng(0)
cands = CandidateSet(bin_center_flat(rng.choice(ILLUM_RES ** 2, m, replace=False), ILLUM_RES),
                     np.log(np.full(m, 1 / m)))
bundle = ModelBundle(table_from_counts(rng.poisson(0.5, (20, 128 * 128))), cands, 4.0, 1.0)
gmap = build_gmap(cands)
img = LinearImage(rng.uniform(0, 1, (h, w, 3)) ** 2, rng.uniform(size=(h, w)) > 0.02)
estimate(img, bundle, gmap)
best = float("inf")
for _ in range(reps):
    t0 = time.perf_counter()
    estimate(img, bundle, gmap)
    best = min(best, time.perf_counter() - t0)
print(json.dumps({"backend": _kernels.BACKEND, "seconds": best}))
"""


def best_of(fn, reps):
    fn()
    out = float("inf")
    for _ in range(reps):
        t0 = time.perf_counter()
        fn()
        out = min(out, time.perf_counter() - t0)
    return out


def kernel_cases(n_px, m, threads, rng):
    rgb = rng.uniform(0, 1, (n_px, 3)) ** 2
    valid = np.ones(n_px, np.uint8)
    k = 60_000
    cell_c = rng.integers(0, CHROMA_RES ** 2, k).astype(np.int32)
    cell_y = rng.integers(0, N_LUM_BINS, k).astype(np.int32)
    counts = rng.integers(1, 100, k).astype(np.float64)
    gmap_t = rng.integers(0, CHROMA_RES ** 2, (m, CHROMA_RES ** 2)).astype(np.int32)
    table = rng.standard_normal((N_LUM_BINS, CHROMA_RES ** 2))
    coef = rng.standard_normal(m)
    blob = rng.integers(0, 256, 8 * N_LUM_BINS * CHROMA_RES ** 2, dtype=np.uint8)

    def grad(impl):
        g = np.zeros_like(table)
        impl.scatter_gradient(cell_c, cell_y, counts, gmap_t, coef, g)

    return {
        f"bin_pixels ({n_px / 1e6:.1f} MP)": lambda impl: impl.bin_pixels(rgb, valid, 0.5, threads),
        f"l1_norms ({n_px / 1e6:.1f} MP)": lambda impl: impl.l1_norms(rgb, threads),
        f"score_cells ({k} cells, M={m})": lambda impl: impl.score_cells(cell_c, cell_y, counts, gmap_t,
                                                                        table, threads),
        f"scatter_gradient ({k} cells, M={m})": grad,
        f"crc64 ({blob.size / 1e6:.1f} MB)": lambda impl: impl.crc64(blob),
    }


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--megapixels", type=float, default=9.0)
    ap.add_argument("--candidates", type=int, default=200)
    ap.add_argument("--repeats", type=int, default=3)
    ap.add_argument("--threads", type=int, default=os.cpu_count() or 1)
    ap.add_argument("--skip-crc", action="store_true", help="pure-Python CRC is slow on large blobs")
    args = ap.parse_args(argv)

    if _ckernels is None:
        print("compiled extension not built; only the NumPy backend is available", file=sys.stderr)
    n_px = int(args.megapixels * 1e6)
    cases = kernel_cases(n_px, args.candidates, args.threads, np.random.default_rng(0))
    print(f"{'kernel':42s} {'cython s':>10s} {'numpy s':>10s} {'speedup':>8s}")
    for name, fn in cases.items():
        if args.skip_crc and name.startswith("crc64"):
            continue
        py = best_of(lambda: fn(_pykernels), 1 if name.startswith("crc64") else args.repeats)
        cy = best_of(lambda: fn(_ckernels), args.repeats) if _ckernels is not None else float("nan")
        print(f"{name:42s} {cy:10.4f} {py:10.4f} {py / cy:8.1f}x")

    side = int(np.sqrt(n_px * 3 / 4))
    h, w = side, n_px // side
    rows = {}
    for pure in (False, True):
        env = dict(os.environ, CHROMCC_THREADS=str(args.threads))
        if pure:
            env["CHROMCC_PURE_PYTHON"] = "1"
        proc = subprocess.run([sys.executable, "-c", END_TO_END, str(h), str(w), str(args.candidates),
                               str(args.repeats)], env=env, capture_output=True, text=True, check=True)
        res = json.loads(proc.stdout)
        rows[res["backend"]] = res["seconds"]
    cy, py = rows.get("cython", float("nan")), rows["python"]
    print(f"{f'estimate end-to-end ({h}x{w}, M={args.candidates})':42s} {cy:10.4f} {py:10.4f} "
          f"{py / cy:8.1f}x")


if __name__ == "__main__":
    main()
