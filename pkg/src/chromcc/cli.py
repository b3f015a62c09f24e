"""Command-line entry point: ``chromcc <subcommand> ...``.

Exit codes: 0 success, 2 bad arguments, 3 data error, 4 training divergence.
"""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .errors import BadK, DataError, DivergenceDetected
from .harness import (
    ALPHA_GRID,
    BETA_GRID,
    FoldSpec,
    _Loader,
    evaluate,
    make_folds,
    run_crossval,
    train_fold_e2e,
    train_fold_empirical,
)
from .imaging import GroundTruth, Manifest, apply_checker_mask, load_ground_truth, load_linear_image
from .inference import (
    build_gmap,
    estimate,
    per_pixel_maps,
    read_estimates,
    write_diagnostic_png,
)
from .model import deserialize, serialize
from .train import TrainConfig, parse_schedule

EXIT_OK, EXIT_ARGS, EXIT_DATA, EXIT_DIVERGED = 0, 2, 3, 4


def _floats(text):
    return tuple(float(v) for v in text.split(","))


def _rect(text):
    vals = tuple(int(v) for v in text.split(","))
    if len(vals) != 4:
        raise argparse.ArgumentTypeError("rectangle must be x0,y0,x1,y1")
    return vals


def _train_names(manifest: Manifest, fold_spec, holdout):
    names = sorted(e.filename for e in manifest.entries)
    if fold_spec is None:
        return names
    folds, stored = FoldSpec.load(fold_spec)
    hold = holdout if holdout is not None else stored
    if hold is None:
        return names
    return folds.train_names(hold)


def cmd_make_folds(args):
    folds = make_folds(Manifest.load(args.manifest).entries, args.k)
    folds.save(args.out, args.holdout)
    print(f"wrote {args.k} folds for {len(folds.assignments)} images to {args.out}")


def cmd_train_empirical(args):
    manifest = Manifest.load(args.manifest)
    names = _train_names(manifest, args.fold_spec, args.holdout)
    grid = args.grid_search or (args.alpha is None and args.beta is None)
    bundle = train_fold_empirical(
        _Loader(manifest, 0), names, args.alphas, args.betas, grid_search=grid,
        alpha=args.alpha if args.alpha is not None else 1.0,
        beta=args.beta if args.beta is not None else 1.0,
        provenance={"n_train": len(names)},
    )
    serialize(bundle, args.out)
    print(f"alpha={bundle.alpha:g} beta={bundle.beta:g} M={bundle.candidates.M} -> {args.out}")


def _config(args) -> TrainConfig:
    return TrainConfig(momentum=args.momentum, schedule=parse_schedule(args.schedule),
                       rng_seed=args.seed, cost_units=args.cost_units)


def cmd_train_e2e(args):
    manifest = Manifest.load(args.manifest)
    names = _train_names(manifest, args.fold_spec, args.holdout)
    init = deserialize(args.init)
    cfg = _config(args)
    bundle = train_fold_e2e(_Loader(manifest, args.cache), names, init, cfg, [args.seed, 1], args.log)
    serialize(bundle, args.out)
    print(f"best epoch {bundle.provenance.get('best_epoch')} -> {args.out}")


def cmd_estimate(args):
    bundle = deserialize(args.model)
    img = load_linear_image(args.image, args.camera_id, args.black_level, args.saturation)
    if args.mask:
        img = apply_checker_mask(img, args.mask)
    gt = GroundTruth.from_rgb(args.truth) if args.truth else None
    gmap = build_gmap(bundle.candidates)
    res = estimate(img, bundle, gmap, gt)
    r, g, b = res.estimate
    print(f"{r:.6f} {g:.6f} {b:.6f}")
    if res.error_deg is not None:
        print(f"angular_error_deg {res.error_deg:.4f}")
    if args.maps_out:
        out = Path(args.maps_out)
        out.mkdir(parents=True, exist_ok=True)
        err, var = per_pixel_maps(img, None, bundle, gmap, gt, include_prior=not args.no_prior_in_maps)
        stem = Path(args.image).stem
        write_diagnostic_png(out / f"{stem}_variance.png", var)
        if err is not None:
            write_diagnostic_png(out / f"{stem}_error.png", err)


def cmd_evaluate(args):
    est = read_estimates(args.estimates)
    truth = load_ground_truth(args.truth)
    if set(est) != set(truth):
        missing = sorted(set(est) ^ set(truth))
        raise DataError(f"estimates and truth cover different images, e.g. {missing[:5]}")
    names = sorted(est)
    report = evaluate([est[n] for n in names], [truth[n] for n in names])
    if args.out:
        report.write_csv(args.out)
    print(report.pretty())


def cmd_crossval(args):
    manifest = Manifest.load(args.manifest)
    report = run_crossval(manifest, args.k, args.mode, _config(args), args.out, args.seed,
                          args.resume, args.alphas, args.betas, args.cache)
    print(report.pretty())


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="chromcc", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def grid_args(sp):
        sp.add_argument("--alphas", type=_floats, default=ALPHA_GRID)
        sp.add_argument("--betas", type=_floats, default=BETA_GRID)

    def train_args(sp):
        sp.add_argument("--seed", type=int, default=0)
        sp.add_argument("--schedule", default="20x100,10x10", help="epochs x learning rate, comma separated")
        sp.add_argument("--momentum", type=float, default=0.9)
        sp.add_argument("--cost-units", choices=("deg", "rad"), default="deg")
        sp.add_argument("--cache", type=int, default=32, help="images kept in memory")

    sp = sub.add_parser("make-folds", help="write a k-fold assignment file")
    sp.add_argument("--manifest", required=True, help="dataset manifest JSON")
    sp.add_argument("--k", type=int, required=True)
    sp.add_argument("--holdout", type=int, help="fold index left out of training")
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_make_folds)

    sp = sub.add_parser("train-empirical", help="histogram training plus (alpha, beta)")
    sp.add_argument("--manifest", required=True, help="dataset manifest JSON")
    sp.add_argument("--fold-spec", help="folds.json from make-folds")
    sp.add_argument("--holdout", type=int, help="fold index left out of training")
    sp.add_argument("--out", required=True)
    sp.add_argument("--alpha", type=float)
    sp.add_argument("--beta", type=float)
    sp.add_argument("--grid-search", action="store_true", help="pick alpha, beta by training-set error")
    grid_args(sp)
    sp.set_defaults(func=cmd_train_empirical)

    sp = sub.add_parser("train-e2e", help="refine a model by SGD on the expected error")
    sp.add_argument("--init", required=True, help="empirical model to start from")
    sp.add_argument("--manifest", required=True, help="dataset manifest JSON")
    sp.add_argument("--fold-spec", help="folds.json from make-folds")
    sp.add_argument("--holdout", type=int, help="fold index left out of training")
    sp.add_argument("--out", required=True)
    sp.add_argument("--log", help="per-epoch CSV log")
    train_args(sp)
    sp.set_defaults(func=cmd_train_e2e)

    sp = sub.add_parser("estimate", help="estimate the illuminant of one image")
    sp.add_argument("--model", required=True)
    sp.add_argument("--image", required=True)
    sp.add_argument("--camera-id", default="unknown")
    sp.add_argument("--black-level", type=int, help="defaults to the camera table")
    sp.add_argument("--saturation", type=int, default=65535)
    sp.add_argument("--mask", type=_rect, action="append", help="x0,y0,x1,y1; repeatable")
    sp.add_argument("--truth", type=_floats, help="ground-truth r,g,b for error maps")
    sp.add_argument("--maps-out", help="directory for per-pixel diagnostic PNGs")
    sp.add_argument("--no-prior-in-maps", action="store_true")
    sp.set_defaults(func=cmd_estimate)

    sp = sub.add_parser("evaluate", help="error statistics of an estimates CSV")
    sp.add_argument("--estimates", required=True)
    sp.add_argument("--truth", required=True, help="ground-truth CSV")
    sp.add_argument("--out")
    sp.set_defaults(func=cmd_evaluate)

    sp = sub.add_parser("crossval", help="k-fold cross-validation")
    sp.add_argument("--manifest", required=True, help="dataset manifest JSON")
    sp.add_argument("--k", type=int, required=True)
    sp.add_argument("--mode", choices=("empirical", "e2e"), default="empirical")
    sp.add_argument("--out", required=True)
    sp.add_argument("--resume", action="store_true", help="reuse folds whose inputs are unchanged")
    train_args(sp)
    grid_args(sp)
    sp.set_defaults(func=cmd_crossval)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except DivergenceDetected as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except (BadK, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ARGS
    except (DataError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
