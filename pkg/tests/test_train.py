import math

import numpy as np
import pytest

from chromcc.colorspace import N_CHROMA_BINS, N_LUM_BINS, chromaticity_of
from chromcc.errors import DivergenceDetected, EmptyImage, InsufficientIlluminants
from chromcc.imaging import GroundTruth, LinearImage
from chromcc.inference import build_gmap, histogram_pixels
from chromcc.model import CandidateSet, ModelBundle, table_from_counts
from chromcc.train import (
    Instance,
    TrainConfig,
    augment_dataset,
    candidate_errors,
    image_cost,
    parse_schedule,
    score_gradient,
    sgd_train,
    subsample_pixels,
    table_gradient,
)


def small_instance(rng, m=3, shape=(8, 8), alpha=1.0):
    ill = np.abs(rng.standard_normal((m, 3))) + 0.2
    cands = CandidateSet(ill / np.linalg.norm(ill, axis=1, keepdims=True), np.log(np.full(m, 1 / m)))
    counts = rng.poisson(0.05, (N_LUM_BINS, N_CHROMA_BINS))
    table = table_from_counts(counts)
    img = LinearImage(rng.uniform(0.05, 1, shape + (3,)), np.ones(shape, bool))
    truth = chromaticity_of(np.abs(rng.standard_normal(3)) + 0.2)
    return ModelBundle(table, cands, alpha, 0.5), build_gmap(cands), histogram_pixels(img), truth


def fd_check(bundle, gmap, hist, truth, step=1e-4):
    cost, p, _ = image_cost(hist, bundle, gmap, truth)
    e = candidate_errors(bundle.candidates.chromas, truth)
    grad = table_gradient(hist, gmap, score_gradient(p, e, cost), hist.N, bundle.alpha)
    cells = {(int(y), int(gmap.table[c, i])) for c, y in zip(hist.chroma, hist.lum)
             for i in range(bundle.candidates.M)}
    worst = 0.0
    table = bundle.table
    for y, x in cells:
        orig = table[y, x]
        table[y, x] = orig + step
        up = image_cost(hist, bundle, gmap, truth)[0]
        table[y, x] = orig - step
        down = image_cost(hist, bundle, gmap, truth)[0]
        table[y, x] = orig
        fd = (up - down) / (2 * step)
        denom = max(abs(fd), abs(grad[y, x]), 1e-6)
        worst = max(worst, abs(fd - grad[y, x]) / denom)
    untouched = np.ones(table.shape, bool)
    for y, x in cells:
        untouched[y, x] = False
    return worst, np.abs(grad[untouched]).max()


def test_gradient_matches_finite_differences(rng):
    for alpha in (1.0, 2.5):
        worst, leak = fd_check(*small_instance(rng, alpha=alpha))
        assert worst < 1e-4
        assert leak == 0.0


def test_score_gradient_examples(rng):
    np.testing.assert_array_equal(score_gradient([0, 1, 0], [3.0, 0.0, 7.0], 0.0), 0.0)
    p, e = np.array([0.5, 0.5]), np.array([0.0, 10.0])
    cost = float(p @ e)
    assert cost == 5.0
    np.testing.assert_allclose(score_gradient(p, e, cost), [-2.5, 2.5])
    for _ in range(100):
        p = rng.dirichlet(np.ones(6))
        e = rng.uniform(0, 30, 6)
        assert abs(score_gradient(p, e, p @ e).sum()) < 1e-12 * 6 * 30


def test_image_cost_bounds(rng):
    bundle, gmap, hist, truth = small_instance(rng, m=5)
    cost, p, l = image_cost(hist, bundle, gmap, truth)
    e = candidate_errors(bundle.candidates.chromas, truth)
    assert e.min() - 1e-12 <= cost <= e.max() + 1e-12
    assert cost == pytest.approx(p @ e)


def test_image_cost_one_hot_truth():
    m = chromaticity_of([1.0, 0.9, 0.6])
    other = chromaticity_of([0.5, 0.9, 1.2])
    cands = CandidateSet([m, other], [0.0, -800.0])
    bundle = ModelBundle(np.zeros((N_LUM_BINS, N_CHROMA_BINS)), cands, 1.0, 1.0)
    img = LinearImage(np.ones((4, 4, 3)), np.ones((4, 4), bool))
    cost, p, _ = image_cost(histogram_pixels(img), bundle, build_gmap(cands), m)
    assert cost == 0.0 and p[0] == 1.0


def test_table_gradient_examples():
    cands = CandidateSet([chromaticity_of([1, 1, 1])], [0.0])
    gmap = build_gmap(cands)
    img = LinearImage(np.array([[[0.2, 0.5, 0.3]]]), np.ones((1, 1), bool))
    hist = histogram_pixels(img)
    assert not table_gradient(hist, gmap, [0.0]).any()
    g = table_gradient(hist, gmap, [0.37])
    assert np.count_nonzero(g) == 1 and g[g != 0][0] == 0.37


def test_augment_counts():
    rng = np.random.default_rng(0)
    img = LinearImage(np.ones((4, 4, 3)), np.ones((4, 4), bool))
    ill = [chromaticity_of([1, 0.5 + 0.1 * k, 0.4 + 0.05 * k]) for k in range(8)]
    train, val = augment_dataset([(img, GroundTruth(ill[0] * 0 + chromaticity_of([1, 1, 1])))],
                                 TrainConfig(), rng, ill)
    assert len(train) == 7 and len(val) == 1
    targets = [t.target for t in train[1:]] + [val[0].target]
    assert len({tuple(t) for t in targets}) == 7
    relit_img, relit_gt = train[1].materialize()
    np.testing.assert_array_equal(relit_gt.illuminant, train[1].target)


def test_augment_deterministic(synth_train):
    cfg = TrainConfig()
    ill = [g.illuminant for _, g in synth_train]
    a = augment_dataset(synth_train[:4], cfg, np.random.default_rng(5), ill)
    b = augment_dataset(synth_train[:4], cfg, np.random.default_rng(5), ill)
    for xa, xb in zip(a[0] + a[1], b[0] + b[1]):
        assert xa.materialize()[0].pixels.tobytes() == xb.materialize()[0].pixels.tobytes()


def test_augment_insufficient(synth_train):
    ill = [g.illuminant for _, g in synth_train[:3]]
    with pytest.raises(InsufficientIlluminants):
        augment_dataset(synth_train[:3], TrainConfig(), np.random.default_rng(0), ill)


def test_subsample_counts():
    cfg = TrainConfig()
    img = LinearImage(np.ones((512, 512, 3)), np.ones((512, 512), bool))
    idx = subsample_pixels(img, cfg, np.random.default_rng(0))
    assert len(idx) == 2048
    rows, cols = np.divmod(idx, 512)
    patches = set(zip((rows // 16).tolist(), (cols // 16).tolist()))
    assert len(patches) == 8
    again = subsample_pixels(img, cfg, np.random.default_rng(0))
    np.testing.assert_array_equal(idx, again)


def test_subsample_small_and_masked():
    cfg = TrainConfig()
    mask = np.ones((10, 12), bool)
    mask[0, 0] = False
    img = LinearImage(np.ones((10, 12, 3)), mask)
    assert len(subsample_pixels(img, cfg, np.random.default_rng(1))) == 119
    with pytest.raises(EmptyImage):
        subsample_pixels(LinearImage(np.ones((4, 4, 3)), np.zeros((4, 4), bool)), cfg,
                         np.random.default_rng(0))


def test_parse_schedule():
    assert parse_schedule("20x100,10x10") == ((20, 100.0), (10, 10.0))
    with pytest.raises(ValueError):
        parse_schedule("20")


def toy_problem():
    """Two candidates; uniform-color images whose posterior hinges on two table cells."""
    m_true = chromaticity_of([1.0, 1.0, 0.8])
    m_wrong = chromaticity_of([0.7, 1.0, 1.1])
    cands = CandidateSet([m_true, m_wrong], [math.log(0.5)] * 2)
    gmap = build_gmap(cands)
    table = np.full((N_LUM_BINS, N_CHROMA_BINS), -10.0)
    imgs = []
    for k, color in enumerate(([0.6, 0.7, 0.4], [0.5, 0.6, 0.5], [0.7, 0.65, 0.35])):
        px = np.broadcast_to(np.array(color) * m_true, (32, 32, 3))
        img = LinearImage(px, np.ones((32, 32), bool))
        h = histogram_pixels(img)
        c, y = int(h.chroma[0]), int(h.lum[0])
        table[y, gmap.table[c, 1]] = -9.0 + 0.1 * k
        imgs.append((img, GroundTruth(m_true)))
    bundle = ModelBundle(table, cands, 1.0, 0.0)
    return bundle, gmap, imgs


def test_toy_training_descends():
    bundle, gmap, imgs = toy_problem()
    cfg = TrainConfig(schedule=((4, 2.0),), momentum=0.5, keep_fraction=1.0)
    history = []
    out = sgd_train(bundle, [Instance(p) for p in imgs], [Instance(p) for p in imgs], cfg, gmap,
                    history=history)
    val = [h["val_mean_deg"] for h in history]
    assert all(b < a for a, b in zip(val, val[1:]))
    assert out.provenance["best_epoch"] == 4
    assert min(val) == val[-1]


def test_zero_learning_rate_returns_init():
    bundle, gmap, imgs = toy_problem()
    cfg = TrainConfig(schedule=((2, 0.0), (1, 0.0)))
    inst = [Instance(p) for p in imgs]
    out = sgd_train(bundle, inst, inst, cfg, gmap)
    np.testing.assert_array_equal(out.table, bundle.table)


def test_first_step_velocity_is_lr_times_gradient():
    bundle, gmap, imgs = toy_problem()
    cfg = TrainConfig(schedule=((1, 3.0),), keep_fraction=1.0)
    inst = [Instance(imgs[0])]
    out = sgd_train(bundle, inst, [], cfg, gmap)
    hist = histogram_pixels(imgs[0][0])
    cost, p, _ = image_cost(hist, bundle, gmap, imgs[0][1])
    grad = table_gradient(hist, gmap, score_gradient(p, candidate_errors(bundle.candidates.chromas,
                                                                          imgs[0][1].illuminant), cost))
    np.testing.assert_array_equal(bundle.table - out.table, 3.0 * grad)


def test_validation_selection_and_snapshots(tmp_path, synth_train, synth_model):
    bundle, gmap = synth_model
    cfg = TrainConfig(schedule=((2, 100.0), (1, 10.0)), rng_seed=3)
    tr, val = augment_dataset(synth_train[:8], cfg, np.random.default_rng(0),
                              [g.illuminant for _, g in synth_train])
    history = []
    out = sgd_train(bundle.folded(), tr, val, cfg, gmap, log_path=tmp_path / "log.csv",
                    snapshot_dir=tmp_path, history=history)
    best = out.provenance["best_epoch"]
    assert history[best]["val_mean_deg"] == min(h["val_mean_deg"] for h in history)
    lines = (tmp_path / "log.csv").read_text().splitlines()
    assert lines[0] == "epoch,lr,train_cost_mean,val_mean_deg,val_median_deg,snapshot_path"
    assert len(lines) == 5
    assert (tmp_path / "epoch_003.chcc").exists()


def test_training_deterministic(synth_train, synth_model):
    bundle, gmap = synth_model
    cfg = TrainConfig(schedule=((2, 100.0),), rng_seed=11)

    def run():
        tr, val = augment_dataset(synth_train[:6], cfg, np.random.default_rng(1),
                                  [g.illuminant for _, g in synth_train])
        return sgd_train(bundle.folded(), tr, val, cfg, gmap).table

    np.testing.assert_array_equal(run(), run())


def test_divergence_detected():
    bundle, gmap, imgs = toy_problem()
    # Start from a table favoring the true candidate, then train toward the wrong one.
    wrong = [(img, GroundTruth(bundle.candidates.chromas[1])) for img, _ in imgs]
    val = [Instance(p) for p in imgs]
    cfg = TrainConfig(schedule=((5, 50.0),), keep_fraction=1.0, divergence_factor=1.5)
    good = ModelBundle(-bundle.table - 19.0, bundle.candidates, 1.0, 0.0)
    with pytest.raises(DivergenceDetected) as info:
        sgd_train(good, [Instance(p) for p in wrong], val, cfg, gmap)
    assert info.value.history
