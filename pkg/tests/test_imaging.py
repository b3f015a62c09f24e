import math

import cv2
import numpy as np
import pytest

from chromcc.colorspace import angular_error, chromaticity_of
from chromcc.errors import DegenerateIlluminant, DimensionMismatch, EmptyImage, OutOfBounds, UnsupportedFormat
from chromcc.imaging import (
    GroundTruth,
    LinearImage,
    Manifest,
    apply_checker_mask,
    correct_image,
    load_ground_truth,
    load_linear_image,
    normalize_luminance,
    read_raw,
    relight,
    write_raw,
)
from chromcc.inference import histogram_pixels


def raw_image(values, shape=(4, 5)):
    return np.tile(np.array(values, dtype=np.uint16), shape + (1,))


@pytest.mark.parametrize("suffix", [".png", ".ppm"])
@pytest.mark.parametrize("raw, camera, expected", [
    ((129, 129, 129), "canon5d", (0, 0, 0)),
    ((500, 300, 200), "canon1d", (500, 300, 200)),
    ((100, 200, 300), "canon5d", (0, 71, 171)),
])
def test_load_black_level(tmp_path, suffix, raw, camera, expected):
    path = tmp_path / f"img{suffix}"
    write_raw(path, raw_image(raw))
    img = load_linear_image(path, camera)
    np.testing.assert_array_equal(img.pixels[0, 0], expected)
    assert img.valid_mask.all()
    assert img.pixels.min() >= 0


def test_channel_order_preserved(tmp_path):
    raw = np.zeros((2, 3, 3), np.uint16)
    raw[..., 0], raw[..., 1], raw[..., 2] = 10, 20, 30
    write_raw(tmp_path / "a.png", raw)
    np.testing.assert_array_equal(read_raw(tmp_path / "a.png"), raw)


def test_saturated_pixels_invalid(tmp_path):
    raw = raw_image((1000, 1000, 1000))
    raw[1, 2] = (65000, 10, 10)
    write_raw(tmp_path / "s.png", raw)
    img = load_linear_image(tmp_path / "s.png", "canon1d")
    assert not img.valid_mask[1, 2]
    assert img.n_valid == raw.shape[0] * raw.shape[1] - 1


def test_load_errors(tmp_path):
    with pytest.raises(FileNotFoundError):
        load_linear_image(tmp_path / "missing.png")
    cv2.imwrite(str(tmp_path / "eight.png"), np.zeros((4, 4, 3), np.uint8))
    with pytest.raises(UnsupportedFormat):
        load_linear_image(tmp_path / "eight.png")
    write_raw(tmp_path / "ok.png", raw_image((1, 2, 3)))
    cv2.imwrite(str(tmp_path / "mask.png"), np.zeros((3, 3), np.uint8))
    with pytest.raises(DimensionMismatch):
        load_linear_image(tmp_path / "ok.png", mask_path=tmp_path / "mask.png")


def test_sidecar_mask(tmp_path):
    write_raw(tmp_path / "ok.png", raw_image((1, 2, 3)))
    m = np.zeros((4, 5), np.uint8)
    m[0, :2] = 255
    cv2.imwrite(str(tmp_path / "mask.png"), m)
    img = load_linear_image(tmp_path / "ok.png", mask_path=tmp_path / "mask.png")
    assert img.n_valid == 18


def const_image(rgb, shape=(100, 100)):
    px = np.broadcast_to(np.asarray(rgb, float), shape + (3,))
    return LinearImage(px, np.ones(shape, bool))


def test_checker_mask():
    img = const_image((1, 1, 1))
    assert apply_checker_mask(img, []).n_valid == 10000
    assert apply_checker_mask(img, [(10, 20, 20, 30)]).n_valid == 9900
    empty = apply_checker_mask(img, [(0, 0, 100, 100)])
    assert empty.n_valid == 0
    with pytest.raises(EmptyImage):
        normalize_luminance(empty)
    with pytest.raises(EmptyImage):
        histogram_pixels(empty)
    with pytest.raises(OutOfBounds):
        apply_checker_mask(img, [(90, 90, 101, 95)])
    np.testing.assert_array_equal(empty.pixels, img.pixels)


def test_normalize_luminance_examples():
    lum = normalize_luminance(const_image((1, 1, 1)))
    assert lum.median_l1 == 3.0
    np.testing.assert_array_equal(lum.y, 1.0)
    px = np.array([[[1, 0, 0], [2, 0, 0], [3, 0, 0]]], float)
    lum = normalize_luminance(LinearImage(px, np.ones((1, 3), bool)))
    assert lum.median_l1 == 2.0
    np.testing.assert_allclose(lum.y[0], [0.5, 1.0, 1.5])


def test_normalize_lower_median_and_mask():
    px = np.array([[[1, 0, 0], [2, 0, 0], [3, 0, 0], [4, 0, 0], [1000, 0, 0]]], float)
    mask = np.array([[True, True, True, True, False]])
    lum = normalize_luminance(LinearImage(px, mask))
    assert lum.median_l1 == 2.0
    assert lum.y[0, 4] == 0.0


def test_normalize_scale_invariant(rng):
    img = LinearImage(rng.uniform(0, 5, (20, 30, 3)), np.ones((20, 30), bool))
    np.testing.assert_allclose(normalize_luminance(img.scaled(7.0)).y, normalize_luminance(img).y, rtol=1e-14)


def test_masked_pixels_do_not_matter(rng):
    px = rng.uniform(0, 5, (20, 30, 3))
    mask = np.ones((20, 30), bool)
    mask[5:10, 5:15] = False
    a = LinearImage(px, mask)
    px2 = px.copy()
    px2[5:10, 5:15] = rng.uniform(0, 1e4, (5, 10, 3))
    b = LinearImage(px2, mask)
    assert normalize_luminance(a).median_l1 == normalize_luminance(b).median_l1
    ha, hb = histogram_pixels(a), histogram_pixels(b)
    np.testing.assert_array_equal(ha.counts, hb.counts)
    np.testing.assert_array_equal(ha.chroma, hb.chroma)


def test_relight_examples():
    gray = GroundTruth(np.ones(3) / math.sqrt(3))
    img = const_image((2, 2, 2), (3, 3))
    new = np.array([2, 1, 1]) / math.sqrt(6)
    out, gt = relight(img, gray, new)
    np.testing.assert_allclose(chromaticity_of(out.pixels[0, 0]), new, atol=1e-12)
    np.testing.assert_array_equal(gt.illuminant, new)
    same, _ = relight(img, gray, gray.illuminant)
    np.testing.assert_allclose(same.pixels, img.pixels, rtol=1e-15)


def test_relight_inverse(rng):
    img = LinearImage(rng.uniform(0, 100, (8, 9, 3)), rng.uniform(size=(8, 9)) > 0.2)
    gt = GroundTruth(chromaticity_of([0.9, 1.0, 0.6]))
    m = chromaticity_of([0.5, 1.0, 1.2])
    there, gt2 = relight(img, gt, m)
    back, _ = relight(there, gt2, gt.illuminant)
    np.testing.assert_allclose(back.pixels, img.pixels, atol=1e-9)
    np.testing.assert_array_equal(back.valid_mask, img.valid_mask)


def test_relight_degenerate():
    with pytest.raises(DegenerateIlluminant):
        relight(const_image((1, 1, 1), (2, 2)), GroundTruth([1.0, 0.0, 0.0]), [1, 1, 1])


def test_correct_image_examples(rng):
    gray = np.ones(3) / math.sqrt(3)
    img = LinearImage(rng.uniform(0.1, 1, (5, 6, 3)), np.ones((5, 6), bool))
    out = correct_image(img, gray)
    np.testing.assert_allclose(out.pixels / img.pixels, 1.0, rtol=1e-12)
    out = correct_image(const_image((4, 2, 2), (2, 2)), np.array([2, 1, 1]) / math.sqrt(6))
    np.testing.assert_allclose(chromaticity_of(out.pixels[0, 0]), gray, atol=1e-12)
    assert out.pixels.max() == pytest.approx(4.0)
    with pytest.raises(DegenerateIlluminant):
        correct_image(img, (0, 1, 1))


def test_relight_then_correct_is_identity(rng):
    img = LinearImage(rng.uniform(0.1, 1, (6, 7, 3)), np.ones((6, 7), bool))
    gt = GroundTruth(chromaticity_of([1, 1, 1]))
    m = chromaticity_of([1.3, 1.0, 0.5])
    relit, _ = relight(img, gt, m)
    fixed = correct_image(relit, m)
    err = angular_error(chromaticity_of(fixed.pixels), chromaticity_of(img.pixels))
    assert err.max() < 1e-6


def test_ground_truth_csv(tmp_path):
    (tmp_path / "gt.csv").write_text("filename,r,g,b\na.png,2,4,4\n")
    gt = load_ground_truth(tmp_path / "gt.csv")["a.png"]
    np.testing.assert_allclose(gt.illuminant, [1 / 3, 2 / 3, 2 / 3])
    assert gt.raw_magnitude == 10.0


def test_manifest_round_trip(disk_dataset):
    man = Manifest.load(disk_dataset)
    assert len(man.entries) == 24
    e5 = next(e for e in man.entries if e.camera_id == "canon5d")
    assert e5.black_level == 129
    img, gt = man.read(e5)
    assert img.n_valid == img.width * img.height - 60
    assert np.linalg.norm(gt.illuminant) == pytest.approx(1.0)
