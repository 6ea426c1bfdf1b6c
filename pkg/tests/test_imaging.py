import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from PIL import Image

from csasr import imaging
from csasr.imaging import (
    ImageFormatError,
    UnsupportedDepthError,
    bicubic_resize,
    cubic_kernel,
    degrade,
    load_image,
    psnr,
    save_image,
    ssim,
    to_float,
    to_u8,
)


def keys(x, a=-0.5):
    x = abs(x)
    if x <= 1:
        return (a + 2) * x**3 - (a + 3) * x**2 + 1
    if x < 2:
        return a * x**3 - 5 * a * x**2 + 8 * a * x - 4 * a
    return 0.0


def loop_resize_1d(v, n_out):
    n_in = len(v)
    out = []
    for d in range(n_out):
        src = (d + 0.5) * n_in / n_out - 0.5
        base = math.floor(src)
        acc = 0.0
        for k in range(base - 1, base + 3):
            acc += keys(src - k) * v[min(max(k, 0), n_in - 1)]
        out.append(acc)
    return np.array(out)


def loop_ssim(x, y, size=11, sigma=1.5):
    g = np.exp(-((np.arange(size) - 5) ** 2) / (2 * sigma**2))
    w = np.outer(g, g) / np.outer(g, g).sum()
    c1, c2 = 0.01**2, 0.03**2
    vals = []
    for c in range(x.shape[0]):
        acc = []
        for i in range(x.shape[1] - size + 1):
            for j in range(x.shape[2] - size + 1):
                a, b = x[c, i:i + size, j:j + size], y[c, i:i + size, j:j + size]
                ma, mb = (w * a).sum(), (w * b).sum()
                va = (w * (a - ma) ** 2).sum()
                vb = (w * (b - mb) ** 2).sum()
                cov = (w * (a - ma) * (b - mb)).sum()
                acc.append((2 * ma * mb + c1) * (2 * cov + c2) / ((ma**2 + mb**2 + c1) * (va + vb + c2)))
        vals.append(np.mean(acc))
    return float(np.mean(vals))


def test_png_round_trip(tmp_path):
    img = np.random.default_rng(0).integers(0, 256, (9, 7, 3), dtype=np.uint8)
    save_image(tmp_path / "a.png", img)
    assert np.array_equal(load_image(tmp_path / "a.png"), img)
    assert np.array_equal(to_u8(to_float(img)), img)


def test_gray_and_tiff_loading(tmp_path):
    g = np.random.default_rng(1).integers(0, 256, (5, 6), dtype=np.uint8)
    Image.fromarray(g).save(tmp_path / "g.tif")
    out = load_image(tmp_path / "g.tif")
    assert out.shape == (5, 6, 3) and all(np.array_equal(out[..., c], g) for c in range(3))


def test_load_errors(tmp_path):
    (tmp_path / "x.png").write_bytes(b"not an image at all")
    with pytest.raises(ImageFormatError):
        load_image(tmp_path / "x.png")
    Image.fromarray(np.zeros((4, 4), dtype=np.uint16)).save(tmp_path / "deep.png")
    with pytest.raises(UnsupportedDepthError):
        load_image(tmp_path / "deep.png")


def test_quantization_examples():
    assert to_u8(np.full((3, 1, 1), 0.5))[0, 0, 0] == 128
    assert to_u8(np.array([[[-0.2]], [[1.7]], [[1.0]]])).ravel().tolist() == [0, 255, 255]
    assert to_float(np.full((1, 1, 3), 255, dtype=np.uint8)).dtype == np.float32


def test_cubic_kernel_constants():
    np.testing.assert_allclose(cubic_kernel(np.array([0.0, 1.0, 2.0, 0.5, 1.5])), [1, 0, 0, 0.5625, -0.0625])
    assert imaging.CUBIC_A == -0.5


@pytest.mark.parametrize("n_in,n_out", [(8, 4), (9, 3), (5, 10), (7, 7), (12, 5), (4, 16)])
def test_resize_matches_loop_oracle(n_in, n_out):
    v = np.random.default_rng(n_in * 31 + n_out).random(n_in)
    got = bicubic_resize(np.tile(v, (1, 2, 1)), 2, n_out)[0, 0]
    np.testing.assert_allclose(got, loop_resize_1d(v, n_out), atol=1e-12)


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 20), st.integers(1, 20), st.integers(1, 20), st.integers(1, 20), st.floats(-3, 3))
def test_resize_preserves_constants(h, w, oh, ow, c):
    out = bicubic_resize(np.full((2, h, w), c), oh, ow)
    np.testing.assert_allclose(out, c, atol=1e-12)


def test_resize_identity_and_interior_ramp():
    img = np.random.default_rng(0).random((3, 6, 5))
    np.testing.assert_allclose(bicubic_resize(img, 6, 5), img, atol=1e-12)
    # a linear ramp is reproduced exactly away from the clamped border
    ramp = np.tile(np.arange(16.0), (1, 4, 1))
    up = bicubic_resize(ramp, 4, 32)[0, 0]
    xs = (np.arange(32) + 0.5) / 2 - 0.5
    np.testing.assert_allclose(up[4:-4], xs[4:-4], atol=1e-12)


@pytest.mark.parametrize("scale,lr_size,hr_size", [(2, 128, 256), (3, 85, 255), (4, 64, 256)])
def test_degrade_shapes(scale, lr_size, hr_size):
    pair = degrade(np.random.default_rng(0).random((3, 256, 256)), scale)
    assert pair.lr.shape == (3, lr_size, lr_size) and pair.hr.shape == (3, hr_size, hr_size)


def test_degrade_crop_is_centered():
    hr = np.arange(3 * 7 * 7, dtype=np.float64).reshape(3, 7, 7)
    pair = degrade(hr, 3)
    assert np.array_equal(pair.hr, hr[:, :6, :6])
    assert np.array_equal(degrade(np.arange(64.0).reshape(1, 8, 8), 3).hr, np.arange(64.0).reshape(1, 8, 8)[:, 1:7, 1:7])
    with pytest.raises(ValueError):
        degrade(hr, 5)


def test_psnr_examples():
    a = np.zeros((3, 8, 8))
    assert psnr(a, a) == math.inf
    assert abs(psnr(a, a + 1, peak=255.0) - 48.1308) < 1e-3
    assert abs(psnr(a, a + 1 / 255) - 48.1308) < 1e-3


def test_ssim_examples():
    x = np.random.default_rng(0).random((3, 16, 16))
    assert ssim(x, x) == 1.0
    c = ssim(np.full((3, 16, 16), 0.5), np.full((3, 16, 16), 0.25))
    assert abs(c - (2 * 0.125 + 1e-4) / (0.25 + 0.0625 + 1e-4)) < 1e-12
    assert abs(c - 0.8001) < 1e-3


@pytest.mark.parametrize("seed", range(3))
def test_ssim_matches_window_loop(seed):
    r = np.random.default_rng(seed)
    x = r.random((2, 14, 13))
    y = np.clip(x + 0.1 * r.standard_normal(x.shape), 0, 1)
    assert abs(ssim(x, y) - loop_ssim(x, y)) < 1e-10


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 10_000))
def test_metric_symmetry_and_bounds(seed):
    r = np.random.default_rng(seed)
    x, y = r.random((3, 12, 12)), r.random((3, 12, 12))
    assert ssim(x, y) == pytest.approx(ssim(y, x), abs=1e-12)
    assert -1 <= ssim(x, y) <= 1
    assert psnr(x, y) == pytest.approx(psnr(y, x))


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000), st.floats(1e-4, 0.2), st.floats(1.05, 3.0))
def test_psnr_decreases_with_mse(seed, eps, factor):
    r = np.random.default_rng(seed)
    x = r.random((3, 8, 8))
    noise = r.standard_normal(x.shape)
    near, far = psnr(x, x + eps * noise), psnr(x, x + factor * eps * noise)
    assert far < near < math.inf
