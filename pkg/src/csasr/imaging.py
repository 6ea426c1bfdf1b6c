"""Image I/O and bicubic resampling, with the PSNR/SSIM metrics."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path

import numpy as np
from PIL import Image, UnidentifiedImageError

CUBIC_A = -0.5
SUPPORTED_SUFFIXES = (".png", ".tif", ".tiff")


class ImageError(Exception):
    pass


class ImageFormatError(ImageError):
    """Not a decodable raster file."""


class UnsupportedDepthError(ImageError):
    """Decodable, but not 8-bit per sample."""


class TruncatedImageError(ImageError):
    """Header parsed but the pixel stream ended early."""


@dataclass
class SamplePair:
    lr: np.ndarray  # (C, h, w) float in [0, 1]
    hr: np.ndarray  # (C, s*h, s*w)
    provenance: tuple[str, tuple[int, int]] = field(default=("", (0, 0)))


# ---------------------------------------------------------------- I/O

_EIGHT_BIT_MODES = {"L", "RGB", "RGBA", "P", "LA", "1", "CMYK", "YCbCr"}


def load_image(path: str | Path) -> np.ndarray:
    """Read an 8-bit raster as an (H, W, 3) uint8 array; gray is replicated to RGB."""
    path = Path(path)
    try:
        img = Image.open(path)
    except UnidentifiedImageError as exc:
        raise ImageFormatError(f"{path}: not a supported image file") from exc
    except OSError as exc:
        raise ImageFormatError(f"{path}: {exc}") from exc
    with img:
        if img.mode not in _EIGHT_BIT_MODES:
            raise UnsupportedDepthError(f"{path}: unsupported sample format {img.mode!r} (8-bit only)")
        try:
            img.load()
        except OSError as exc:
            raise TruncatedImageError(f"{path}: truncated or corrupt pixel data ({exc})") from exc
        arr = np.asarray(img.convert("RGB"), dtype=np.uint8)
    return arr.copy()


def save_image(path: str | Path, image: np.ndarray) -> None:
    """Write (H, W, 3) uint8 or a float (C, H, W) image in [0, 1] as PNG."""
    arr = image if image.dtype == np.uint8 else to_u8(image)
    Image.fromarray(arr).save(Path(path), format="PNG")


def to_float(img_u8: np.ndarray) -> np.ndarray:
    """(H, W, C) uint8 -> planar (C, H, W) float32, v / 255."""
    return np.ascontiguousarray(img_u8.transpose(2, 0, 1)).astype(np.float32) / np.float32(255.0)


def to_u8(img: np.ndarray) -> np.ndarray:
    """Planar float in [0, 1] -> (H, W, C) uint8, clamped, halves rounded away from zero."""
    v = np.clip(np.asarray(img, dtype=np.float64) * 255.0, 0.0, 255.0)
    return np.floor(v + 0.5).astype(np.uint8).transpose(1, 2, 0)


# ---------------------------------------------------------------- resampling

def cubic_kernel(x: np.ndarray, a: float = CUBIC_A) -> np.ndarray:
    x = np.abs(np.asarray(x, dtype=np.float64))
    x2, x3 = x * x, x * x * x
    near = (a + 2) * x3 - (a + 3) * x2 + 1
    far = a * x3 - 5 * a * x2 + 8 * a * x - 4 * a
    return np.where(x <= 1, near, np.where(x < 2, far, 0.0))


@lru_cache(maxsize=256)
def _weights_cached(n_in: int, n_out: int, a: float) -> np.ndarray:
    w = np.zeros((n_out, n_in))
    ratio = n_in / n_out
    for d in range(n_out):
        src = (d + 0.5) * ratio - 0.5
        base = math.floor(src)
        for k in range(base - 1, base + 3):
            w[d, min(max(k, 0), n_in - 1)] += cubic_kernel(src - k, a)
    w.setflags(write=False)
    return w


def cubic_weights(n_in: int, n_out: int, a: float = CUBIC_A) -> np.ndarray:
    """(n_out, n_in) matrix of one-axis cubic-convolution resampling, edge clamped."""
    if n_in < 1 or n_out < 1:
        raise ValueError(f"resize extents must be >= 1 (got {n_in} -> {n_out})")
    return _weights_cached(n_in, n_out, a)


def bicubic_resize(img: np.ndarray, out_h: int, out_w: int, a: float = CUBIC_A) -> np.ndarray:
    """Separable cubic resampling of a (C, H, W) or (N, C, H, W) float image."""
    h, w = img.shape[-2:]
    wh = cubic_weights(h, out_h, a)
    ww = cubic_weights(w, out_w, a)
    out = np.matmul(np.matmul(wh, img.astype(np.float64)), ww.T)
    return out.astype(img.dtype if np.issubdtype(img.dtype, np.floating) else np.float64)


def center_crop_to_multiple(img: np.ndarray, scale: int) -> np.ndarray:
    h, w = img.shape[-2:]
    hh, ww = h - h % scale, w - w % scale
    top, left = (h - hh) // 2, (w - ww) // 2
    return img[..., top:top + hh, left:left + ww]


def degrade(hr: np.ndarray, scale: int) -> SamplePair:
    """Center-crop HR to a multiple of ``scale`` and bicubic-downscale by 1/scale."""
    if scale not in (2, 3, 4):
        raise ValueError(f"scale must be 2, 3 or 4 (got {scale})")
    h, w = hr.shape[-2:]
    if h < scale or w < scale:
        raise ValueError(f"image {h}x{w} is smaller than scale {scale}")
    crop = np.ascontiguousarray(center_crop_to_multiple(hr, scale))
    hh, ww = crop.shape[-2:]
    return SamplePair(bicubic_resize(crop, hh // scale, ww // scale), crop)


# ---------------------------------------------------------------- metrics

def psnr(a: np.ndarray, b: np.ndarray, peak: float = 1.0) -> float:
    """PSNR in dB over all samples; ``math.inf`` when the images are identical."""
    if a.shape != b.shape:
        raise ValueError(f"psnr: shape mismatch {a.shape} vs {b.shape}")
    diff = np.asarray(a, dtype=np.float64) - np.asarray(b, dtype=np.float64)
    mse = float(np.mean(diff * diff))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(peak * peak / mse)


@lru_cache(maxsize=4)
def gaussian_window(size: int = 11, sigma: float = 1.5) -> np.ndarray:
    x = np.arange(size) - (size - 1) / 2
    g = np.exp(-(x * x) / (2 * sigma * sigma))
    g /= g.sum()
    g.setflags(write=False)
    return g


def _filter_valid(img: np.ndarray, g: np.ndarray) -> np.ndarray:
    k = g.size
    rows = np.lib.stride_tricks.sliding_window_view(img, k, axis=-2) @ g
    return np.lib.stride_tricks.sliding_window_view(rows, k, axis=-1) @ g


def ssim(a: np.ndarray, b: np.ndarray, data_range: float = 1.0, win: int = 11, sigma: float = 1.5,
         k1: float = 0.01, k2: float = 0.03) -> float:
    """Mean single-scale SSIM of (C, H, W) images, Gaussian window, valid positions only."""
    if a.shape != b.shape:
        raise ValueError(f"ssim: shape mismatch {a.shape} vs {b.shape}")
    if min(a.shape[-2:]) < win:
        raise ValueError(f"ssim: image {a.shape[-2:]} smaller than the {win}x{win} window")
    x = np.asarray(a, dtype=np.float64)
    y = np.asarray(b, dtype=np.float64)
    if x.ndim == 2:
        x, y = x[None], y[None]
    g = gaussian_window(win, sigma)
    c1 = (k1 * data_range) ** 2
    c2 = (k2 * data_range) ** 2
    mx, my = _filter_valid(x, g), _filter_valid(y, g)
    sxx = _filter_valid(x * x, g) - mx * mx
    syy = _filter_valid(y * y, g) - my * my
    sxy = _filter_valid(x * y, g) - mx * my
    num = (2 * mx * my + c1) * (2 * sxy + c2)
    den = (mx * mx + my * my + c1) * (sxx + syy + c2)
    per_channel = (num / den).reshape(x.shape[0], -1).mean(axis=1)
    return float(per_channel.mean())
