"""Image I/O, bicubic resampling, residual images and fidelity metrics.

RGB images are float32 arrays of shape (H, W, 3) with values in [0, 1].
"""

import enum
import math
import struct
from dataclasses import dataclass
from fractions import Fraction
from typing import NamedTuple

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from PIL import Image

from .tensor import DTYPE, ShapeError

PSNR_SENTINEL = 99.0
CROP_LEFT = 64
SUPPORTED_SCALES = (Fraction(1, 4), Fraction(1, 2), Fraction(2), Fraction(4))
CUBIC_A = -0.5

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03

_PNG_SIGNATURE = b"\x89PNG\r\n\x1a\n"


class ImageFormatError(ValueError):
    pass


class StereoPair(NamedTuple):
    left: np.ndarray
    right: np.ndarray


class Protocol(str, enum.Enum):
    CROPPED_LEFT = "cropped-left"
    STEREO_AVERAGE = "stereo-average"


@dataclass(frozen=True)
class MetricReport:
    psnr_db: float
    ssim: float
    protocol: Protocol

    @property
    def psnr_infinite(self) -> bool:
        return self.psnr_db >= PSNR_SENTINEL


def as_rgb(img) -> np.ndarray:
    img = np.asarray(img, dtype=DTYPE)
    if img.ndim != 3 or img.shape[2] != 3:
        raise ShapeError(f"expected an H x W x 3 image, got shape {img.shape}")
    return np.clip(img, 0.0, 1.0)


def _png_header(path):
    with open(path, "rb") as fh:
        head = fh.read(33)
    if len(head) < 33 or head[:8] != _PNG_SIGNATURE or head[12:16] != b"IHDR":
        raise ImageFormatError(f"{path}: not a PNG file")
    width, height, depth, color = struct.unpack(">IIBB", head[16:26])
    return width, height, depth, color


def load_png(path) -> np.ndarray:
    """Read an 8-bit RGB PNG into an (H, W, 3) float32 image in [0, 1]."""
    try:
        _, _, depth, color = _png_header(path)
    except OSError as exc:
        raise ImageFormatError(f"{path}: unreadable file ({exc})") from exc
    if color != 2:
        raise ImageFormatError(f"{path}: unsupported format (PNG color type {color}, need RGB)")
    if depth != 8:
        raise ImageFormatError(f"{path}: unsupported bit depth {depth}")
    with Image.open(path) as im:
        data = np.asarray(im.convert("RGB"), dtype=np.uint8)
    return data.astype(DTYPE) / DTYPE(255.0)


def to_uint8(values) -> np.ndarray:
    return np.clip(np.round(np.asarray(values, dtype=np.float64) * 255.0), 0, 255).astype(np.uint8)


def save_png(img, path):
    img = np.asarray(img)
    if img.ndim != 3 or img.shape[2] != 3:
        raise ShapeError(f"expected an H x W x 3 image, got shape {img.shape}")
    Image.fromarray(to_uint8(img)).save(path)


def save_gray_png(values, path):
    """Store an H x W map with values in [0, 1] as 8-bit grayscale."""
    values = np.asarray(values)
    if values.ndim != 2:
        raise ShapeError(f"expected an H x W map, got shape {values.shape}")
    Image.fromarray(to_uint8(values)).save(path)


def cubic_kernel(x, a=CUBIC_A):
    x = np.abs(np.asarray(x, dtype=np.float64))
    x2, x3 = x * x, x * x * x
    inner = (a + 2) * x3 - (a + 3) * x2 + 1
    outer = a * x3 - 5 * a * x2 + 8 * a * x - 4 * a
    return np.where(x <= 1, inner, np.where(x < 2, outer, 0.0))


def _check_scale(scale) -> Fraction:
    s = Fraction(scale).limit_denominator(16)
    if s not in SUPPORTED_SCALES:
        raise ValueError(f"unsupported scale {scale}; use one of 1/4, 1/2, 2, 4")
    return s


def resize_matrix(n_in, scale, antialias=True) -> np.ndarray:
    """Dense (n_out x n_in) matrix applying 1-D bicubic resampling.

    Output sample i sits at input coordinate (i + 0.5) / scale - 0.5. When
    shrinking with antialiasing the kernel is stretched by 1 / scale.
    Out-of-range taps are clamped to the border sample.
    """
    s = _check_scale(scale)
    if s < 1 and n_in % s.denominator:
        raise ShapeError(f"extent {n_in} not divisible by {s.denominator}")
    n_out = int(n_in * s)
    sf = float(s)
    kscale = sf if (antialias and sf < 1) else 1.0
    support = 2.0 / kscale
    centers = (np.arange(n_out) + 0.5) / sf - 0.5
    taps = int(math.ceil(2 * support)) + 2
    first = np.floor(centers - support).astype(np.int64)
    idx = first[:, None] + np.arange(taps)[None, :]
    wts = kscale * cubic_kernel(kscale * (centers[:, None] - idx))
    wts /= wts.sum(axis=1, keepdims=True)
    mat = np.zeros((n_out, n_in))
    rows = np.repeat(np.arange(n_out), taps)
    np.add.at(mat, (rows, np.clip(idx, 0, n_in - 1).ravel()), wts.ravel())
    return mat


def bicubic_resize(img, scale, antialias=True) -> np.ndarray:
    """Separable bicubic resize of an (H, W, C) image; output clamped to [0, 1]."""
    img = np.asarray(img, dtype=DTYPE)
    if img.ndim != 3:
        raise ShapeError(f"expected an H x W x C image, got shape {img.shape}")
    mh = resize_matrix(img.shape[0], scale, antialias)
    mw = resize_matrix(img.shape[1], scale, antialias)
    out = np.einsum("ij,jwc->iwc", mh, img.astype(np.float64))
    out = np.einsum("kw,iwc->ikc", mw, out)
    return np.clip(out, 0.0, 1.0).astype(DTYPE)


def residual_image(hr, lr, scale) -> np.ndarray:
    """|hr - bicubic_up(lr)| brought back down to the LR grid."""
    hr = np.asarray(hr, dtype=DTYPE)
    lr = np.asarray(lr, dtype=DTYPE)
    s = _check_scale(scale)
    if s < 1:
        raise ValueError("residual_image takes the upscaling factor (2 or 4)")
    if hr.shape != (lr.shape[0] * int(s), lr.shape[1] * int(s), lr.shape[2]):
        raise ShapeError(f"hr shape {hr.shape} is not {s} x lr shape {lr.shape}")
    up = bicubic_resize(lr, s)
    return bicubic_resize(np.abs(hr - up), 1 / s)


def psnr(a, b) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ShapeError(f"shape mismatch: {a.shape} vs {b.shape}")
    mse = np.mean((a - b) ** 2)
    if mse == 0:
        return PSNR_SENTINEL
    return min(PSNR_SENTINEL, 10.0 * math.log10(1.0 / mse))


def gaussian_window(size=SSIM_WINDOW, sigma=SSIM_SIGMA) -> np.ndarray:
    x = np.arange(size) - (size - 1) / 2
    g = np.exp(-(x * x) / (2 * sigma * sigma))
    return g / g.sum()


def _filter_valid(x, g):
    n = len(g)
    x = sliding_window_view(x, n, axis=0) @ g
    return sliding_window_view(x, n, axis=1) @ g


def _ssim_channel(x, y):
    g = gaussian_window()
    c1 = (SSIM_K1 * 1.0) ** 2
    c2 = (SSIM_K2 * 1.0) ** 2
    mx, my = _filter_valid(x, g), _filter_valid(y, g)
    sxx = _filter_valid(x * x, g) - mx * mx
    syy = _filter_valid(y * y, g) - my * my
    sxy = _filter_valid(x * y, g) - mx * my
    num = (2 * mx * my + c1) * (2 * sxy + c2)
    den = (mx * mx + my * my + c1) * (sxx + syy + c2)
    return float(np.mean(num / den))


def ssim(a, b) -> float:
    """Mean SSIM with an 11x11 Gaussian window (sigma 1.5), valid region only."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ShapeError(f"shape mismatch: {a.shape} vs {b.shape}")
    if a.shape[0] < SSIM_WINDOW or a.shape[1] < SSIM_WINDOW:
        raise ShapeError(f"image {a.shape[:2]} smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} window")
    if a.ndim == 2:
        return _ssim_channel(a, b)
    return float(np.mean([_ssim_channel(a[..., c], b[..., c]) for c in range(a.shape[2])]))


def evaluate_pair(sr: StereoPair, gt: StereoPair, protocol) -> MetricReport:
    protocol = Protocol(protocol)
    for s, g in zip(sr, gt):
        if np.shape(s) != np.shape(g):
            raise ShapeError(f"shape mismatch: {np.shape(s)} vs {np.shape(g)}")
    if protocol is Protocol.CROPPED_LEFT:
        if np.shape(gt.left)[1] <= CROP_LEFT:
            raise ShapeError(f"width must exceed {CROP_LEFT} for the cropped-left protocol")
        a = np.asarray(sr.left)[:, CROP_LEFT:]
        b = np.asarray(gt.left)[:, CROP_LEFT:]
        return MetricReport(psnr(a, b), ssim(a, b), protocol)
    p = (psnr(sr.left, gt.left) + psnr(sr.right, gt.right)) / 2
    s = (ssim(sr.left, gt.left) + ssim(sr.right, gt.right)) / 2
    return MetricReport(p, s, protocol)
