"""Binary PGM/PPM image files, grid coordinates, and quality metrics.

Only the binary 8-bit formats are supported (P5 grayscale, P6 RGB); the
ASCII variants are rejected.  Pixel values map to floats in [0, 1], and
pixel (row, col) of an H x W image sits at the continuous coordinate
((col + 0.5)/W - 0.5, (row + 0.5)/H - 0.5), so re-sampling at another
resolution reads the same underlying field.
"""

from __future__ import annotations

import math

import numpy as np
from scipy.ndimage import uniform_filter

__all__ = [
    "read_image",
    "write_image",
    "box_downsample",
    "grid_coordinates",
    "image_to_dataset",
    "psnr",
    "ssim",
]


def _read_token(data: bytes, pos: int) -> tuple[bytes, int]:
    # skip whitespace and '#' comments between header tokens
    n = len(data)
    while pos < n:
        c = data[pos : pos + 1]
        if c == b"#":
            while pos < n and data[pos : pos + 1] not in (b"\n", b"\r"):
                pos += 1
        elif c.isspace():
            pos += 1
        else:
            break
    start = pos
    while pos < n and not data[pos : pos + 1].isspace():
        pos += 1
    if start == pos:
        raise ValueError("truncated image header")
    return data[start:pos], pos


def read_image(path) -> np.ndarray:
    """Read a binary PGM (P5) or PPM (P6) file to floats in [0, 1].

    Returns (H, W) for grayscale, (H, W, 3) for RGB.
    """
    with open(path, "rb") as fh:
        data = fh.read()
    magic, pos = _read_token(data, 0)
    if magic in (b"P2", b"P3"):
        raise ValueError(f"ASCII format {magic.decode()} not supported; use binary P5/P6")
    if magic not in (b"P5", b"P6"):
        raise ValueError(f"unsupported image magic {magic!r}")
    width, pos = _read_token(data, pos)
    height, pos = _read_token(data, pos)
    maxval, pos = _read_token(data, pos)
    w, h, mv = int(width), int(height), int(maxval)
    if mv != 255:
        raise ValueError(f"only maxval 255 supported, got {mv}")
    pos += 1  # single whitespace byte after maxval
    channels = 1 if magic == b"P5" else 3
    need = w * h * channels
    raw = data[pos : pos + need]
    if len(raw) != need:
        raise ValueError(f"expected {need} pixel bytes, found {len(raw)}")
    arr = np.frombuffer(raw, dtype=np.uint8).astype(np.float64) / 255.0
    if channels == 1:
        return arr.reshape(h, w)
    return arr.reshape(h, w, 3)


def write_image(path, img: np.ndarray) -> None:
    """Write floats in [0, 1] as binary PGM (2-d input) or PPM ((H, W, 3))."""
    img = np.asarray(img, dtype=float)
    if img.ndim == 3 and img.shape[2] == 1:
        img = img[:, :, 0]
    quant = np.clip(np.rint(img * 255.0), 0, 255).astype(np.uint8)
    if img.ndim == 2:
        magic, h, w = b"P5", *img.shape
    elif img.ndim == 3 and img.shape[2] == 3:
        magic = b"P6"
        h, w = img.shape[:2]
    else:
        raise ValueError(f"cannot write image of shape {img.shape}")
    with open(path, "wb") as fh:
        fh.write(magic + b"\n" + f"{w} {h}\n255\n".encode())
        fh.write(quant.tobytes())


def box_downsample(img: np.ndarray, size: int) -> np.ndarray:
    """Mean-pool a square image down to size x size (integer factor only)."""
    h = img.shape[0]
    if img.shape[1] != h:
        raise ValueError("box_downsample expects a square image")
    if h % size != 0:
        raise ValueError(f"resolution {h} is not an integer multiple of {size}")
    f = h // size
    if f == 1:
        return img.copy()
    if img.ndim == 2:
        return img.reshape(size, f, size, f).mean(axis=(1, 3))
    return img.reshape(size, f, size, f, img.shape[2]).mean(axis=(1, 3))


def grid_coordinates(resolution: int | tuple[int, int]) -> np.ndarray:
    """Pixel-center coordinates on [-0.5, 0.5]^2, shape (H*W, 2), row-major.

    Column index maps to the first coordinate, row index to the second.
    """
    if isinstance(resolution, int):
        h = w = resolution
    else:
        h, w = resolution
    xs = (np.arange(w) + 0.5) / w - 0.5
    ys = (np.arange(h) + 0.5) / h - 0.5
    xx, yy = np.meshgrid(xs, ys)
    return np.column_stack([xx.ravel(), yy.ravel()])


def image_to_dataset(img: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Coordinates and per-pixel targets (N, channels) for fitting."""
    coords = grid_coordinates(img.shape[:2])
    targets = img.reshape(img.shape[0] * img.shape[1], -1)
    return coords, targets


def psnr(pred: np.ndarray, target: np.ndarray) -> float:
    mse = float(np.mean((np.asarray(pred) - np.asarray(target)) ** 2))
    if mse == 0.0:
        return math.inf
    return -10.0 * math.log10(mse)


def ssim(a: np.ndarray, b: np.ndarray, window: int = 8) -> float:
    """Single-scale structural similarity with a moving-average window.

    Logging metric only; the acceptance thresholds are all PSNR-based.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape:
        raise ValueError("shape mismatch")
    c1, c2 = (0.01) ** 2, (0.03) ** 2
    mu_a = uniform_filter(a, size=window)
    mu_b = uniform_filter(b, size=window)
    var_a = uniform_filter(a * a, size=window) - mu_a**2
    var_b = uniform_filter(b * b, size=window) - mu_b**2
    cov = uniform_filter(a * b, size=window) - mu_a * mu_b
    s = ((2 * mu_a * mu_b + c1) * (2 * cov + c2)) / (
        (mu_a**2 + mu_b**2 + c1) * (var_a + var_b + c2)
    )
    return float(np.mean(s))
