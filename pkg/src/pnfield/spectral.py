"""Grid rendering, radix-2 FFT, band-energy verification, and pyramid export.

This is the empirical side of the band-confinement story: render each term
on a power-of-two grid, take its discrete spectrum, and measure how much
energy falls outside the term's declared band.  Term frequencies are
continuous, so a rectangular window would leak badly; the default is a
periodic Hann window whose 3-bin kernel is absorbed by a small guard
margin (in bins) when classifying in-band versus out-of-band.

The exact, leakage-free form of the same statement lives in the expansion
oracle (every expansion atom inside the term band); this module is the
measurement instrument for models too large to expand.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .images import write_image
from .model import PNFModel, forward_terms, term_band
from .subband import Subband, contains_batch

__all__ = [
    "GridSpec",
    "SpectrumEntry",
    "render_grid",
    "RenderResult",
    "fft2",
    "ifft2",
    "fft1d",
    "hann2d",
    "band_energy",
    "band_energy_of_grid",
    "pyramid_export",
]


def _is_pow2(n: int) -> bool:
    return n >= 1 and (n & (n - 1)) == 0


@dataclass(frozen=True)
class GridSpec:
    """Square sampling grid over [-0.5, 0.5]^2; resolution a power of two >= 8."""

    resolution: int

    def __post_init__(self) -> None:
        r = self.resolution
        if r < 8 or not _is_pow2(r):
            raise ValueError(f"resolution must be a power of two >= 8, got {r}")

    def coordinates(self) -> np.ndarray:
        from .images import grid_coordinates

        return grid_coordinates(self.resolution)


@dataclass
class RenderResult:
    terms: dict[tuple[int, int], np.ndarray]  # (H, W, C) per term
    total: np.ndarray  # (H, W, C)


def render_grid(
    m: PNFModel,
    g: GridSpec,
    terms: list[tuple[int, int]] | None = None,
    max_resolution: int = 2048,
    chunk_rows: int = 64,
) -> RenderResult:
    """Evaluate every term (or a selection) on the full grid, chunked by rows."""
    n = g.resolution
    if n > max_resolution:
        raise ValueError(
            f"resolution {n} exceeds the configured cap {max_resolution}"
        )
    coords = g.coordinates()
    want = set(terms) if terms is not None else set(m.term_keys())
    out = {
        key: np.zeros((n, n, m.channels)) for key in want
    }
    total = np.zeros((n, n, m.channels))
    rows_per_chunk = max(1, chunk_rows)
    for r0 in range(0, n, rows_per_chunk):
        r1 = min(n, r0 + rows_per_chunk)
        sl = slice(r0 * n, r1 * n)
        res = forward_terms(m, coords[sl])
        total[r0:r1] = res.total.reshape(r1 - r0, n, m.channels)
        for key in want:
            out[key][r0:r1] = res.terms[key].reshape(r1 - r0, n, m.channels)
    return RenderResult(terms=out, total=total)


# ---------------------------------------------------------------------------
# Radix-2 FFT (decimation in time, iterative, vectorised over rows)
# ---------------------------------------------------------------------------


def _bit_reverse_indices(n: int) -> np.ndarray:
    bits = n.bit_length() - 1
    idx = np.arange(n)
    rev = np.zeros(n, dtype=np.int64)
    for _ in range(bits):
        rev = (rev << 1) | (idx & 1)
        idx >>= 1
    return rev


def fft1d(x: np.ndarray, inverse: bool = False) -> np.ndarray:
    """Radix-2 FFT along the last axis; length must be a power of two."""
    x = np.asarray(x, dtype=np.complex128)
    n = x.shape[-1]
    if not _is_pow2(n):
        raise ValueError(f"FFT length must be a power of two, got {n}")
    out = x[..., _bit_reverse_indices(n)].copy()
    sign = 1.0 if inverse else -1.0
    size = 2
    while size <= n:
        half = size // 2
        tw = np.exp(sign * 2j * math.pi * np.arange(half) / size)
        blocks = out.reshape(*out.shape[:-1], n // size, size)
        even = blocks[..., :half].copy()
        odd = blocks[..., half:] * tw
        blocks[..., :half] = even + odd
        blocks[..., half:] = even - odd
        size *= 2
    if inverse:
        out /= n
    return out


def fft2(grid: np.ndarray) -> np.ndarray:
    """Separable 2-d DFT of a (H, W) array with power-of-two sides."""
    g = np.asarray(grid)
    if g.ndim != 2:
        raise ValueError("fft2 expects a 2-d array")
    step1 = fft1d(g.astype(np.complex128))
    return fft1d(step1.T).T


def ifft2(spec: np.ndarray) -> np.ndarray:
    s = np.asarray(spec, dtype=np.complex128)
    step1 = fft1d(s, inverse=True)
    return fft1d(step1.T, inverse=True).T


def hann2d(n: int) -> np.ndarray:
    """Periodic Hann window, separable; its DFT kernel is exactly 3 bins wide."""
    w = 0.5 * (1.0 - np.cos(2.0 * math.pi * np.arange(n) / n))
    return np.outer(w, w)


def _bin_frequencies(n: int) -> np.ndarray:
    """Frequency (cycles per unit) of every DFT bin on the unit domain, (n*n, 2)."""
    f = np.arange(n)
    f = np.where(f < n // 2, f, f - n)
    fy, fx = np.meshgrid(f, f, indexing="ij")
    # grid rows advance the second coordinate, columns the first
    return np.column_stack([fx.ravel(), fy.ravel()]).astype(float)


def _dilate_wrap(mask: np.ndarray, margin: int) -> np.ndarray:
    if margin <= 0:
        return mask
    out = mask.copy()
    for dx in range(-margin, margin + 1):
        for dy in range(-margin, margin + 1):
            if dx == 0 and dy == 0:
                continue
            out |= np.roll(mask, (dy, dx), axis=(0, 1))
    return out


@dataclass
class SpectrumEntry:
    term: tuple[int, int]
    in_fraction: float
    out_fraction: float
    peak_out: float
    total_energy: float
    window: str
    margin_bins: int
    degenerate: bool  # True when the out-of-band region is empty


def band_energy_of_grid(
    grid: np.ndarray,
    band: Subband,
    window: str = "hann",
    margin_bins: int = 2,
    term: tuple[int, int] = (-1, -1),
) -> SpectrumEntry:
    """Classify the grid's spectral energy against ``band`` (plus mirror).

    The output field is real, so each atom appears together with its
    conjugate at -w; a bin counts as in-band when either it or its mirror
    lies inside the band, dilated by ``margin_bins`` (chessboard metric,
    wrapping) to absorb the window kernel.
    """
    g = np.asarray(grid, dtype=float)
    if g.ndim == 3:
        g = g.sum(axis=2)
    n = g.shape[0]
    if window == "hann":
        g = g * hann2d(n)
    elif window not in (None, "none"):
        raise ValueError(f"unknown window {window!r}")
    spec = fft2(g)
    power = np.abs(spec) ** 2
    freqs = _bin_frequencies(n)
    inband = contains_batch(band, freqs, tol=1e-12) | contains_batch(band, -freqs, tol=1e-12)
    mask = _dilate_wrap(inband.reshape(n, n), margin_bins)
    total = float(power.sum())
    if total == 0.0:
        return SpectrumEntry(term, 1.0, 0.0, 0.0, 0.0, window or "none", margin_bins, False)
    degenerate = bool(mask.all())
    e_in = float(power[mask].sum())
    e_out = float(power[~mask].sum())
    peak = float(np.sqrt(power[~mask].max())) if not degenerate else 0.0
    return SpectrumEntry(
        term=term,
        in_fraction=e_in / total,
        out_fraction=e_out / total,
        peak_out=peak,
        total_energy=total,
        window=window or "none",
        margin_bins=margin_bins,
        degenerate=degenerate,
    )


def band_energy(
    m: PNFModel,
    g: GridSpec,
    j: int,
    k: int,
    window: str = "hann",
    margin_bins: int = 2,
    render: RenderResult | None = None,
) -> SpectrumEntry:
    """Band-energy report for term (j, k) rendered on grid ``g``."""
    if render is None:
        render = render_grid(m, g, terms=[(j, k)])
    band = term_band(m, j, k)
    return band_energy_of_grid(
        render.terms[(j, k)], band, window=window, margin_bins=margin_bins, term=(j, k)
    )


def pyramid_export(m: PNFModel, g: GridSpec, path) -> list[Path]:
    """Write per-level residuals and coarse-to-fine partial sums as images.

    Level k collects all orientation branches' term k.  Residual and
    cumulative images are min/max normalised for display; the constants go
    to ``normalization.txt`` so the originals can be recovered.  Returns
    the written file paths.
    """
    out_dir = Path(path)
    out_dir.mkdir(parents=True, exist_ok=True)
    render = render_grid(m, g)
    n_levels = max(b.spec.n_terms for b in m.branches)
    written: list[Path] = []
    sidecar = ["image min max"]
    cumulative = np.zeros_like(render.total)

    def emit(name: str, img: np.ndarray) -> None:
        lo, hi = float(img.min()), float(img.max())
        scale = hi - lo if hi > lo else 1.0
        norm = (img - lo) / scale
        target = out_dir / f"{name}.{'ppm' if img.shape[2] == 3 else 'pgm'}"
        write_image(target, norm if img.shape[2] == 3 else norm[:, :, 0])
        sidecar.append(f"{target.name} {lo!r} {hi!r}")
        written.append(target)

    for k in range(n_levels):
        residual = np.zeros_like(render.total)
        for (j, kk), img in render.terms.items():
            if kk == k:
                residual += img
        cumulative = cumulative + residual
        emit(f"residual_{k}", residual)
        emit(f"cumulative_{k}", cumulative)
    sidecar_path = out_dir / "normalization.txt"
    sidecar_path.write_text("\n".join(sidecar) + "\n")
    written.append(sidecar_path)
    return written
