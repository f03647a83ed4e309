"""Finite collections of subbands covering the frequency region of interest.

Two schemes are provided.  The circular tiling places ``2m`` fans of
half-angle ``pi/(2m)`` around the full circle under the L2 norm, so the
fans partition every annulus exactly.  The rectangular (pseudo-polar)
tiling works under the L-inf norm: ``2m`` fan centers step through the
upper half turn at ``pi/(2m)`` with fan half-angle ``pi/(2m)``, i.e. each
direction is covered twice (overlapping fans).  The two fans centered on
the diagonals pi/4 and 3*pi/4 are dropped because no L-inf fan may cross a
diagonal, and their neighbours are shrunk a hair so their extreme rays
stay strictly inside one dimension-consistent region.  Thanks to the
two-fold overlap the dropped fans leave only the diagonal rays themselves
uncovered.  The lower half turn is omitted: the fields built on these
tilings are real-valued, so every atom carries its conjugate mirror and a
half-turn of fans already reaches every orientation.

Radial shells are given as fractions of the bandwidth B and may overlap
(lower edge of shell k+1 below upper edge of shell k), which is the
default.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .subband import (
    Direction,
    Norm,
    Subband,
    consistent_region_of,
    contains_batch,
    otimes,
)

__all__ = [
    "Scheme",
    "TilingSpec",
    "Fan",
    "Tiling",
    "TilingReport",
    "make_circular",
    "make_rect",
    "make_tiling",
    "sample_frequency",
    "validate_tiling",
    "DEFAULT_RADIAL_LO",
    "DEFAULT_RADIAL_HI",
]

# Overlapping shell schedule used by the default image configurations.
DEFAULT_RADIAL_LO = (0.0, 1.0 / 16.0, 1.0 / 8.0, 1.0 / 4.0)
DEFAULT_RADIAL_HI = (1.0 / 8.0, 1.0 / 4.0, 1.0 / 2.0, 1.0)

_DIAGONALS = (math.pi / 4.0, 3.0 * math.pi / 4.0)
_CLIP = 1.0 - 1e-9  # relative shrink keeping extreme rays strictly off diagonals


class Scheme(Enum):
    CIRCULAR = "circular"
    RECTANGULAR = "rect"


@dataclass(frozen=True)
class TilingSpec:
    scheme: Scheme
    bandwidth_B: float
    orientations_m: int
    radial_lo: tuple[float, ...]
    radial_hi: tuple[float, ...]
    seed: int

    def __post_init__(self) -> None:
        object.__setattr__(self, "radial_lo", tuple(float(v) for v in self.radial_lo))
        object.__setattr__(self, "radial_hi", tuple(float(v) for v in self.radial_hi))
        if self.bandwidth_B <= 0:
            raise ValueError("bandwidth_B must be positive")
        lo, hi = self.radial_lo, self.radial_hi
        if len(lo) == 0 or len(lo) != len(hi):
            raise ValueError("radial_lo and radial_hi must be non-empty, equal-length lists")
        if any(a > b for a, b in zip(lo, lo[1:])) or any(a > b for a, b in zip(hi, hi[1:])):
            raise ValueError("radial shell edges must be nondecreasing")
        if any(a >= b for a, b in zip(lo, hi)):
            raise ValueError("each shell needs radial_lo[k] < radial_hi[k]")
        if hi[-1] > 1.0:
            raise ValueError("radial_hi must not exceed 1 (fractions of the bandwidth)")
        m = self.orientations_m
        # the fan width pi/m must stay below the pi/4 product-closure bound
        if m < 5:
            raise ValueError(
                f"orientations_m = {m} gives fan width pi/m >= pi/4, which breaks "
                "product closure; need m >= 5"
            )
        if self.scheme is Scheme.RECTANGULAR and m % 2 != 0:
            raise ValueError("rectangular tiling needs an even orientation count")


@dataclass(frozen=True)
class Fan:
    """One orientation of a tiling: everything but the radial extent."""

    index: int  # 1-based orientation index on the construction grid
    theta: float  # direction angle from +y
    dir: Direction
    half_angle: float
    norm_p: Norm
    region: tuple[int, int] | None


@dataclass(frozen=True)
class Tiling:
    spec: TilingSpec
    fans: tuple[Fan, ...]
    # subbands[i][j]: shell i of fan j (same order as fans)
    subbands: tuple[tuple[Subband, ...], ...]

    @property
    def all_subbands(self) -> list[Subband]:
        return [s for row in self.subbands for s in row]

    def shells_of(self, fan: Fan) -> tuple[Subband, ...]:
        j = self.fans.index(fan)
        return tuple(row[j] for row in self.subbands)


def _build(spec: TilingSpec, fans: list[Fan]) -> Tiling:
    B = spec.bandwidth_B
    rows = []
    for lo_f, hi_f in zip(spec.radial_lo, spec.radial_hi):
        row = tuple(
            Subband(
                lo=lo_f * B,
                hi=hi_f * B,
                dir=f.dir,
                half_angle=f.half_angle,
                norm_p=f.norm_p,
                region=f.region,
            )
            for f in fans
        )
        rows.append(row)
    return Tiling(spec=spec, fans=tuple(fans), subbands=tuple(rows))


def make_circular(spec: TilingSpec) -> Tiling:
    """2m exact-tiling L2 fans at angles j*pi/m, half-angle pi/(2m)."""
    if spec.scheme is not Scheme.CIRCULAR:
        raise ValueError("spec.scheme must be CIRCULAR")
    m = spec.orientations_m
    half = math.pi / (2 * m)
    fans = []
    for j in range(1, 2 * m + 1):
        theta = j * math.pi / m
        fans.append(
            Fan(
                index=j,
                theta=theta,
                dir=Direction.from_angle(theta),
                half_angle=half,
                norm_p=Norm.L2,
                region=None,
            )
        )
    return _build(spec, fans)


def make_rect(spec: TilingSpec) -> Tiling:
    """Pseudo-polar L-inf tiling of the half turn, two-fold overlapping fans.

    Fan centers sit at j*pi/(2m) for j = 1..2m with half-angle pi/(2m); the
    two fans centered on the diagonals (j = m/2 and j = 3m/2) are excluded
    and the four fans whose extreme ray would touch a diagonal are shrunk.
    """
    if spec.scheme is not Scheme.RECTANGULAR:
        raise ValueError("spec.scheme must be RECTANGULAR")
    m = spec.orientations_m
    step = math.pi / (2 * m)
    excluded = {m // 2, 3 * m // 2}  # fans centered on pi/4 and 3*pi/4
    fans = []
    for j in range(1, 2 * m + 1):
        if j in excluded:
            continue
        theta = j * step
        half = step
        # keep extreme rays strictly clear of the diagonals
        dist = min(abs(theta - d) for d in _DIAGONALS)
        if dist <= half:
            half = dist * _CLIP
        d = Direction.from_angle(theta)
        fans.append(
            Fan(
                index=j,
                theta=theta,
                dir=d,
                half_angle=half,
                norm_p=Norm.LINF,
                region=consistent_region_of(d.as_array()),
            )
        )
    if not fans:
        raise ValueError("no valid fans for this orientation count")
    return _build(spec, fans)


def make_tiling(spec: TilingSpec) -> Tiling:
    if spec.scheme is Scheme.CIRCULAR:
        return make_circular(spec)
    return make_rect(spec)


def _rotate(d: np.ndarray, angles: np.ndarray) -> np.ndarray:
    c, s = np.cos(angles), np.sin(angles)
    return np.stack([c * d[0] - s * d[1], s * d[0] + c * d[1]], axis=1)


def sample_frequency(s: Subband, count: int, rng: np.random.Generator) -> np.ndarray:
    """Draw ``count`` frequencies from the subband, shape (count, dim).

    The angle is uniform across the fan and the p-norm radius uniform in
    [lo, hi] (uniform in radius, not in area, so a shell with lo == hi
    lands exactly on the shell).  Every returned frequency is a member of
    ``s``.
    """
    if count < 1:
        raise ValueError("count must be >= 1")
    if s.half_angle <= 0.0:
        raise ValueError("degenerate fan")
    radius = rng.uniform(s.lo, s.hi, size=count)
    d = s.dir.as_array()
    if s.dim == 1:
        return (radius * d[0])[:, None]
    if s.dim != 2:
        raise NotImplementedError("sampling implemented for dimension <= 2")
    angles = rng.uniform(-s.half_angle, s.half_angle, size=count)
    units = _rotate(d, angles)
    if s.norm_p is Norm.LINF:
        units = units / np.max(np.abs(units), axis=1, keepdims=True)
    return radius[:, None] * units


@dataclass
class TilingReport:
    coverage: float
    n_samples: int
    closure_checks: int
    closure_failures: int
    violations: list[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return self.closure_failures == 0 and not self.violations


def coverage_of(
    subbands: list[Subband],
    bandwidth: float,
    norm_p: Norm,
    rng: np.random.Generator,
    n_samples: int = 100_000,
) -> float:
    """Monte-Carlo fraction of the target region reachable by the subbands.

    The target is the disk of radius B (L2) or the square [-B, B]^2
    (L-inf).  A frequency counts as covered when it or its mirror -w lies
    in some subband: the fields built on these tilings are real-valued, so
    each atom is accompanied by its conjugate and the two are
    interchangeable.
    """
    if not subbands:
        return 0.0
    dim = subbands[0].dim
    pts = rng.uniform(-bandwidth, bandwidth, size=(n_samples, dim))
    if norm_p is Norm.L2:
        keep = np.linalg.norm(pts, axis=1) <= bandwidth
        pts = pts[keep]
    if len(pts) == 0:
        return 0.0
    covered = np.zeros(len(pts), dtype=bool)
    for s in subbands:
        covered |= contains_batch(s, pts)
        covered |= contains_batch(s, -pts)
    return float(np.mean(covered))


def validate_tiling(t: Tiling, n_samples: int = 100_000, pairs_per_fan: int = 8) -> TilingReport:
    """Coverage scan, product-closure spot checks, and invariant audit."""
    rng = np.random.default_rng(t.spec.seed)
    violations: list[str] = []
    norm_p = Norm.L2 if t.spec.scheme is Scheme.CIRCULAR else Norm.LINF
    for i, row in enumerate(t.subbands):
        for s in row:
            msg = s.region_violation()
            if msg is not None:
                violations.append(f"shell {i}, fan at theta={s.dir.components}: {msg}")
            if s.dim == 2 and s.norm_p is Norm.LINF:
                for diag in _DIAGONALS:
                    if s.straddles_angle(diag) or s.straddles_angle(diag + math.pi):
                        violations.append(
                            f"shell {i}: fan straddles the diagonal at {diag:.6f} rad"
                        )

    cov = coverage_of(t.all_subbands, t.spec.bandwidth_B, norm_p, rng, n_samples)

    checks = failures = 0
    for row in t.subbands:
        for s in row:
            if s.lo == s.hi:
                continue
            w1 = sample_frequency(s, pairs_per_fan, rng)
            w2 = sample_frequency(s, pairs_per_fan, rng)
            try:
                prod = otimes(s, s)
            except ValueError as exc:
                # invariant breakage already recorded above; keep the report going
                violations.append(f"product rule inapplicable: {exc}")
                continue
            ok = contains_batch(prod, w1 + w2)
            checks += len(ok)
            failures += int(np.sum(~ok))
    return TilingReport(
        coverage=cov,
        n_samples=n_samples,
        closure_checks=checks,
        closure_failures=failures,
        violations=violations,
    )
