"""Frequency subbands and the algebra that makes band limits compose.

A subband is a sector of frequency space: a p-norm annulus (``lo <= |w|_p
<= hi``) intersected with an angular fan around a unit direction.  Products
of complex exponentials add their frequencies, so two subbands combine
under multiplication into a predictable third subband.  This module
implements that combination rule for the L2 norm (lower limit shrinks by
``sqrt(cos(2*half_angle))``) and for the L-inf norm restricted to a single
dimension-consistent region (limits add exactly), along with membership
tests, interval unions, and the closed-form products of Gaussian and
Gabor atoms.

Frequencies are stored in cycles per unit interval throughout; conversion
to radians happens only where a sinusoid is actually evaluated.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import NamedTuple

import numpy as np

__all__ = [
    "Norm",
    "Direction",
    "Subband",
    "GaussianAtom",
    "BandUnion",
    "contains",
    "contains_batch",
    "otimes",
    "otimes_l2",
    "otimes_linf",
    "union_band",
    "consistent_region_of",
    "rbf_product",
    "gabor_product",
    "eval_atom",
]

_UNIT_TOL = 1e-12


class Norm(Enum):
    """Which p-norm bounds the radial extent of a subband."""

    L2 = "l2"
    LINF = "linf"


@dataclass(frozen=True)
class Direction:
    """Unit vector giving the orientation of a fan in frequency space."""

    components: tuple[float, ...]

    def __post_init__(self) -> None:
        v = np.asarray(self.components, dtype=float)
        if v.ndim != 1 or v.size == 0:
            raise ValueError("direction must be a non-empty 1-d vector")
        n = float(np.linalg.norm(v))
        if abs(n - 1.0) > _UNIT_TOL:
            raise ValueError(f"direction must have unit norm, got |d| = {n!r}")
        object.__setattr__(self, "components", tuple(float(c) for c in v))

    @property
    def dim(self) -> int:
        return len(self.components)

    def as_array(self) -> np.ndarray:
        return np.asarray(self.components, dtype=float)

    @staticmethod
    def from_angle(theta: float) -> "Direction":
        """2-d direction (sin(theta), cos(theta)); theta measured from +y."""
        return Direction((math.sin(theta), math.cos(theta)))


# (axis index, sign) naming one of the 2n cones where the L-inf norm is
# realised by a fixed coordinate with fixed sign.
Region = tuple[int, int]


def consistent_region_of(omega) -> Region:
    """Region (axis, sign) whose coordinate realises |omega|_inf.

    Ties in the argmax are broken toward the lowest axis index so that
    boundary frequencies (|w_x| = |w_y|) map deterministically.
    """
    w = np.asarray(omega, dtype=float)
    if w.ndim != 1:
        raise ValueError("omega must be a 1-d vector")
    if not np.any(w != 0.0):
        raise ValueError("the zero vector has no consistent region")
    axis = int(np.argmax(np.abs(w)))  # argmax takes the first maximum
    sign = 1 if w[axis] > 0 else -1
    return (axis, sign)


@dataclass(frozen=True)
class Subband:
    """Sector of frequency space: p-norm annulus [lo, hi] within an angular fan.

    ``lo`` and ``hi`` are in cycles per unit interval.  The fan is the set
    of frequencies whose angle to ``dir`` is at most ``half_angle``
    (measured through the Euclidean inner product regardless of ``norm_p``).
    L-inf subbands must name the dimension-consistent ``region`` that is
    supposed to contain the whole fan; use :meth:`region_violation` to test
    that containment on the fan's extreme rays.
    """

    lo: float
    hi: float
    dir: Direction
    half_angle: float
    norm_p: Norm
    region: Region | None = None
    # cached cos(half_angle); computed once so membership tests agree bit-for-bit
    _cos_half: float = field(init=False, repr=False, compare=False, default=0.0)

    def __post_init__(self) -> None:
        if not (0.0 <= self.lo <= self.hi):
            raise ValueError(f"need 0 <= lo <= hi, got lo={self.lo}, hi={self.hi}")
        if not (0.0 < self.half_angle < math.pi / 4):
            raise ValueError(
                f"half_angle must lie in (0, pi/4) for product closure, got {self.half_angle}"
            )
        if self.norm_p is Norm.LINF:
            if self.region is None:
                raise ValueError("L-inf subbands must declare a consistent region")
            axis, sign = self.region
            if not (0 <= axis < self.dir.dim) or sign not in (-1, 1):
                raise ValueError(f"malformed region {self.region!r}")
        object.__setattr__(self, "_cos_half", math.cos(self.half_angle))

    @property
    def dim(self) -> int:
        return self.dir.dim

    def extreme_rays(self) -> list[np.ndarray]:
        """Unit directions on the angular boundary of the fan (1-d and 2-d)."""
        d = self.dir.as_array()
        if self.dim == 1:
            return [d]
        if self.dim != 2:
            raise NotImplementedError("extreme rays implemented for dimension <= 2")
        out = []
        for a in (-self.half_angle, self.half_angle):
            c, s = math.cos(a), math.sin(a)
            out.append(np.array([c * d[0] - s * d[1], s * d[0] + c * d[1]]))
        return out

    def region_violation(self) -> str | None:
        """Message describing how the fan escapes its region, or None if inside."""
        if self.norm_p is not Norm.LINF:
            return None
        assert self.region is not None
        rays = self.extreme_rays() + [self.dir.as_array()]
        for ray in rays:
            if consistent_region_of(ray) != self.region:
                return (
                    f"fan ray {tuple(round(float(r), 12) for r in ray)} lies in region "
                    f"{consistent_region_of(ray)}, not the declared {self.region}"
                )
            axis, _ = self.region
            mags = np.abs(ray)
            if np.any(np.delete(mags, axis) >= mags[axis]):
                return (
                    f"fan ray {tuple(round(float(r), 12) for r in ray)} touches a "
                    "diagonal of the declared region"
                )
        return None

    def straddles_angle(self, theta: float) -> bool:
        """True if the open fan interior contains the 2-d orientation ``theta``."""
        if self.dim != 2:
            return False
        probe = Direction.from_angle(theta).as_array()
        cosine = float(np.dot(probe, self.dir.as_array()))
        return cosine > self._cos_half


def _norm_of(w: np.ndarray, p: Norm) -> float:
    if p is Norm.L2:
        return float(np.linalg.norm(w))
    return float(np.max(np.abs(w)))


def contains(s: Subband, omega, tol: float = 0.0) -> bool:
    """Membership of a frequency vector in the subband.

    ``tol`` relaxes the three boundary comparisons; the zero vector is a
    member exactly when the band reaches down to lo = 0 (the angular
    condition is vacuous at the origin).
    """
    w = np.asarray(omega, dtype=float)
    if w.shape != (s.dim,):
        raise ValueError(f"omega has dimension {w.shape}, subband has {s.dim}")
    l2 = float(np.linalg.norm(w))
    if l2 == 0.0:
        return s.lo <= tol
    r = l2 if s.norm_p is Norm.L2 else float(np.max(np.abs(w)))
    if not (s.lo - tol <= r <= s.hi + tol):
        return False
    return float(np.dot(w, s.dir.as_array())) >= s._cos_half * l2 - tol


def contains_batch(s: Subband, omegas: np.ndarray, tol: float = 0.0) -> np.ndarray:
    """Vectorised :func:`contains` over rows of ``omegas`` (shape (n, dim))."""
    w = np.asarray(omegas, dtype=float)
    if w.ndim != 2 or w.shape[1] != s.dim:
        raise ValueError(f"expected shape (n, {s.dim}), got {w.shape}")
    l2 = np.linalg.norm(w, axis=1)
    r = l2 if s.norm_p is Norm.L2 else np.max(np.abs(w), axis=1)
    radial = (s.lo - tol <= r) & (r <= s.hi + tol)
    angular = w @ s.dir.as_array() >= s._cos_half * l2 - tol
    ok = radial & angular
    at_origin = l2 == 0.0
    if np.any(at_origin):
        ok = np.where(at_origin, s.lo <= tol, ok)
    return ok


def _check_cooriented(s1: Subband, s2: Subband, op: str) -> None:
    if s1.dim != s2.dim:
        raise ValueError(f"{op}: dimension mismatch {s1.dim} vs {s2.dim}")
    if s1.norm_p is not s2.norm_p:
        raise ValueError(f"{op}: mixed norms {s1.norm_p} vs {s2.norm_p}")
    d1, d2 = s1.dir.as_array(), s2.dir.as_array()
    if np.max(np.abs(d1 - d2)) > _UNIT_TOL:
        raise ValueError(f"{op}: orientations differ")
    if s1.half_angle != s2.half_angle:
        raise ValueError(f"{op}: half angles differ ({s1.half_angle} vs {s2.half_angle})")
    if s1.region != s2.region:
        raise ValueError(f"{op}: regions differ ({s1.region} vs {s2.region})")


def otimes_l2(s1: Subband, s2: Subband) -> Subband:
    """Band containing all products of atoms from two co-oriented L2 subbands.

    Upper limits add; the lower limit is sqrt(cos(2*half_angle)) times the
    sum of lower limits, which is where the half_angle < pi/4 precondition
    bites (cos(2*half_angle) must stay positive).
    """
    _check_cooriented(s1, s2, "otimes_l2")
    if s1.norm_p is not Norm.L2:
        raise ValueError("otimes_l2 requires L2 subbands")
    shrink = math.sqrt(math.cos(2.0 * s1.half_angle))
    return Subband(
        lo=shrink * (s1.lo + s2.lo),
        hi=s1.hi + s2.hi,
        dir=s1.dir,
        half_angle=s1.half_angle,
        norm_p=Norm.L2,
    )


def otimes_linf(s1: Subband, s2: Subband) -> Subband:
    """Product band for two L-inf subbands sharing one consistent region.

    Within a single region both limits add exactly.
    """
    _check_cooriented(s1, s2, "otimes_linf")
    if s1.norm_p is not Norm.LINF:
        raise ValueError("otimes_linf requires L-inf subbands")
    for s in (s1, s2):
        msg = s.region_violation()
        if msg is not None:
            raise ValueError(f"otimes_linf: {msg}")
    return Subband(
        lo=s1.lo + s2.lo,
        hi=s1.hi + s2.hi,
        dir=s1.dir,
        half_angle=s1.half_angle,
        norm_p=Norm.LINF,
        region=s1.region,
    )


def otimes(s1: Subband, s2: Subband) -> Subband:
    """Dispatch to the product rule matching the subbands' norm."""
    if s1.norm_p is Norm.L2:
        return otimes_l2(s1, s2)
    return otimes_linf(s1, s2)


class BandUnion(NamedTuple):
    band: Subband
    tight: bool  # False when the radial intervals leave a gap inside the hull


def union_band(s1: Subband, s2: Subband) -> BandUnion:
    """Interval hull of two co-oriented subbands.

    The hull is the tightest single subband containing both; ``tight`` is
    False when the inputs are radially disjoint, so the hull covers
    frequencies that belong to neither input.  Unions across orientations
    are represented as lists of subbands by callers, not merged here.
    """
    _check_cooriented(s1, s2, "union_band")
    gap = max(s1.lo, s2.lo) > min(s1.hi, s2.hi)
    band = Subband(
        lo=min(s1.lo, s2.lo),
        hi=max(s1.hi, s2.hi),
        dir=s1.dir,
        half_angle=s1.half_angle,
        norm_p=s1.norm_p,
        region=s1.region,
    )
    return BandUnion(band=band, tight=not gap)


# ---------------------------------------------------------------------------
# Gaussian / Gabor atom algebra
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class GaussianAtom:
    """amplitude * exp(-gamma/2 |x - mu|^2) * exp(i omega . x).

    ``omega`` is in radians per unit here (the atom algebra is
    self-contained and never mixes with the cycles-per-unit bookkeeping of
    :class:`Subband`).  An all-zero ``omega`` gives a plain radial atom.
    """

    amplitude: complex
    gamma: float
    mu: tuple[float, ...]
    omega: tuple[float, ...]

    def __post_init__(self) -> None:
        if not self.gamma > 0.0:
            raise ValueError(f"gamma must be positive, got {self.gamma}")
        mu = tuple(float(m) for m in np.atleast_1d(self.mu))
        om = tuple(float(o) for o in np.atleast_1d(self.omega))
        if len(mu) != len(om):
            raise ValueError("mu and omega must have the same dimension")
        object.__setattr__(self, "mu", mu)
        object.__setattr__(self, "omega", om)
        object.__setattr__(self, "amplitude", complex(self.amplitude))

    @property
    def dim(self) -> int:
        return len(self.mu)


def eval_atom(a: GaussianAtom, x: np.ndarray) -> np.ndarray:
    """Evaluate the atom at points x of shape (n, dim); returns complex (n,)."""
    pts = np.atleast_2d(np.asarray(x, dtype=float))
    mu = np.asarray(a.mu)
    om = np.asarray(a.omega)
    quad = np.sum((pts - mu) ** 2, axis=1)
    return a.amplitude * np.exp(-0.5 * a.gamma * quad + 1j * (pts @ om))


def rbf_product(a1: GaussianAtom, a2: GaussianAtom) -> GaussianAtom:
    """Pointwise product of two radial Gaussian atoms, again a single atom.

    gamma' = g1 + g2, mu' is the gamma-weighted mean, and the amplitude
    picks up exp(-(g1 g2)/(2 (g1+g2)) * |mu1 - mu2|^2).  The exponent uses
    the squared distance: that is the unique constant for which
    atom'(x) = a1(x) * a2(x) holds identically (complete the square in the
    two quadratics to verify).
    """
    if any(o != 0.0 for o in a1.omega) or any(o != 0.0 for o in a2.omega):
        raise ValueError("rbf_product expects pure radial atoms (omega = 0)")
    return gabor_product(a1, a2)


def gabor_product(a1: GaussianAtom, a2: GaussianAtom) -> GaussianAtom:
    """Pointwise product of two Gabor atoms.

    The Gaussian parts combine as in :func:`rbf_product`; the oscillation
    frequencies add.  Because the oscillation is referenced to the origin,
    no extra phase appears: the combined amplitude is exactly
    a1.amplitude * a2.amplitude * exp(-(g1 g2)/(2 g') |mu1 - mu2|^2).
    """
    if a1.dim != a2.dim:
        raise ValueError("atom dimensions differ")
    g1, g2 = a1.gamma, a2.gamma
    gp = g1 + g2
    mu1 = np.asarray(a1.mu)
    mu2 = np.asarray(a2.mu)
    mup = (g1 * mu1 + g2 * mu2) / gp
    cross = math.exp(-0.5 * (g1 * g2 / gp) * float(np.sum((mu1 - mu2) ** 2)))
    amp = a1.amplitude * a2.amplitude * cross
    omp = np.asarray(a1.omega) + np.asarray(a2.omega)
    return GaussianAtom(amplitude=amp, gamma=gp, mu=tuple(mup), omega=tuple(omp))
