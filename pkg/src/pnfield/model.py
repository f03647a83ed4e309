"""The band-confined coordinate network and its exact expansion oracle.

A model is an ensemble of orientation branches.  Each branch owns, per
term k, a shell encoding pinned at the term's exact lower band limit and a
chain encoding drawn from (0, delta_k); the chain stages are combined by
bias-free complex linear maps and elementwise products, so frequencies add
and every term provably stays inside its declared subband:

    Z_1 = C_1(x)
    Z_k = C_k(x) * (Z_{k-1} W_k^T)          elementwise complex product
    t_k = Re( (S_k(x) * (Z_k T_k^T)) O_k^T ) * gain_k
    y   = sum over branches and terms of t_k

where C_k / S_k are the chain / shell encodings.  The carrier is the
complex exponential rather than a real sinusoid with phase: products of
real sinusoids would generate difference frequencies below the lower band
limit, while complex products add frequencies exactly.  The real part is
taken only at the readout.

Because the whole network is a polynomial in the encodings, distributing
the linear maps over the encoding atoms rewrites any (small) model as an
explicit finite list of (frequency, coefficient) pairs; that expansion is
the brute-force oracle used to verify both values and band confinement.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .subband import Direction, Norm, Subband, contains_batch, otimes
from .tiling import (
    DEFAULT_RADIAL_HI,
    DEFAULT_RADIAL_LO,
    Fan,
    Scheme,
    Tiling,
    TilingSpec,
    make_tiling,
    sample_frequency,
)

__all__ = [
    "ComplexBatch",
    "Encoding",
    "BranchSpec",
    "Branch",
    "PNFModel",
    "ModelConfig",
    "BasisExpansion",
    "ForwardResult",
    "encode",
    "encode_freqs",
    "init_model",
    "model_from_branch_specs",
    "forward_terms",
    "term_band",
    "expand_to_basis",
    "eval_expansion",
    "default_image_config",
    "EXPANSION_MERGE_TOL",
]

EXPANSION_MERGE_TOL = 1e-9  # cycles; below any spacing the samplers can produce


@dataclass(frozen=True)
class ComplexBatch:
    """Batch of unit-modulus (or attenuated) complex features, shape (batch, width)."""

    z: np.ndarray

    def __post_init__(self) -> None:
        if self.z.dtype != np.complex128 or self.z.ndim != 2:
            raise ValueError("ComplexBatch wraps a 2-d complex128 array")

    @property
    def re(self) -> np.ndarray:
        return self.z.real

    @property
    def im(self) -> np.ndarray:
        return self.z.imag

    @property
    def shape(self) -> tuple[int, int]:
        return self.z.shape


@dataclass(frozen=True)
class Encoding:
    """Fixed frequency rows (width x input_dim, cycles per unit) plus their band."""

    freqs: np.ndarray
    band: Subband

    def __post_init__(self) -> None:
        f = np.ascontiguousarray(np.asarray(self.freqs, dtype=float))
        object.__setattr__(self, "freqs", f)
        if f.ndim != 2 or f.shape[1] != self.band.dim:
            raise ValueError("freqs must have shape (width, band dimension)")
        if not contains_batch(self.band, f, tol=1e-12).all():
            raise ValueError("every encoding frequency must lie in its subband")

    @property
    def width(self) -> int:
        return self.freqs.shape[0]


def encode_freqs(freqs: np.ndarray, x: np.ndarray) -> np.ndarray:
    """exp(2*pi*i * freqs . x) for each point/frequency pair, complex (batch, width)."""
    phase = (2.0 * math.pi) * (np.asarray(x, dtype=float) @ freqs.T)
    out = np.empty(phase.shape, dtype=np.complex128)
    np.cos(phase, out=out.real)
    np.sin(phase, out=out.imag)
    return out


def encode(e: Encoding, x: np.ndarray) -> ComplexBatch:
    """Evaluate the encoding at coordinates x of shape (batch, input_dim)."""
    x = np.asarray(x, dtype=float)
    if x.ndim != 2 or x.shape[1] != e.freqs.shape[1]:
        raise ValueError(f"x must have shape (batch, {e.freqs.shape[1]})")
    return ComplexBatch(encode_freqs(e.freqs, x))


@dataclass(frozen=True)
class BranchSpec:
    """Declared structure of one orientation branch.

    ``term_bands`` lists the (lo_k, hi_k) band of each output term in
    cycles per unit.  Chain stage widths are derived so that the shared
    chain Z_k spans (0, hi_k - lo_k) and the shell multiplication lands the
    term exactly on (lo_k, hi_k): delta_k = (hi_k - lo_k) - (hi_{k-1} -
    lo_{k-1}).  That derivation requires the band widths to be
    nondecreasing.
    """

    orientation_index: int
    dir: Direction
    half_angle: float
    norm_p: Norm
    region: tuple[int, int] | None
    term_bands: tuple[tuple[float, float], ...]
    hidden: int

    def __post_init__(self) -> None:
        bands = tuple((float(a), float(b)) for a, b in self.term_bands)
        object.__setattr__(self, "term_bands", bands)
        if self.hidden < 1:
            raise ValueError("hidden width must be >= 1")
        if not bands:
            raise ValueError("need at least one term band")
        los = [b[0] for b in bands]
        his = [b[1] for b in bands]
        if any(lo >= hi for lo, hi in bands):
            raise ValueError("each term band needs lo < hi")
        if any(a > b for a, b in zip(los, los[1:])) or any(a > b for a, b in zip(his, his[1:])):
            raise ValueError("term band edges must be nondecreasing")
        widths = [hi - lo for lo, hi in bands]
        if any(a > b + 1e-12 for a, b in zip(widths, widths[1:])):
            raise ValueError(
                "term band widths must be nondecreasing (chain stage widths would be negative)"
            )

    @property
    def n_terms(self) -> int:
        return len(self.term_bands)

    @property
    def chain_deltas(self) -> tuple[float, ...]:
        widths = [hi - lo for lo, hi in self.term_bands]
        prev = [0.0] + widths[:-1]
        return tuple(max(w - p, 0.0) for w, p in zip(widths, prev))

    def _fan_band(self, lo: float, hi: float) -> Subband:
        return Subband(
            lo=lo,
            hi=hi,
            dir=self.dir,
            half_angle=self.half_angle,
            norm_p=self.norm_p,
            region=self.region,
        )

    def shell_band(self, k: int) -> Subband:
        """Zero-width band at the exact lower limit of term k (0-based)."""
        lo = self.term_bands[k][0]
        return self._fan_band(lo, lo)

    def chain_band(self, k: int) -> Subband:
        return self._fan_band(0.0, self.chain_deltas[k])

    def declared_band(self, k: int) -> Subband:
        """The (lo_k, hi_k) annulus of term k within this branch's fan."""
        lo, hi = self.term_bands[k]
        return self._fan_band(lo, hi)


@dataclass
class Branch:
    spec: BranchSpec
    shell_enc: list[Encoding]
    chain_enc: list[Encoding]
    chain_w: list[np.ndarray]  # (h, h) complex, for stages k = 2..K
    term_w: list[np.ndarray]  # (h, h) complex, one per term
    out_w: list[np.ndarray]  # (channels, h) complex, one per term

    def validate_shapes(self, channels: int) -> None:
        h = self.spec.hidden
        K = self.spec.n_terms
        assert len(self.shell_enc) == len(self.chain_enc) == K
        assert len(self.chain_w) == K - 1 and len(self.term_w) == K and len(self.out_w) == K
        for e in self.shell_enc + self.chain_enc:
            if e.width != h:
                raise ValueError("encoding width must equal the hidden width")
        for w in self.chain_w + self.term_w:
            if w.shape != (h, h):
                raise ValueError("chain/term weights must be (hidden, hidden)")
        for w in self.out_w:
            if w.shape != (channels, h):
                raise ValueError("output weights must be (channels, hidden)")


@dataclass(frozen=True)
class ModelConfig:
    """Everything needed to rebuild a model's structure deterministically."""

    tiling: TilingSpec
    fan_selection: str | tuple[int, ...] = "all"  # "all", "half", or orientation indices
    hidden: int = 12
    channels: int = 1
    seed: int = 0
    input_dim: int = 2

    def select_fans(self, t: Tiling) -> list[Fan]:
        sel = self.fan_selection
        if sel == "all":
            return list(t.fans)
        if sel == "half":
            # one fan per conjugate-redundant orientation: for the
            # rectangular grid the odd construction indices tile the half
            # turn exactly; for the circular grid the first half turn does.
            if t.spec.scheme is Scheme.RECTANGULAR:
                return [f for f in t.fans if f.index % 2 == 1]
            return [f for f in t.fans if f.index <= t.spec.orientations_m]
        chosen = [f for f in t.fans if f.index in set(sel)]
        if len(chosen) != len(set(sel)):
            have = {f.index for f in t.fans}
            raise ValueError(f"unknown fan indices {sorted(set(sel) - have)}")
        return chosen


@dataclass
class PNFModel:
    branches: list[Branch]
    input_dim: int
    channels: int
    config: ModelConfig | None = None
    gains: dict[tuple[int, int], float] = field(default_factory=dict)
    frozen: set[tuple[int, int]] = field(default_factory=set)

    def __post_init__(self) -> None:
        for b in self.branches:
            b.validate_shapes(self.channels)

    def gain(self, j: int, k: int) -> float:
        return self.gains.get((j, k), 1.0)

    def term_keys(self) -> list[tuple[int, int]]:
        return [(j, k) for j, b in enumerate(self.branches) for k in range(b.spec.n_terms)]

    def parameters(self):
        """Yield (name, complex array) for every trainable weight, stable order."""
        for j, b in enumerate(self.branches):
            for k, w in enumerate(b.chain_w):
                yield f"b{j}.chain{k + 1}", w
            for k, w in enumerate(b.term_w):
                yield f"b{j}.term{k}", w
            for k, w in enumerate(b.out_w):
                yield f"b{j}.out{k}", w

    @property
    def parameter_count(self) -> int:
        """Real parameter count (complex entries count twice)."""
        return sum(2 * w.size for _, w in self.parameters())

    def frozen_params_of(self, j: int, k: int) -> list[str]:
        """Parameter names owned by term (j, k): its chain stage, term, and output maps."""
        names = [f"b{j}.term{k}", f"b{j}.out{k}"]
        if k >= 1:
            names.append(f"b{j}.chain{k}")
        return names

    def frozen_param_names(self) -> set[str]:
        out: set[str] = set()
        for j, k in self.frozen:
            out.update(self.frozen_params_of(j, k))
        return out


def _sample_encoding(
    band: Subband, width: int, rng: np.random.Generator, anchor_dc: bool = False
) -> Encoding:
    freqs = sample_frequency(band, width, rng)
    if anchor_dc and band.lo == 0.0:
        # pin one atom at zero frequency so constants are exactly representable
        freqs[0, :] = 0.0
    return Encoding(freqs=freqs, band=band)


def model_from_branch_specs(
    specs: list[BranchSpec],
    channels: int,
    rng: np.random.Generator,
    config: ModelConfig | None = None,
    input_dim: int | None = None,
) -> PNFModel:
    """Sample encodings and initialise weights for the given branch layout.

    Complex weights start uniform in [-1/sqrt(h), 1/sqrt(h)] per real and
    imaginary part, which keeps products of unit-modulus activations from
    exploding through the chain.
    """
    if not specs:
        raise ValueError("need at least one branch")
    dim = input_dim if input_dim is not None else specs[0].dir.dim
    branches = []
    for spec in specs:
        if spec.dir.dim != dim:
            raise ValueError("all branches must share the input dimension")
        h = spec.hidden
        shell_enc = [_sample_encoding(spec.shell_band(k), h, rng) for k in range(spec.n_terms)]
        chain_enc = [
            _sample_encoding(spec.chain_band(k), h, rng, anchor_dc=True)
            for k in range(spec.n_terms)
        ]
        bound = 1.0 / math.sqrt(h)

        def w(shape):
            return (
                rng.uniform(-bound, bound, size=shape)
                + 1j * rng.uniform(-bound, bound, size=shape)
            ).astype(np.complex128)

        branches.append(
            Branch(
                spec=spec,
                shell_enc=shell_enc,
                chain_enc=chain_enc,
                chain_w=[w((h, h)) for _ in range(spec.n_terms - 1)],
                term_w=[w((h, h)) for _ in range(spec.n_terms)],
                out_w=[w((channels, h)) for _ in range(spec.n_terms)],
            )
        )
    return PNFModel(branches=branches, input_dim=dim, channels=channels, config=config)


def branch_specs_from_tiling(config: ModelConfig, t: Tiling) -> list[BranchSpec]:
    B = t.spec.bandwidth_B
    bands = tuple((lo * B, hi * B) for lo, hi in zip(t.spec.radial_lo, t.spec.radial_hi))
    specs = []
    for f in config.select_fans(t):
        specs.append(
            BranchSpec(
                orientation_index=f.index,
                dir=f.dir,
                half_angle=f.half_angle,
                norm_p=f.norm_p,
                region=f.region,
                term_bands=bands,
                hidden=config.hidden,
            )
        )
    return specs


def init_model(config: ModelConfig, rng: np.random.Generator | None = None) -> PNFModel:
    """Build a model from a tiling-backed configuration; deterministic under seed."""
    if rng is None:
        rng = np.random.default_rng(config.seed)
    t = make_tiling(config.tiling)
    specs = branch_specs_from_tiling(config, t)
    return model_from_branch_specs(specs, config.channels, rng, config=config)


def default_image_config(
    hidden: int = 36,
    channels: int = 3,
    bandwidth: float = 64.0,
    orientations: int = 8,
    seed: int = 0,
    fan_selection: str | tuple[int, ...] = "all",
) -> ModelConfig:
    """Rectangular-tiling image model with the standard overlapping shells.

    The default hidden width is chosen so the full 14-fan, 4-term RGB model
    carries roughly 0.27M real parameters.
    """
    spec = TilingSpec(
        scheme=Scheme.RECTANGULAR,
        bandwidth_B=bandwidth,
        orientations_m=orientations,
        radial_lo=DEFAULT_RADIAL_LO,
        radial_hi=DEFAULT_RADIAL_HI,
        seed=seed,
    )
    return ModelConfig(
        tiling=spec,
        fan_selection=fan_selection,
        hidden=hidden,
        channels=channels,
        seed=seed,
    )


# ---------------------------------------------------------------------------
# Forward evaluation
# ---------------------------------------------------------------------------


@dataclass
class ForwardResult:
    terms: dict[tuple[int, int], np.ndarray]  # (batch, channels) per term, gains applied
    total: np.ndarray  # (batch, channels)


def branch_encoding_arrays(
    b: Branch, x: np.ndarray
) -> tuple[list[np.ndarray], list[np.ndarray]]:
    """Chain and shell encoding values at x (cached by callers across steps)."""
    chains = [encode_freqs(e.freqs, x) for e in b.chain_enc]
    shells = [encode_freqs(e.freqs, x) for e in b.shell_enc]
    return chains, shells


def branch_forward(
    b: Branch,
    chains: list[np.ndarray],
    shells: list[np.ndarray],
    out_w: list[np.ndarray] | None = None,
) -> tuple[list[np.ndarray], list[np.ndarray], list[np.ndarray]]:
    """Forward pass of one branch; returns (Z, U, raw term outputs).

    Raw term outputs carry no gains; callers apply them.  Z and U are kept
    for the backward pass.
    """
    K = b.spec.n_terms
    ow = b.out_w if out_w is None else out_w
    Z: list[np.ndarray] = [chains[0]]
    for k in range(1, K):
        Z.append(chains[k] * (Z[k - 1] @ b.chain_w[k - 1].T))
    U = [shells[k] * (Z[k] @ b.term_w[k].T) for k in range(K)]
    t = [np.ascontiguousarray((U[k] @ ow[k].T).real) for k in range(K)]
    return Z, U, t


def forward_terms(
    m: PNFModel,
    x: np.ndarray,
    encodings: dict[int, tuple[list[np.ndarray], list[np.ndarray]]] | None = None,
    term_scale: dict[tuple[int, int], float] | None = None,
) -> ForwardResult:
    """Evaluate the model at coordinates x, returning every term and the total.

    ``encodings`` lets callers reuse (or substitute, e.g. attenuate)
    precomputed encoding values; ``term_scale`` multiplies individual terms
    on top of the model gains.
    """
    x = np.asarray(x, dtype=float)
    if x.ndim != 2 or x.shape[1] != m.input_dim:
        raise ValueError(f"x must have shape (batch, {m.input_dim})")
    n = x.shape[0]
    total = np.zeros((n, m.channels))
    terms: dict[tuple[int, int], np.ndarray] = {}
    for j, b in enumerate(m.branches):
        chains, shells = (
            branch_encoding_arrays(b, x) if encodings is None else encodings[j]
        )
        _, _, raw = branch_forward(b, chains, shells)
        for k in range(b.spec.n_terms):
            scale = m.gain(j, k)
            if term_scale is not None:
                scale *= term_scale.get((j, k), 1.0)
            tk = raw[k] if scale == 1.0 else raw[k] * scale
            terms[(j, k)] = tk
            total += tk
    return ForwardResult(terms=terms, total=total)


def term_band(m: PNFModel, j: int, k: int) -> Subband:
    """Band guaranteed to contain term (j, k), computed through the product rule.

    For L-inf branches this equals the declared (lo_k, hi_k) exactly; for
    L2 branches the lower limit additionally carries the
    sqrt(cos(2*half_angle)) factor from the product rule.
    """
    spec = m.branches[j].spec
    band = spec.shell_band(k)
    for stage in range(k + 1):
        band = otimes(band, spec.chain_band(stage))
    return band


# ---------------------------------------------------------------------------
# Exact basis expansion (the oracle)
# ---------------------------------------------------------------------------


@dataclass
class BasisExpansion:
    """Explicit finite list of (frequency, per-channel coefficient) atoms per term."""

    terms: dict[tuple[int, int], list[tuple[np.ndarray, np.ndarray]]]
    input_dim: int
    channels: int

    @property
    def n_atoms(self) -> int:
        return sum(len(v) for v in self.terms.values())


def _freq_key(f: np.ndarray) -> tuple[int, ...]:
    return tuple(int(v) for v in np.round(f / EXPANSION_MERGE_TOL))


def _merge_linear(
    weight_row: np.ndarray,
    base_freq: np.ndarray,
    unit_atoms: list[dict[tuple[int, ...], tuple[np.ndarray, complex]]],
) -> dict[tuple[int, ...], tuple[np.ndarray, complex]]:
    """Atoms of base_encoding_unit * sum_v weight_row[v] * unit_v."""
    out: dict[tuple[int, ...], tuple[np.ndarray, complex]] = {}
    for v, atoms in enumerate(unit_atoms):
        w = weight_row[v]
        if w == 0:
            continue
        for f, c in atoms.values():
            nf = base_freq + f
            key = _freq_key(nf)
            if key in out:
                out[key] = (out[key][0], out[key][1] + w * c)
            else:
                out[key] = (nf, w * c)
    return out


def expand_to_basis(m: PNFModel, cap: int = 1_000_000) -> BasisExpansion:
    """Distribute every linear map and product over the encoding atoms.

    Frequencies add under elementwise products and coefficients multiply;
    near-duplicate frequencies (within 1e-9 cycles) merge by coefficient
    addition.  Refuses up front when the projected atom count
    (sum over terms of h^(k+2)) exceeds ``cap``.
    """
    projected = 0
    for b in m.branches:
        h = b.spec.hidden
        for k in range(b.spec.n_terms):
            projected += h ** (k + 3)
    if projected > cap:
        raise ValueError(
            f"projected expansion size {projected} exceeds the cap of {cap} atoms; "
            "expansion is intended for small models"
        )

    terms: dict[tuple[int, int], list[tuple[np.ndarray, np.ndarray]]] = {}
    for j, b in enumerate(m.branches):
        h = b.spec.hidden
        K = b.spec.n_terms
        # per-unit atom dictionaries for the running chain Z_k
        z_atoms = [
            {_freq_key(f): (f.copy(), 1.0 + 0.0j)} for f in b.chain_enc[0].freqs
        ]
        for k in range(K):
            if k > 0:
                z_atoms = [
                    _merge_linear(b.chain_w[k - 1][u], b.chain_enc[k].freqs[u], z_atoms)
                    for u in range(h)
                ]
            u_atoms = [
                _merge_linear(b.term_w[k][u], b.shell_enc[k].freqs[u], z_atoms)
                for u in range(h)
            ]
            gain = m.gain(j, k)
            collected: dict[tuple[int, ...], tuple[np.ndarray, np.ndarray]] = {}
            for u in range(h):
                ow = b.out_w[k][:, u] * gain
                for f, c in u_atoms[u].values():
                    key = _freq_key(f)
                    if key in collected:
                        collected[key][1][:] += ow * c
                    else:
                        collected[key] = (f, ow * c)
            terms[(j, k)] = [(f, coeff) for f, coeff in collected.values()]
    return BasisExpansion(terms=terms, input_dim=m.input_dim, channels=m.channels)


def eval_expansion(
    e: BasisExpansion,
    x: np.ndarray,
    term: tuple[int, int] | None = None,
    attenuation: Callable[[np.ndarray], np.ndarray] | None = None,
) -> np.ndarray:
    """Re(sum of coeff * exp(2*pi*i freq . x)), shape (batch, channels).

    ``attenuation(freqs) -> (n_atoms,)`` optionally scales each atom's
    coefficient (used by the scale-space oracle).
    """
    x = np.asarray(x, dtype=float)
    if x.ndim != 2 or x.shape[1] != e.input_dim:
        raise ValueError(f"x must have shape (batch, {e.input_dim})")
    out = np.zeros((x.shape[0], e.channels), dtype=np.complex128)
    keys = [term] if term is not None else list(e.terms.keys())
    for key in keys:
        atoms = e.terms[key]
        if not atoms:
            continue
        freqs = np.stack([f for f, _ in atoms])
        coeffs = np.stack([c for _, c in atoms])
        if attenuation is not None:
            coeffs = coeffs * np.asarray(attenuation(freqs))[:, None]
        phases = encode_freqs(freqs, x)
        out += phases @ coeffs
    return out.real
