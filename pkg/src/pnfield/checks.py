"""Self-contained property battery behind the ``check`` command.

Each check returns (name, passed, detail).  The suite covers the load
bearing guarantees: product closure of both subband families, region
scale invariance, tiling coverage, unit-modulus encodings, the
forward-vs-expansion oracle with band confinement, gradient correctness,
a scalar Adam step, the FFT round trip and Parseval identity, the
zero-covariance scale-space identity, and the Gaussian atom product
rules.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .model import (
    eval_expansion,
    expand_to_basis,
    forward_terms,
    model_from_branch_specs,
    term_band,
)
from .scalespace import scale_query
from .spectral import fft2, ifft2
from .subband import (
    Direction,
    GaussianAtom,
    Norm,
    Subband,
    consistent_region_of,
    contains,
    contains_batch,
    eval_atom,
    gabor_product,
    otimes_l2,
    otimes_linf,
    rbf_product,
)
from .tiling import (
    Scheme,
    TilingSpec,
    make_rect,
    sample_frequency,
    validate_tiling,
)
from .train import AdamState, TrainConfig, adam_step, grad_check

__all__ = ["CheckResult", "run_all_checks"]


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str


def _tiny_model(seed=0, hidden=3, bands=((0.0, 4.0), (2.0, 8.0))):
    from .model import BranchSpec

    spec = BranchSpec(
        orientation_index=1,
        dir=Direction.from_angle(math.pi / 16),
        half_angle=math.pi / 16,
        norm_p=Norm.LINF,
        region=(1, 1),
        term_bands=bands,
        hidden=hidden,
    )
    return model_from_branch_specs([spec], 1, np.random.default_rng(seed))


def check_closure_l2(rng) -> CheckResult:
    n = 20_000
    worst = 0
    for half in (math.pi / 16, math.pi / 8):
        d = Direction.from_angle(rng.uniform(0, 2 * math.pi))
        s1 = Subband(1.0, 3.0, d, half, Norm.L2)
        s2 = Subband(0.5, 2.0, d, half, Norm.L2)
        w = sample_frequency(s1, n, rng) + sample_frequency(s2, n, rng)
        worst += int(np.sum(~contains_batch(otimes_l2(s1, s2), w)))
    return CheckResult("subband closure (L2)", worst == 0, f"{worst} violations")


def check_closure_linf(rng) -> CheckResult:
    worst = 0
    n = 10_000
    for axis in (0, 1):
        for sign in (1, -1):
            base = np.zeros(2)
            base[axis] = sign
            d = Direction(tuple(base))
            s1 = Subband(1.0, 3.0, d, math.pi / 8, Norm.LINF, region=(axis, sign))
            s2 = Subband(0.5, 2.0, d, math.pi / 8, Norm.LINF, region=(axis, sign))
            w = sample_frequency(s1, n, rng) + sample_frequency(s2, n, rng)
            worst += int(np.sum(~contains_batch(otimes_linf(s1, s2), w)))
    return CheckResult("subband closure (L-inf)", worst == 0, f"{worst} violations")


def check_region_scale_invariance(rng) -> CheckResult:
    w = rng.uniform(-5, 5, size=(5_000, 2))
    w = w[np.max(np.abs(w), axis=1) > 1e-9]
    scales = rng.uniform(1e-3, 1e3, size=len(w))
    bad = sum(
        consistent_region_of(v) != consistent_region_of(v * s)
        for v, s in zip(w, scales)
    )
    return CheckResult("consistent-region scale invariance", bad == 0, f"{bad} mismatches")


def check_tiling_coverage(rng) -> CheckResult:
    spec = TilingSpec(Scheme.RECTANGULAR, 64.0, 8, (0.0, 1 / 16, 1 / 8, 1 / 4),
                      (1 / 8, 1 / 4, 1 / 2, 1.0), seed=int(rng.integers(1 << 31)))
    report = validate_tiling(make_rect(spec), n_samples=50_000)
    ok = report.coverage >= 0.99 and report.ok
    return CheckResult(
        "rectangular tiling coverage",
        ok,
        f"coverage {report.coverage:.4f}, {report.closure_failures} closure failures",
    )


def check_encode_unit_modulus(rng) -> CheckResult:
    m = _tiny_model(seed=int(rng.integers(1 << 31)))
    x = rng.uniform(-0.5, 0.5, size=(200, 2))
    from .model import branch_encoding_arrays

    worst = 0.0
    for b in m.branches:
        chains, shells = branch_encoding_arrays(b, x)
        for z in chains + shells:
            worst = max(worst, float(np.max(np.abs(np.abs(z) - 1.0))))
    return CheckResult("encoding unit modulus", worst <= 1e-12, f"max deviation {worst:.2e}")


def check_expansion_oracle(rng) -> CheckResult:
    m = _tiny_model(seed=int(rng.integers(1 << 31)))
    x = rng.uniform(-0.5, 0.5, size=(256, 2))
    got = forward_terms(m, x).total
    want = eval_expansion(expand_to_basis(m), x)
    rel = float(np.max(np.abs(got - want) / (1.0 + np.abs(got))))
    return CheckResult("expansion-vs-forward oracle", rel <= 1e-9, f"max rel err {rel:.2e}")


def check_expansion_confinement(rng) -> CheckResult:
    m = _tiny_model(seed=int(rng.integers(1 << 31)))
    e = expand_to_basis(m)
    bad = 0
    for (j, k), atoms in e.terms.items():
        band = term_band(m, j, k)
        bad += sum(not contains(band, f, tol=1e-9) for f, _ in atoms)
    return CheckResult("expansion band confinement", bad == 0, f"{bad} escaped atoms")


def check_gradients(rng) -> CheckResult:
    m = _tiny_model(seed=int(rng.integers(1 << 31)))
    x = rng.uniform(-0.5, 0.5, size=(24, 2))
    t = rng.uniform(0, 1, size=(24, 1))
    report = grad_check(m, x, t, eps=1e-6)
    return CheckResult(
        "gradient check vs central differences",
        report.max_rel_err <= 1e-5,
        f"max rel err {report.max_rel_err:.2e} at {report.worst_param}",
    )


def check_adam_scalar(rng) -> CheckResult:
    m = _tiny_model(hidden=1, bands=((0.0, 4.0),))
    before = {n: w.copy() for n, w in m.parameters()}
    grads = {n: np.ones_like(w) * (1 + 1j) for n, w in m.parameters()}
    cfg = TrainConfig(steps=1, lr=1e-3)
    adam_step(m, grads, AdamState.for_model(m), cfg)
    want = -1e-3 / (1.0 + 1e-8)
    worst = 0.0
    for n, w in m.parameters():
        d = w - before[n]
        worst = max(worst, float(np.max(np.abs(d.real - want))), float(np.max(np.abs(d.imag - want))))
    return CheckResult("Adam scalar step", worst <= 1e-15, f"max deviation {worst:.2e}")


def check_fft_roundtrip(rng) -> CheckResult:
    g = rng.standard_normal((64, 64))
    err = float(np.max(np.abs(ifft2(fft2(g)) - g)))
    return CheckResult("FFT round trip", err <= 1e-10, f"max err {err:.2e}")


def check_parseval(rng) -> CheckResult:
    g = rng.standard_normal((32, 32))
    lhs = float(np.sum(np.abs(fft2(g)) ** 2) / g.size)
    rhs = float(np.sum(g * g))
    rel = abs(lhs - rhs) / rhs
    return CheckResult("Parseval identity", rel <= 1e-10, f"rel err {rel:.2e}")


def check_scale_identity(rng) -> CheckResult:
    m = _tiny_model(seed=int(rng.integers(1 << 31)))
    x = rng.uniform(-0.5, 0.5, size=(64, 2))
    a = forward_terms(m, x).total
    b = scale_query(m, x, np.zeros((2, 2))).total
    err = float(np.max(np.abs(a - b)))
    return CheckResult("zero-covariance scale identity", err <= 1e-12, f"max err {err:.2e}")


def check_atom_products(rng) -> CheckResult:
    x = rng.uniform(-2, 2, size=(100, 2))
    worst = 0.0
    for _ in range(200):
        def atom(radial):
            return GaussianAtom(
                amplitude=complex(rng.normal(), rng.normal()),
                gamma=float(rng.uniform(0.2, 3.0)),
                mu=tuple(rng.uniform(-1, 1, 2)),
                omega=(0.0, 0.0) if radial else tuple(rng.uniform(-5, 5, 2)),
            )

        for radial, op in ((True, rbf_product), (False, gabor_product)):
            a1, a2 = atom(radial), atom(radial)
            want = eval_atom(a1, x) * eval_atom(a2, x)
            got = eval_atom(op(a1, a2), x)
            denom = np.maximum(np.abs(want), 1e-30)
            worst = max(worst, float(np.max(np.abs(got - want) / denom)))
    return CheckResult("Gaussian atom product identities", worst <= 1e-12, f"max rel err {worst:.2e}")


def run_all_checks(seed: int = 0) -> list[CheckResult]:
    rng = np.random.default_rng(seed)
    checks = [
        check_closure_l2,
        check_closure_linf,
        check_region_scale_invariance,
        check_tiling_coverage,
        check_encode_unit_modulus,
        check_expansion_oracle,
        check_expansion_confinement,
        check_gradients,
        check_adam_scalar,
        check_fft_roundtrip,
        check_parseval,
        check_scale_identity,
        check_atom_products,
    ]
    return [c(rng) for c in checks]
