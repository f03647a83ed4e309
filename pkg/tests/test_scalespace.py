import math

import numpy as np
import pytest

from pnfield.model import (
    BranchSpec,
    eval_expansion,
    expand_to_basis,
    forward_terms,
    model_from_branch_specs,
)
from pnfield.scalespace import (
    atom_attenuation,
    correction_term,
    gaussian_blur_oracle,
    integrated_encoding,
    scale_query,
    scale_render,
    validate_sigma,
)
from pnfield.subband import Direction, Norm
from tests.test_model import rect_branch_spec, tiny_model
from tests.test_train import grid_coords


class TestValidateSigma:
    def test_asymmetric_rejected(self):
        with pytest.raises(ValueError, match="symmetric"):
            validate_sigma(np.array([[1.0, 0.5], [0.0, 1.0]]), 2)

    def test_negative_rejected(self):
        with pytest.raises(ValueError, match="semidefinite"):
            validate_sigma(np.array([[-1.0, 0.0], [0.0, 1.0]]), 2)

    def test_zero_ok(self):
        validate_sigma(np.zeros((2, 2)), 2)


class TestIntegratedEncoding:
    def test_sigma_zero_identity(self):
        m = tiny_model(hidden=3)
        e = m.branches[0].chain_enc[0]
        x = np.random.default_rng(0).uniform(-0.5, 0.5, (9, 2))
        from pnfield.model import encode

        plain = encode(e, x)
        integ = integrated_encoding(e, x, np.zeros((2, 2)))
        assert np.array_equal(plain.z, integ.z)

    def test_zero_frequency_unattenuated(self):
        sigma = 5.0 * np.eye(2)
        att = atom_attenuation(np.zeros((1, 2)), sigma)
        assert att[0] == 1.0

    def test_closed_form_1d(self):
        # 1 cycle per unit under sigma = 1/(2 pi)^2 attenuates by exp(-1/2)
        sigma = np.array([[1.0 / (2 * math.pi) ** 2]])
        att = atom_attenuation(np.array([[1.0]]), sigma)
        assert att[0] == pytest.approx(math.exp(-0.5), rel=1e-14)

    def test_monotone_attenuation_under_psd_order(self):
        rng = np.random.default_rng(1)
        freqs = rng.uniform(-8, 8, size=(40, 2))
        s1 = np.array([[0.01, 0.002], [0.002, 0.02]])
        extra = rng.standard_normal((2, 2))
        s2 = s1 + 0.05 * (extra @ extra.T)  # s2 - s1 is PSD
        a1 = atom_attenuation(freqs, s1)
        a2 = atom_attenuation(freqs, s2)
        assert np.all(a2 <= a1 + 1e-15)


class TestCorrectionTerm:
    def test_sigma_zero_is_one(self):
        m = tiny_model(hidden=2)
        assert correction_term(m.branches[0], 1, np.zeros((2, 2))) == 1.0

    def test_single_factor_term_is_one(self):
        # first term with lo = 0: the shell radius is 0, leaving one
        # effective factor and no cross pairs
        m = tiny_model(hidden=2, term_bands=((0.0, 4.0), (2.0, 8.0)))
        sigma = 0.3 * np.eye(2)
        assert correction_term(m.branches[0], 0, sigma) == 1.0

    def test_two_factor_hand_value(self):
        m = tiny_model(hidden=2, term_bands=((2.0, 6.0),))
        s2 = 0.01
        sigma = s2 * np.eye(2)
        # factors: shell radius 2 and chain half-width 2 -> ordered pair sum 2*(2*2)
        want = math.exp(-((2 * math.pi) ** 2) * s2 * 2.0 * 2.0)
        got = correction_term(m.branches[0], 0, sigma)
        assert got == pytest.approx(want, rel=1e-12)


class TestScaleQuery:
    def test_sigma_zero_matches_forward(self):
        m = tiny_model(hidden=3, term_bands=((0.0, 4.0), (2.0, 8.0)))
        x = grid_coords(12)
        a = forward_terms(m, x).total
        b = scale_query(m, x, np.zeros((2, 2))).total
        assert np.max(np.abs(a - b)) <= 1e-12

    def test_single_atom_exact_convolution(self):
        # one term with lo = 0 and a single unit: no interference error, so
        # the query equals the analytically blurred sinusoid exactly
        spec = rect_branch_spec(((0.0, 6.0),), hidden=1)
        m = model_from_branch_specs([spec], 1, np.random.default_rng(3))
        b = m.branches[0]
        b.chain_enc[0].freqs[:] = np.array([[0.7, 3.3]])  # nonzero atom, in fan
        f = b.chain_enc[0].freqs[0] + b.shell_enc[0].freqs[0]
        x = grid_coords(16)
        sigma = np.array([[0.004, 0.001], [0.001, 0.003]])
        got = scale_query(m, x, sigma).total
        coeff = (b.out_w[0][0, 0] * b.term_w[0][0, 0]).conj()  # conj irrelevant to modulus
        att = atom_attenuation(f[None, :], sigma)[0]
        plain = forward_terms(m, x).total
        assert np.max(np.abs(got - att * plain)) <= 1e-12
        assert correction_term(b, 0, sigma) == 1.0
        assert abs(coeff) > 0  # guard: the atom actually contributes

    def test_naive_query_matches_attenuated_expansion_oracle(self):
        # with corrections off, the query must equal evaluating the
        # expansion with every atom attenuated by the product of its
        # factors' attenuations; path-tracked expansion reproduces that
        m = tiny_model(hidden=3, term_bands=((0.0, 4.0), (2.0, 8.0)), seed=6)
        x = grid_coords(12)
        sigma = np.array([[0.002, 0.0], [0.0, 0.004]])
        got = scale_query(m, x, sigma, apply_correction=False).total
        want = _eval_factor_attenuated(m, x, sigma)
        rel = np.abs(got - want) / (1.0 + np.abs(want))
        assert np.max(rel) <= 1e-9

    def test_correction_direction_and_monotonicity(self):
        # co-oriented factors make the naive substitution under-attenuate,
        # so the correction must lie in (0, 1] and shrink as sigma grows
        m = tiny_model(hidden=3, term_bands=((2.0, 6.0),), seed=8)
        b = m.branches[0]
        last = 1.0
        for s2 in (0.0, 0.0005, 0.002, 0.008):
            a = correction_term(b, 0, s2 * np.eye(2))
            assert 0.0 < a <= last
            last = a

    def test_correction_matches_cross_terms_for_on_axis_factors(self):
        # when the factors sit exactly on the branch direction at their
        # representative radii, the correction equals the true missing
        # cross-term factor and the corrected query is exact
        spec = rect_branch_spec(((2.0, 6.0),), hidden=1, theta=0.0)
        m = model_from_branch_specs([spec], 1, np.random.default_rng(1))
        b = m.branches[0]
        d = b.spec.dir.as_array()
        b.shell_enc[0].freqs[:] = 2.0 * d
        b.chain_enc[0].freqs[:] = 2.0 * d  # delta/2 = 2, exactly the representative radius
        x = grid_coords(16)
        sigma = 0.003 * np.eye(2)
        f_total = b.shell_enc[0].freqs[0] + b.chain_enc[0].freqs[0]
        truth_att = atom_attenuation(f_total[None], sigma)[0]
        got = scale_query(m, x, sigma).total
        want = truth_att * forward_terms(m, x).total
        assert np.max(np.abs(got - want)) <= 1e-12

    def test_non_psd_rejected(self):
        m = tiny_model(hidden=2)
        with pytest.raises(ValueError):
            scale_query(m, grid_coords(4), np.array([[1.0, 2.0], [2.0, 1.0]]))


def _eval_factor_attenuated(m, x, sigma):
    """Oracle: expansion with per-path factor attenuation (no merging across
    paths with different factorizations)."""
    out = np.zeros((x.shape[0], m.channels))
    for b in m.branches:
        K = b.spec.n_terms
        h = b.spec.hidden
        # enumerate paths through the chain for each term
        for k in range(K):
            # path = (chain indices c_0..c_k per stage, unit trace u_1..u_k)
            # build recursively: value contribution per final unit
            paths = [((ci,), b.chain_enc[0].freqs[ci]) for ci in range(h)]
            # chain stages 1..k multiply by chain_w and new encoding
            for stage in range(1, k + 1):
                new_paths = []
                for trace, freq in paths:
                    for u in range(h):
                        new_paths.append(
                            (trace + (u,), freq + b.chain_enc[stage].freqs[u])
                        )
                paths = new_paths
            for trace, freq in paths:
                # coefficient along this trace
                coeff = np.ones(1, dtype=complex)
                for stage in range(1, k + 1):
                    coeff = coeff * b.chain_w[stage - 1][trace[stage], trace[stage - 1]]
                # attenuation of every factor on the path
                att = atom_attenuation(b.chain_enc[0].freqs[trace[0]][None], sigma)[0]
                for stage in range(1, k + 1):
                    att *= atom_attenuation(
                        b.chain_enc[stage].freqs[trace[stage]][None], sigma
                    )[0]
                last = trace[-1]
                for u in range(h):
                    f_total = freq + b.shell_enc[k].freqs[u]
                    a_shell = atom_attenuation(b.shell_enc[k].freqs[u][None], sigma)[0]
                    c = coeff[0] * b.term_w[k][u, last] * att * a_shell
                    phase = np.exp(2j * math.pi * (x @ f_total))
                    for ch in range(m.channels):
                        out[:, ch] += (b.out_w[k][ch, u] * c * phase).real
    return out


class TestScaleRender:
    def test_matches_pointwise_query(self):
        m = tiny_model(hidden=2, seed=9)
        sigma = 0.001 * np.eye(2)
        r = scale_render(m, 16, sigma, chunk_rows=5)
        q = scale_query(m, grid_coords(16), sigma).total.reshape(16, 16, 1)
        assert np.max(np.abs(r - q)) <= 1e-14

    def test_blur_oracle_reduces_energy(self):
        rng = np.random.default_rng(0)
        img = rng.uniform(0, 1, (32, 32))
        blurred = gaussian_blur_oracle(img, 2.0)
        assert np.var(blurred) < np.var(img)
        assert blurred.shape == img.shape

    def test_blur_oracle_preserves_constants(self):
        img = np.full((16, 16), 0.37)
        assert np.max(np.abs(gaussian_blur_oracle(img, 3.0) - 0.37)) <= 1e-12
