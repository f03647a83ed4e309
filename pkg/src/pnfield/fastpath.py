"""Allocation-free training engine for tensor-product coordinate grids.

The generic forward/backward in :mod:`train` materialises every encoding
over the full coordinate set and allocates fresh activation arrays per
step; on machines where DRAM bandwidth, not FLOPs, is the ceiling that
dominates the step time.  For image fitting the coordinates form a grid,
and a grid encoding factors exactly:

    exp(2 pi i (fx x_c + fy y_r)) = Ex[c, u] * Ey[r, u]

so a (rows x W, h) encoding tile can be rebuilt from two small per-axis
tables with one in-cache broadcast multiply.  This engine walks the grid
in row tiles sized to stay cache resident, rebuilds encodings on the fly,
and runs the forward and backward passes into preallocated scratch, so
the only full-grid arrays that ever touch memory are the (N, C) totals
and the gradient of the loss.

Gradients match :func:`pnfield.train.backward` up to floating-point
reassociation (tile-order sums, factored-phase rounding); the fit loop
uses this engine automatically when its coordinates form a grid.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .model import PNFModel

__all__ = ["detect_grid", "GridEngine"]


def detect_grid(coords: np.ndarray) -> tuple[np.ndarray, np.ndarray] | None:
    """Recover (xs, ys) if coords is the row-major product grid of them."""
    if coords.ndim != 2 or coords.shape[1] != 2 or coords.shape[0] == 0:
        return None
    xs = np.unique(coords[:, 0])
    ys = np.unique(coords[:, 1])
    if xs.size * ys.size != coords.shape[0]:
        return None
    want_x = np.tile(xs, ys.size)
    want_y = np.repeat(ys, xs.size)
    if np.array_equal(coords[:, 0], want_x) and np.array_equal(coords[:, 1], want_y):
        return xs, ys
    return None


def _axis_table(freqs: np.ndarray, axis_coords: np.ndarray, axis: int) -> np.ndarray:
    phase = (2.0 * math.pi) * np.outer(axis_coords, freqs[:, axis])
    out = np.empty(phase.shape, dtype=np.complex128)
    np.cos(phase, out=out.real)
    np.sin(phase, out=out.imag)
    return out


@dataclass
class _BranchTables:
    chain_x: list[np.ndarray]
    chain_y: list[np.ndarray]
    shell_x: list[np.ndarray]
    shell_y: list[np.ndarray]


class GridEngine:
    """Fused loss/gradient evaluation for one model on one fixed grid."""

    def __init__(
        self,
        m: PNFModel,
        xs: np.ndarray,
        ys: np.ndarray,
        tile_rows: int | None = None,
    ) -> None:
        hs = {b.spec.hidden for b in m.branches}
        ks = {b.spec.n_terms for b in m.branches}
        if len(hs) != 1 or len(ks) != 1 or m.input_dim != 2:
            raise ValueError("grid engine needs 2-d input and uniform branch shape")
        self.m = m
        self.h = hs.pop()
        self.K = ks.pop()
        self.xs = np.asarray(xs, dtype=float)
        self.ys = np.asarray(ys, dtype=float)
        self.W = self.xs.size
        self.H = self.ys.size
        self.n = self.W * self.H
        if tile_rows is None:
            # keep the ~4K+6 live tile buffers around 4-6 MB total
            target_points = max(self.W, 262_144 // max(self.h, 1))
            tile_rows = max(1, target_points // self.W)
        self.tile_rows = min(tile_rows, self.H)

        self.tables = []
        for b in m.branches:
            self.tables.append(
                _BranchTables(
                    chain_x=[_axis_table(e.freqs, self.xs, 0) for e in b.chain_enc],
                    chain_y=[_axis_table(e.freqs, self.ys, 1) for e in b.chain_enc],
                    shell_x=[_axis_table(e.freqs, self.xs, 0) for e in b.shell_enc],
                    shell_y=[_axis_table(e.freqs, self.ys, 1) for e in b.shell_enc],
                )
            )

        t = self.tile_rows * self.W
        K, h, c = self.K, self.h, m.channels
        shape = (t, h)
        self._enc_c = [np.empty(shape, np.complex128) for _ in range(K)]
        self._enc_s = [np.empty(shape, np.complex128) for _ in range(K)]
        self._z = [np.empty(shape, np.complex128) for _ in range(K)]
        self._dz = [np.empty(shape, np.complex128) for _ in range(K)]
        self._p = np.empty(shape, np.complex128)
        self._u = np.empty(shape, np.complex128)
        self._s1 = np.empty(shape, np.complex128)
        self._s2 = np.empty(shape, np.complex128)
        self._tc = np.empty((t, c), np.complex128)

    # -- helpers ----------------------------------------------------------

    def _tiles(self):
        for r0 in range(0, self.H, self.tile_rows):
            r1 = min(self.H, r0 + self.tile_rows)
            yield r0, r1, slice(r0 * self.W, r1 * self.W)

    def _materialise(self, dst: np.ndarray, tab_y: np.ndarray, tab_x: np.ndarray,
                     r0: int, r1: int) -> np.ndarray:
        rows = r1 - r0
        view = dst[: rows * self.W]
        out3 = view.reshape(rows, self.W, self.h)
        np.multiply(tab_y[r0:r1, None, :], tab_x[None, :, :], out=out3)
        return view

    def _forward_tile(self, j: int, r0: int, r1: int, conj_ready: bool = False):
        """Chain forward for branch j on one tile; fills enc/z buffers.

        With ``conj_ready`` the chain encodings of stages >= 1 are
        conjugated in place right after use, as the backward pass expects.
        """
        b = self.m.branches[j]
        tabs = self.tables[j]
        rows = r1 - r0
        t = rows * self.W
        enc_c = [self._materialise(self._enc_c[k], tabs.chain_y[k], tabs.chain_x[k], r0, r1)
                 for k in range(self.K)]
        enc_s = [self._materialise(self._enc_s[k], tabs.shell_y[k], tabs.shell_x[k], r0, r1)
                 for k in range(self.K)]
        z = [buf[:t] for buf in self._z]
        np.copyto(z[0], enc_c[0])
        p = self._p[:t]
        for k in range(1, self.K):
            np.matmul(z[k - 1], b.chain_w[k - 1].T, out=p)
            np.multiply(enc_c[k], p, out=z[k])
            if conj_ready:
                np.conjugate(enc_c[k], out=enc_c[k])
        return enc_c, enc_s, z

    # -- public API --------------------------------------------------------

    def forward_total(self) -> np.ndarray:
        """Model output on the grid, shape (N, channels)."""
        m = self.m
        total = np.zeros((self.n, m.channels))
        for r0, r1, sl in self._tiles():
            t = (r1 - r0) * self.W
            p, u, tc = self._p[:t], self._u[:t], self._tc[:t]
            tile_total = total[sl]
            for j, b in enumerate(m.branches):
                _, enc_s, z = self._forward_tile(j, r0, r1)
                for k in range(self.K):
                    g = m.gain(j, k)
                    if g == 0.0:
                        continue
                    np.matmul(z[k], b.term_w[k].T, out=p)
                    np.multiply(enc_s[k], p, out=u)
                    np.matmul(u, b.out_w[k].T, out=tc)
                    tile_total += tc.real if g == 1.0 else g * tc.real
        return total

    def loss_and_grads(self, targets: np.ndarray) -> tuple[float, dict[str, np.ndarray]]:
        """Mean squared error and all weight gradients, two tiled passes."""
        m = self.m
        total = self.forward_total()
        diff = total - targets
        loss = float(np.mean(diff * diff))
        grad_out = (2.0 / diff.size) * diff

        grads: dict[str, np.ndarray] = {}
        acc: dict[tuple[int, str, int], np.ndarray] = {}
        for j, b in enumerate(m.branches):
            for k in range(self.K - 1):
                acc[(j, "chain", k)] = np.zeros_like(b.chain_w[k])
            for k in range(self.K):
                acc[(j, "term", k)] = np.zeros_like(b.term_w[k])
                acc[(j, "out", k)] = np.zeros_like(b.out_w[k])

        for j, b in enumerate(m.branches):
            gains = [m.gain(j, k) for k in range(self.K)]
            oc = [np.conj(b.out_w[k]) * gains[k] for k in range(self.K)]  # (C, h)
            wt_conj = [np.conj(b.term_w[k]) for k in range(self.K)]
            wc_conj = [np.conj(w) for w in b.chain_w]
            for r0, r1, sl in self._tiles():
                t = (r1 - r0) * self.W
                p, u, s1, s2 = self._p[:t], self._u[:t], self._s1[:t], self._s2[:t]
                gt = grad_out[sl]
                enc_c, enc_s, z = self._forward_tile(j, r0, r1, conj_ready=True)
                dz = [buf[:t] for buf in self._dz]
                for buf in dz:
                    buf[:] = 0
                for k in range(self.K):
                    if gains[k] == 0.0:
                        continue
                    np.matmul(z[k], b.term_w[k].T, out=p)
                    np.multiply(enc_s[k], p, out=u)
                    np.conjugate(u, out=u)
                    acc[(j, "out", k)] += gains[k] * (gt.T @ u)
                    np.conjugate(enc_s[k], out=enc_s[k])
                    np.matmul(gt, oc[k], out=s1)          # dU
                    np.multiply(s1, enc_s[k], out=s2)     # dV
                    np.matmul(s2, wt_conj[k], out=p)
                    dz[k] += p
                    np.conjugate(s2, out=s2)
                    acc[(j, "term", k)] += np.conj(s2.T @ z[k])
                for k in range(self.K - 1, 0, -1):
                    np.multiply(dz[k], enc_c[k], out=s1)  # dP (enc_c already conjugated)
                    np.matmul(s1, wc_conj[k - 1], out=p)
                    dz[k - 1] += p
                    np.conjugate(s1, out=s1)
                    acc[(j, "chain", k - 1)] += np.conj(s1.T @ z[k - 1])

        frozen = m.frozen_param_names()
        for (j, kind, k), g in acc.items():
            name = f"b{j}.{kind}{k + 1 if kind == 'chain' else k}"
            if name in frozen:
                g[:] = 0
            grads[name] = g
        return loss, grads
