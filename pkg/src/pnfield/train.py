"""Manual reverse-mode gradients, Adam, and the fitting loop.

The network has three primitive layers: the elementwise product with a
fixed encoding, the bias-free complex linear map, and the real readout.
For a real loss, gradients with respect to a complex weight are computed
on the two-channel real parametrisation (d/d re, d/d im) and carried as a
single complex array g = dL/d(re W) + i * dL/d(im W).  Under that
convention every primitive backpropagates through the conjugate of its
partner:

    C = A B          ->  gA = gC conj(B)^T,  gB = conj(A)^T gC
    U = E * V        ->  gV = gU * conj(E)
    y = Re(U)        ->  gU = dL/dy  (real, entering the real channel)

Adam then treats the real and imaginary channels as independent scalars,
which is exactly the float64 view of the complex weight arrays.

Frozen terms: term (j, k) owns its chain-stage map W_k (k >= 2), its term
map T_k, and its readout O_k.  Freezing a term zeroes those gradients and
skips their Adam update entirely, so the parameters stay bit-identical.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from typing import Iterable

import numpy as np

from .model import (
    Branch,
    PNFModel,
    branch_encoding_arrays,
    branch_forward,
    forward_terms,
)

__all__ = [
    "TrainConfig",
    "TrainLog",
    "AdamState",
    "GradCheckReport",
    "TrainingDiverged",
    "mse_loss",
    "backward",
    "grad_check",
    "adam_step",
    "fit",
    "select_terms",
    "set_term_control",
    "psnr",
]


class TrainingDiverged(RuntimeError):
    pass


def psnr(pred: np.ndarray, target: np.ndarray) -> float:
    """Peak signal-to-noise ratio in dB for signals on the [0, 1] scale."""
    mse = float(np.mean((np.asarray(pred) - np.asarray(target)) ** 2))
    if mse == 0.0:
        return math.inf
    return -10.0 * math.log10(mse)


def mse_loss(pred: np.ndarray, target: np.ndarray) -> float:
    pred = np.asarray(pred)
    target = np.asarray(target)
    if pred.shape != target.shape:
        raise ValueError(f"shape mismatch: {pred.shape} vs {target.shape}")
    return float(np.mean((pred - target) ** 2))


@dataclass
class TrainConfig:
    steps: int = 5000
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    batch: int | None = None  # None: full grid every step
    seed: int = 0
    loss: str = "mse"
    frozen_terms: tuple[tuple[int, int], ...] = ()
    term_gains: dict = field(default_factory=dict)
    log_every: int = 100  # metric cadence (PSNR on the training grid)
    checkpoint_every: int | None = None

    def __post_init__(self) -> None:
        if not (0.0 < self.beta1 < 1.0 and 0.0 < self.beta2 < 1.0):
            raise ValueError("Adam betas must lie in (0, 1)")
        if self.lr <= 0:
            raise ValueError("learning rate must be positive")
        if self.loss != "mse":
            raise ValueError(f"unsupported loss {self.loss!r}")


@dataclass
class TrainLog:
    losses: list[float] = field(default_factory=list)  # one entry per step
    psnr_steps: list[tuple[int, float]] = field(default_factory=list)
    ms_per_step: list[float] = field(default_factory=list)

    def loss_csv(self) -> str:
        """Deterministic portion of the log: step, loss, psnr (blank off-cadence)."""
        psnr_at = dict(self.psnr_steps)
        lines = ["step,loss,psnr"]
        for i, loss in enumerate(self.losses, start=1):
            p = psnr_at.get(i)
            lines.append(f"{i},{loss!r},{'' if p is None else repr(p)}")
        return "\n".join(lines) + "\n"

    def timing_csv(self) -> str:
        lines = ["step,ms_per_step"]
        for i, ms in enumerate(self.ms_per_step, start=1):
            lines.append(f"{i},{ms:.3f}")
        return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# Backward
# ---------------------------------------------------------------------------


def _branch_backward(
    b: Branch,
    chains: list[np.ndarray],
    shells: list[np.ndarray],
    Z: list[np.ndarray],
    U: list[np.ndarray],
    grad_out: np.ndarray,
    gains: list[float],
) -> dict[str, np.ndarray]:
    """Gradients of all weights of one branch given dL/dy (batch, channels)."""
    K = b.spec.n_terms
    d_chain = [None] * (K - 1)
    d_term = [None] * K
    d_out = [None] * K
    dZ: list[np.ndarray | None] = [None] * K
    for k in range(K):
        g = gains[k]
        if g == 0.0:
            d_term[k] = np.zeros_like(b.term_w[k])
            d_out[k] = np.zeros_like(b.out_w[k])
            continue
        G = grad_out if g == 1.0 else grad_out * g
        dU = G @ np.conj(b.out_w[k])
        d_out[k] = G.T @ np.conj(U[k])
        dV = dU * np.conj(shells[k])
        d_term[k] = dV.T @ np.conj(Z[k])
        contrib = dV @ np.conj(b.term_w[k])
        dZ[k] = contrib if dZ[k] is None else dZ[k] + contrib
    for k in range(K - 1, 0, -1):
        if dZ[k] is None:
            d_chain[k - 1] = np.zeros_like(b.chain_w[k - 1])
            continue
        dP = dZ[k] * np.conj(chains[k])
        d_chain[k - 1] = dP.T @ np.conj(Z[k - 1])
        back = dP @ np.conj(b.chain_w[k - 1])
        dZ[k - 1] = back if dZ[k - 1] is None else dZ[k - 1] + back
    grads: dict[str, np.ndarray] = {}
    for k in range(K - 1):
        grads[f"chain{k + 1}"] = d_chain[k]
    for k in range(K):
        grads[f"term{k}"] = d_term[k]
        grads[f"out{k}"] = d_out[k]
    return grads


def backward(
    m: PNFModel,
    x: np.ndarray,
    target: np.ndarray,
    encodings: dict[int, tuple[list[np.ndarray], list[np.ndarray]]] | None = None,
) -> tuple[float, dict[str, np.ndarray]]:
    """Loss and exact gradients of the mean squared error at coordinates x.

    Returns (loss, grads) with one complex array per trainable weight,
    keyed like :meth:`PNFModel.parameters`.  Frozen terms get zero
    gradients.
    """
    x = np.asarray(x, dtype=float)
    target = np.asarray(target, dtype=float)
    n, c = x.shape[0], m.channels
    if target.shape != (n, c):
        raise ValueError(f"target must have shape ({n}, {c}), got {target.shape}")

    per_branch = []
    total = np.zeros((n, c))
    for j, b in enumerate(m.branches):
        enc = branch_encoding_arrays(b, x) if encodings is None else encodings[j]
        chains, shells = enc
        Z, U, raw = branch_forward(b, chains, shells)
        gains = [m.gain(j, k) for k in range(b.spec.n_terms)]
        for k, r in enumerate(raw):
            total += r if gains[k] == 1.0 else r * gains[k]
        per_branch.append((b, chains, shells, Z, U, gains))

    diff = total - target
    loss = float(np.mean(diff * diff))
    if not math.isfinite(loss):
        raise TrainingDiverged(f"non-finite loss {loss}")
    grad_out = (2.0 / diff.size) * diff

    grads: dict[str, np.ndarray] = {}
    frozen = m.frozen_param_names()
    for j, (b, chains, shells, Z, U, gains) in enumerate(per_branch):
        bg = _branch_backward(b, chains, shells, Z, U, grad_out, gains)
        for local_name, g in bg.items():
            name = f"b{j}.{local_name}"
            if name in frozen:
                g = np.zeros_like(g)
            grads[name] = g
    return loss, grads


@dataclass
class GradCheckReport:
    max_rel_err: float
    mean_rel_err: float
    worst_param: str
    worst_index: tuple[int, ...]
    n_params: int


def grad_check(
    m: PNFModel, x: np.ndarray, target: np.ndarray, eps: float = 1e-6
) -> GradCheckReport:
    """Central-difference comparison against :func:`backward`, per parameter.

    Intended for small models (<= 1e4 parameters).  The relative error
    denominator is floored at 1e-4 so that parameters with vanishing
    gradients are judged on the absolute difference scale instead of
    amplified rounding noise.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    n_params = m.parameter_count
    if n_params > 10_000:
        raise ValueError(f"grad_check is for small models; got {n_params} parameters")
    _, grads = backward(m, x, target)

    def loss_now() -> float:
        return mse_loss(forward_terms(m, x).total, target)

    max_rel = 0.0
    sum_rel = 0.0
    count = 0
    worst = ("", ())
    for name, w in m.parameters():
        g_view = grads[name].view(np.float64)
        w_view = w.view(np.float64)
        it = np.nditer(w_view, flags=["multi_index"])
        for _ in it:
            idx = it.multi_index
            orig = w_view[idx]
            w_view[idx] = orig + eps
            lp = loss_now()
            w_view[idx] = orig - eps
            lm = loss_now()
            w_view[idx] = orig
            fd = (lp - lm) / (2.0 * eps)
            g = g_view[idx]
            rel = abs(fd - g) / max(abs(fd) + abs(g), 1e-4)
            sum_rel += rel
            count += 1
            if rel > max_rel:
                max_rel = rel
                worst = (name, idx)
    return GradCheckReport(
        max_rel_err=max_rel,
        mean_rel_err=sum_rel / max(count, 1),
        worst_param=worst[0],
        worst_index=worst[1],
        n_params=count,
    )


# ---------------------------------------------------------------------------
# Adam
# ---------------------------------------------------------------------------


@dataclass
class AdamState:
    step: int = 0
    m1: dict[str, np.ndarray] = field(default_factory=dict)
    m2: dict[str, np.ndarray] = field(default_factory=dict)

    @staticmethod
    def for_model(model: PNFModel) -> "AdamState":
        s = AdamState()
        for name, w in model.parameters():
            v = w.view(np.float64)
            s.m1[name] = np.zeros_like(v)
            s.m2[name] = np.zeros_like(v)
        return s


def adam_step(
    m: PNFModel,
    grads: dict[str, np.ndarray],
    state: AdamState,
    config: TrainConfig,
) -> AdamState:
    """Bias-corrected Adam update in place on every non-frozen parameter."""
    state.step += 1
    t = state.step
    b1, b2 = config.beta1, config.beta2
    c1 = 1.0 - b1**t
    c2 = 1.0 - b2**t
    frozen = m.frozen_param_names()
    for name, w in m.parameters():
        if name in frozen:
            continue
        g = grads[name].view(np.float64)
        m1, m2 = state.m1[name], state.m2[name]
        m1 *= b1
        m1 += (1.0 - b1) * g
        m2 *= b2
        m2 += (1.0 - b2) * g * g
        update = (m1 / c1) / (np.sqrt(m2 / c2) + config.eps)
        w.view(np.float64)[...] -= config.lr * update
    return state


# ---------------------------------------------------------------------------
# Fit loop and term controls
# ---------------------------------------------------------------------------


def fit(
    m: PNFModel,
    coords: np.ndarray,
    targets: np.ndarray,
    config: TrainConfig,
    checkpoint_cb=None,
) -> TrainLog:
    """Run the training loop: forward, loss, backward, Adam.

    Coordinates are expected inside [-0.5, 0.5]^n with real targets in
    (batch, channels) layout.  With ``config.batch`` unset the full
    coordinate set is used every step, making the loss deterministic;
    otherwise coordinate minibatches are drawn from ``config.seed``.
    Encodings over the full coordinate set are computed once and sliced,
    never re-evaluated.
    """
    coords = np.asarray(coords, dtype=float)
    targets = np.asarray(targets, dtype=float)
    if targets.ndim == 1:
        targets = targets[:, None]
    m.frozen.update(tuple(t) for t in config.frozen_terms)
    for key, g in config.term_gains.items():
        m.gains[tuple(key)] = float(g)

    encodings = {
        j: branch_encoding_arrays(b, coords) for j, b in enumerate(m.branches)
    }
    state = AdamState.for_model(m)
    log = TrainLog()
    rng = np.random.default_rng(config.seed)
    n = coords.shape[0]

    for step in range(1, config.steps + 1):
        tic = time.perf_counter()
        if config.batch is None or config.batch >= n:
            enc_step, tgt = encodings, targets
            xb = coords
        else:
            sel = rng.choice(n, size=config.batch, replace=False)
            enc_step = {
                j: (
                    [c[sel] for c in chains],
                    [s[sel] for s in shells],
                )
                for j, (chains, shells) in encodings.items()
            }
            tgt = targets[sel]
            xb = coords[sel]
        try:
            loss, grads = backward(m, xb, tgt, encodings=enc_step)
        except TrainingDiverged as exc:
            raise TrainingDiverged(
                f"{exc} at step {step}; check the band schedule and learning rate"
            ) from None
        adam_step(m, grads, state, config)
        log.losses.append(loss)
        log.ms_per_step.append((time.perf_counter() - tic) * 1e3)
        if step % config.log_every == 0 or step == config.steps:
            pred = forward_terms(m, coords, encodings=encodings).total
            log.psnr_steps.append((step, psnr(pred, targets)))
        if (
            checkpoint_cb is not None
            and config.checkpoint_every
            and step % config.checkpoint_every == 0
        ):
            checkpoint_cb(m, step)
    return log


def select_terms(
    m: PNFModel,
    terms: Iterable[tuple[int, int]] | None = None,
    orientation: int | None = None,
    lo_below: float | None = None,
    lo_at_least: float | None = None,
) -> list[tuple[int, int]]:
    """Resolve a term selector to explicit (branch, term) keys.

    Terms are addressable explicitly, by branch orientation index, or by
    their declared lower band limit (``lo_below`` / ``lo_at_least``).
    """
    keys = []
    explicit = {tuple(t) for t in terms} if terms is not None else None
    for j, b in enumerate(m.branches):
        for k in range(b.spec.n_terms):
            if explicit is not None and (j, k) not in explicit:
                continue
            if orientation is not None and b.spec.orientation_index != orientation:
                continue
            lo = b.spec.term_bands[k][0]
            if lo_below is not None and not lo < lo_below:
                continue
            if lo_at_least is not None and not lo >= lo_at_least:
                continue
            keys.append((j, k))
    return keys


def set_term_control(m: PNFModel, terms: Iterable[tuple[int, int]], action: str, gain: float = 1.0) -> PNFModel:
    """Freeze, unfreeze, or set the output gain of the selected terms.

    Subsequent fits and forward evaluations respect the control; gain 0
    removes a term from the output entirely.
    """
    keys = [tuple(t) for t in terms]
    if not keys:
        raise ValueError("empty term selector")
    valid = set(m.term_keys())
    unknown = [k for k in keys if k not in valid]
    if unknown:
        raise ValueError(f"unknown terms {unknown}")
    for key in keys:
        if action == "freeze":
            m.frozen.add(key)
        elif action == "unfreeze":
            m.frozen.discard(key)
        elif action == "gain":
            m.gains[key] = float(gain)
        else:
            raise ValueError(f"unknown action {action!r}")
    return m
