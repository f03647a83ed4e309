"""Command-line interface.

Commands:
  fit         train a model on an image per a config file, write checkpoint + logs
  render      evaluate a checkpoint on a grid and write the image
  decompose   write per-level residual and cumulative images (with sidecar scales)
  spectrum    write per-term band-energy report and the total output spectrum
  scalespace  render Gaussian-blurred queries at given sigmas without retraining
  expand      dump the exact atom expansion of a small checkpoint as CSV
  check       run the property battery; nonzero exit on any failure

Every command is a pure function of (config, input files, seed): identical
inputs produce byte-identical outputs, apart from the separate timing log.
"""

from __future__ import annotations

import argparse
import sys
import time
from pathlib import Path

import numpy as np


def _limit_threads(n: int) -> None:
    try:
        from threadpoolctl import threadpool_limits

        threadpool_limits(limits=max(1, n))
    except ImportError:  # env var fallback only helps before numpy loads
        pass


def _load_runtime():
    # imported lazily so --help stays fast
    from . import checkpoint, config, images, model, scalespace, spectral, train

    return checkpoint, config, images, model, scalespace, spectral, train


def cmd_fit(args) -> int:
    checkpoint, config, images, model, scalespace, spectral, train = _load_runtime()

    cfg = config.parse_config(args.config)
    if args.seed is not None:
        from dataclasses import replace

        tiling = replace(cfg.model.tiling, seed=args.seed)
        cfg.model = replace(cfg.model, tiling=tiling, seed=args.seed)
        cfg.train.seed = args.seed
    out_dir = Path(args.out) if args.out else cfg.out_dir
    out_dir.mkdir(parents=True, exist_ok=True)
    _limit_threads(cfg.threads)

    img = images.read_image(cfg.image)
    if img.ndim == 2 and cfg.model.channels == 3:
        raise SystemExit("config asks for 3 channels but the image is grayscale")
    if img.ndim == 3 and cfg.model.channels == 1:
        img = img.mean(axis=2)
    if img.shape[0] != cfg.resolution:
        img = images.box_downsample(img, cfg.resolution)
    coords, targets = images.image_to_dataset(img)

    m = model.init_model(cfg.model)
    from .tiling import coverage_of

    cov = coverage_of(
        [b.spec.declared_band(k) for b in m.branches for k in range(b.spec.n_terms)],
        cfg.model.tiling.bandwidth_B,
        m.branches[0].spec.norm_p,
        np.random.default_rng(cfg.model.seed),
        n_samples=20_000,
    )
    if cov < 0.99:
        raise SystemExit(
            f"selected fans cover only {cov:.3f} of the frequency region; "
            "refusing to fit a model that cannot represent the signal"
        )

    def save_ckpt(mm, step):
        checkpoint.save_model(mm, out_dir / f"checkpoint_{step}.pnf")

    t0 = time.perf_counter()
    log = train.fit(m, coords, targets, cfg.train, checkpoint_cb=save_ckpt)
    wall = time.perf_counter() - t0

    checkpoint.save_model(m, out_dir / "checkpoint.pnf")
    (out_dir / "loss.csv").write_text(log.loss_csv())
    (out_dir / "timing.csv").write_text(log.timing_csv())

    pred = model.forward_terms(m, coords).total.reshape(img.shape[0], img.shape[1], -1)
    images.write_image(out_dir / ("render.ppm" if m.channels == 3 else "render.pgm"),
                       pred if m.channels == 3 else pred[:, :, 0])
    final_psnr = images.psnr(pred.reshape(targets.shape), targets)
    quant = np.clip(np.rint(pred * 255) / 255.0, 0, 1)
    metrics = [
        f"final_psnr_db {final_psnr!r}",
        f"final_psnr_8bit_db {images.psnr(quant.reshape(targets.shape), targets)!r}",
        f"final_ssim {images.ssim(pred[:, :, 0], img if img.ndim == 2 else img[:, :, 0])!r}",
        f"parameters {m.parameter_count}",
        f"coverage {cov!r}",
        f"wall_seconds {wall:.3f}",
    ]
    (out_dir / "metrics.txt").write_text("\n".join(metrics) + "\n")
    print(f"fit: PSNR {final_psnr:.2f} dB, {m.parameter_count} parameters, "
          f"{wall:.1f} s -> {out_dir}")
    return 0


def _load_checkpoint(args):
    from . import checkpoint

    if not args.checkpoint:
        raise SystemExit("--checkpoint is required")
    return checkpoint.load_model(args.checkpoint)


def cmd_render(args) -> int:
    _, _, images, model, _, spectral, _ = _load_runtime()
    m = _load_checkpoint(args)
    g = spectral.GridSpec(args.resolution)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    res = spectral.render_grid(m, g)
    img = res.total if m.channels == 3 else res.total[:, :, 0]
    target = out_dir / ("render.ppm" if m.channels == 3 else "render.pgm")
    images.write_image(target, np.clip(img, 0.0, 1.0))
    print(f"render: {g.resolution}^2 -> {target}")
    return 0


def cmd_decompose(args) -> int:
    _, _, _, _, _, spectral, _ = _load_runtime()
    m = _load_checkpoint(args)
    files = spectral.pyramid_export(m, spectral.GridSpec(args.resolution), args.out)
    print(f"decompose: wrote {len(files)} files to {args.out}")
    return 0


def cmd_spectrum(args) -> int:
    _, _, _, _, _, spectral, _ = _load_runtime()
    m = _load_checkpoint(args)
    g = spectral.GridSpec(args.resolution)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    render = spectral.render_grid(m, g)

    lines = ["term_j,term_k,band_lo,band_hi,in_fraction,out_fraction,peak_out,degenerate"]
    from .model import term_band

    for j, k in sorted(m.term_keys()):
        entry = spectral.band_energy(m, g, j, k, render=render)
        band = term_band(m, j, k)
        lines.append(
            f"{j},{k},{band.lo!r},{band.hi!r},{entry.in_fraction!r},"
            f"{entry.out_fraction!r},{entry.peak_out!r},{int(entry.degenerate)}"
        )
    (out_dir / "band_report.csv").write_text("\n".join(lines) + "\n")

    total = render.total.sum(axis=2)
    spec = spectral.fft2(total * spectral.hann2d(g.resolution))
    mag = np.abs(spec)
    n = g.resolution
    rows = ["bin_x,bin_y,magnitude"]
    freqs = np.arange(n)
    freqs = np.where(freqs < n // 2, freqs, freqs - n)
    for iy in range(n):
        for ix in range(n):
            rows.append(f"{freqs[ix]},{freqs[iy]},{mag[iy, ix]!r}")
    (out_dir / "spectrum_total.csv").write_text("\n".join(rows) + "\n")
    print(f"spectrum: wrote band_report.csv and spectrum_total.csv to {out_dir}")
    return 0


def cmd_scalespace(args) -> int:
    _, _, images, _, scalespace, _, _ = _load_runtime()
    m = _load_checkpoint(args)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    res = args.resolution
    if args.sigma_matrix:
        vals = [float(v) for v in args.sigma_matrix.split(",")]
        if len(vals) != 4:
            raise SystemExit("--sigma-matrix needs 4 comma-separated values (row major)")
        sigmas = [("matrix", np.array(vals).reshape(2, 2) / res**2)]
    else:
        if not args.sigma:
            raise SystemExit("one of --sigma or --sigma-matrix is required")
        sigmas = [
            (f"{float(s):g}", (float(s) / res) ** 2 * np.eye(2))
            for s in args.sigma.split(",")
        ]
    for label, sigma in sigmas:
        img = scalespace.scale_render(m, res, sigma)
        img = img if m.channels == 3 else img[:, :, 0]
        target = out_dir / f"scale_{label}.{'ppm' if m.channels == 3 else 'pgm'}"
        images.write_image(target, np.clip(img, 0.0, 1.0))
        print(f"scalespace: sigma {label} px -> {target}")
    return 0


def cmd_expand(args) -> int:
    _, _, _, model, _, _, _ = _load_runtime()
    m = _load_checkpoint(args)
    e = model.expand_to_basis(m, cap=args.cap)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    cols = ",".join(f"coeff{c}_re,coeff{c}_im" for c in range(m.channels))
    lines = [f"term_j,term_k,freq_x,freq_y,{cols}"]
    for (j, k), atoms in sorted(e.terms.items()):
        for f, coeff in atoms:
            fx = f[0]
            fy = f[1] if len(f) > 1 else 0.0
            cs = ",".join(f"{c.real!r},{c.imag!r}" for c in coeff)
            lines.append(f"{j},{k},{fx!r},{fy!r},{cs}")
    target = out_dir / "expansion.csv"
    target.write_text("\n".join(lines) + "\n")
    print(f"expand: {e.n_atoms} atoms -> {target}")
    return 0


def cmd_check(args) -> int:
    from .checks import run_all_checks

    results = run_all_checks(seed=args.seed if args.seed is not None else 0)
    failed = 0
    for r in results:
        status = "PASS" if r.passed else "FAIL"
        print(f"{status} {r.name}: {r.detail}")
        failed += 0 if r.passed else 1
    if failed:
        print(f"{failed} of {len(results)} properties failed")
        return 1
    print(f"all {len(results)} properties passed")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="pnfield", description=__doc__,
                                formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = p.add_subparsers(dest="command", required=True)

    fit = sub.add_parser("fit", help="train a model from a config file")
    fit.add_argument("--config", required=True)
    fit.add_argument("--out", default=None)
    fit.add_argument("--seed", type=int, default=None)
    fit.set_defaults(func=cmd_fit)

    for name, fn, extra in (
        ("render", cmd_render, ()),
        ("decompose", cmd_decompose, ()),
        ("spectrum", cmd_spectrum, ()),
        ("scalespace", cmd_scalespace, ("sigma",)),
        ("expand", cmd_expand, ("cap",)),
    ):
        c = sub.add_parser(name)
        c.add_argument("--checkpoint", required=True)
        c.add_argument("--out", required=True)
        c.add_argument("--resolution", type=int, default=128)
        if "sigma" in extra:
            c.add_argument("--sigma", default=None,
                           help="comma-separated isotropic sigmas in pixels")
            c.add_argument("--sigma-matrix", default=None,
                           help="full 2x2 covariance, row major, pixel^2 units")
        if "cap" in extra:
            c.add_argument("--cap", type=int, default=1_000_000)
        c.set_defaults(func=fn)

    chk = sub.add_parser("check", help="run the property battery")
    chk.add_argument("--seed", type=int, default=None)
    chk.set_defaults(func=cmd_check)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except SystemExit:
        raise
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
