"""Subcommand front end: every pipeline stage plus the full experiment.

Exit codes: 0 success, 2 bad flags (argparse), 3 bad input files,
4 numeric failure.  Errors are one machine-parsable line on stderr:
``error: <category>: <message>``.  Every command that consumes
randomness requires an explicit ``--seed``; nothing is ever seeded from
the clock.  Numerical modules are imported only after ``--threads`` has
been applied to the relevant environment variables.
"""

from __future__ import annotations

import argparse
import math
import os
import sys

from .configschema import (
    SCHEMA_BY_NAME,
    config_help_text,
    parse_config_text,
    parse_value,
)

EXIT_BAD_FLAGS = 2
EXIT_BAD_INPUT = 3
EXIT_NUMERIC = 4


class CliInputError(Exception):
    pass


class CliFlagError(Exception):
    pass


def _fail(category: str, message: str, code: int) -> int:
    print(f"error: {category}: {message}", file=sys.stderr)
    return code


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="sinoflick",
        description="Zero-shot low-dose CT denoising via conjugate-ray sinogram flicking.",
    )
    parser.add_argument(
        "--threads",
        type=int,
        default=None,
        help="cap module-internal parallelism (default: leave environment as is)",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("phantom", help="rasterize an ellipse phantom to an SFLK image")
    p.add_argument("out")
    p.add_argument("--size", type=int, required=True, help="image side in pixels (>= 16)")
    p.add_argument("--table", default=None, help="ellipse table file (default: built-in head phantom)")
    p.add_argument("--pixel-spacing", type=float, default=1.0, help="pixel size in mm")
    p.set_defaults(func=cmd_phantom)

    p = sub.add_parser("project", help="forward-project an image to a sinogram")
    p.add_argument("input")
    p.add_argument("out")
    p.add_argument("--views", type=int, required=True)
    p.add_argument("--dets", type=int, required=True)
    p.add_argument("--det-spacing", type=float, required=True)
    p.add_argument(
        "--mu-water",
        type=float,
        default=None,
        help="convert HU or relative-intensity input to attenuation first (1/mm)",
    )
    p.set_defaults(func=cmd_project)

    p = sub.add_parser("noise", help="apply low-dose photon statistics to a sinogram")
    p.add_argument("input")
    p.add_argument("out")
    p.add_argument("--i0", type=float, required=True, help="expected photons per ray")
    p.add_argument("--seed", type=int, required=True)
    p.set_defaults(func=cmd_noise)

    p = sub.add_parser("flick", help="swap random conjugate pairs of a sinogram")
    p.add_argument("input")
    p.add_argument("out")
    p.add_argument("--l", type=int, required=True, help="number of swap draws")
    p.add_argument("--seed", type=int, required=True)
    p.set_defaults(func=cmd_flick)

    p = sub.add_parser("recon", help="SART-reconstruct a sinogram")
    p.add_argument("input")
    p.add_argument("out")
    p.add_argument("--size", type=int, required=True, help="reconstruction grid in pixels")
    p.add_argument("--pixel-spacing", type=float, required=True)
    p.add_argument("--iters", type=int, default=50)
    p.add_argument("--relaxation", type=float, default=1.0)
    p.add_argument("--no-nonneg", action="store_true", help="skip the nonnegativity clamp")
    p.add_argument("--to-hu", action="store_true", help="convert the result to HU")
    p.add_argument("--mu-water", type=float, default=None, help="water attenuation for --to-hu")
    p.set_defaults(func=cmd_recon)

    p = sub.add_parser("denoise", help="flick-train-denoise a sinogram")
    p.add_argument("input")
    p.add_argument("out")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--l", type=int, required=True, help="swap draws per flick plan")
    p.add_argument("--steps", type=int, default=2000)
    p.add_argument("--channels", type=int, default=48)
    p.add_argument("--passes", type=int, default=1)
    p.add_argument("--alpha", type=float, default=1.0)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--lr-halve-every", type=int, default=1000)
    p.add_argument("--reflick-every", type=int, default=0)
    p.set_defaults(func=cmd_denoise)

    p = sub.add_parser("metrics", help="PSNR/SSIM of a test image against a reference")
    p.add_argument("ref")
    p.add_argument("test")
    p.add_argument("--range", type=float, default=None, help="explicit dynamic range")
    p.add_argument("--out", default=None, help="write the CSV here as well as stdout")
    p.set_defaults(func=cmd_metrics)

    p = sub.add_parser(
        "pipeline",
        help="run the full experiment from a config file",
        epilog=config_help_text(),
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    p.add_argument("config", help="key = value config file (a run manifest also works)")
    p.add_argument(
        "--set",
        action="append",
        default=[],
        metavar="KEY=VALUE",
        help="override a config key (repeatable)",
    )
    p.set_defaults(func=cmd_pipeline)

    p = sub.add_parser("export", help="window an HU image to a 16-bit PGM")
    p.add_argument("input")
    p.add_argument("out")
    p.add_argument("--lo", type=float, required=True, help="window low edge in HU")
    p.add_argument("--hi", type=float, required=True, help="window high edge in HU")
    p.set_defaults(func=cmd_export)

    return parser


def _require_file(path: str) -> None:
    if not os.path.isfile(path):
        raise CliInputError(f"no such file: {path}")


def _load_image(path):
    from . import core

    _require_file(path)
    try:
        return core.load_image(path)
    except core.ContainerError as exc:
        raise CliInputError(str(exc)) from exc


def _load_sinogram(path, image_size=None, pixel_spacing=None):
    from . import core

    _require_file(path)
    try:
        return core.load_sinogram(path, image_size=image_size, pixel_spacing=pixel_spacing)
    except (core.ContainerError, ValueError) as exc:
        raise CliInputError(str(exc)) from exc


def cmd_phantom(args) -> int:
    from . import core, phantom

    if args.table is not None:
        _require_file(args.table)
        ellipses = phantom.load_ellipse_table(args.table)
    else:
        ellipses = phantom.shepp_logan_ellipses()
    img = phantom.rasterize(ellipses, args.size, args.pixel_spacing)
    core.save_image(args.out, img)
    print(f"phantom: wrote {args.out} ({args.size}x{args.size})")
    return 0


def cmd_project(args) -> int:
    from . import core, phantom, projector

    img = _load_image(args.input)
    if img.unit != core.UNIT_NAME_MU:
        mu_water = args.mu_water if args.mu_water is not None else phantom.DEFAULT_MU_WATER
        if img.unit == core.UNIT_RELATIVE:
            img = phantom.intensity_to_hu(img)
        img = phantom.hu_to_mu(img, mu_water)
    geom = core.ScanGeometry(
        n_views=args.views,
        n_dets=args.dets,
        det_spacing=args.det_spacing,
        pixel_spacing=img.pixel_spacing,
        image_size=img.size,
    )
    sino = projector.forward_project(img, geom)
    core.save_sinogram(args.out, sino)
    print(f"project: wrote {args.out} ({geom.n_views}x{geom.n_dets})")
    return 0


def cmd_noise(args) -> int:
    from . import core, noisesim

    sino = _load_sinogram(args.input)
    cfg = noisesim.NoiseConfig(i0=args.i0, seed=args.seed)
    noisy = noisesim.apply_low_dose(sino, cfg)
    core.save_sinogram(args.out, noisy)
    print(f"noise: wrote {args.out} (i0={args.i0:g}, seed={args.seed})")
    return 0


def cmd_flick(args) -> int:
    from . import core, flick

    sino = _load_sinogram(args.input)
    plan = flick.FlickPlan(n_draws=args.l, seed=args.seed)
    out = flick.flick(sino, plan)
    core.save_sinogram(args.out, out)
    print(f"flick: wrote {args.out} (l={args.l}, seed={args.seed})")
    return 0


def cmd_recon(args) -> int:
    from . import core, phantom, projector

    sino = _load_sinogram(args.input, image_size=args.size, pixel_spacing=args.pixel_spacing)
    cfg = projector.SartConfig(
        iterations=args.iters, relaxation=args.relaxation, nonneg=not args.no_nonneg
    )
    img = projector.sart(sino, sino.geometry, cfg)
    if args.to_hu:
        mu_water = args.mu_water if args.mu_water is not None else phantom.DEFAULT_MU_WATER
        img = phantom.mu_to_hu(img, mu_water)
    core.save_image(args.out, img)
    print(f"recon: wrote {args.out} ({args.size}x{args.size}, {args.iters} iterations)")
    return 0


def cmd_denoise(args) -> int:
    from . import core, pipeline
    from .smallnet import LrSchedule

    sino = _load_sinogram(args.input)
    cfg = pipeline.PipelineConfig(
        geometry=sino.geometry,
        flick_draws=args.l,
        seed=args.seed,
        steps=args.steps,
        channels=args.channels,
        lr=LrSchedule(base_lr=args.lr, halve_every=args.lr_halve_every),
        alpha=args.alpha,
        passes=args.passes,
        reflick_every=args.reflick_every,
    )
    out = pipeline.denoise(sino, cfg)
    core.save_sinogram(args.out, out)
    print(f"denoise: wrote {args.out} ({args.passes} passes, {args.steps} steps)")
    return 0


def cmd_metrics(args) -> int:
    from . import metrics

    ref = _load_image(args.ref)
    test = _load_image(args.test)
    psnr_val = metrics.psnr(ref, test, data_range=args.range)
    ssim_params = metrics.SsimParams(data_range=args.range)
    ssim_val = metrics.ssim(ref, test, ssim_params)
    name = os.path.basename(args.test)
    psnr_text = "inf" if math.isinf(psnr_val) else f"{psnr_val:.6f}"
    csv = f"method,psnr_db,ssim\n{name},{psnr_text},{ssim_val:.6f}\n"
    sys.stdout.write(csv)
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(csv)
    return 0


def cmd_pipeline(args) -> int:
    from . import pipeline

    _require_file(args.config)
    with open(args.config, "r", encoding="utf-8") as fh:
        try:
            values = parse_config_text(fh.read())
        except ValueError as exc:
            raise CliInputError(str(exc)) from exc
    for override in args.set:
        if "=" not in override:
            raise CliFlagError(f"--set expects KEY=VALUE, got {override!r}")
        name, _, raw = override.partition("=")
        name = name.strip()
        if name not in SCHEMA_BY_NAME:
            raise CliFlagError(f"unknown config key {name!r}")
        try:
            values[name] = parse_value(SCHEMA_BY_NAME[name], raw)
        except ValueError as exc:
            raise CliFlagError(str(exc)) from exc
    cfg = pipeline.config_from_dict(values)
    print(f"pipeline: {cfg.geometry.n_views} views x {cfg.geometry.n_dets} dets, "
          f"{cfg.passes} passes, out_dir={cfg.out_dir}")
    report = pipeline.run_experiment(cfg)
    for row in report.rows:
        psnr_text = "inf" if math.isinf(row.psnr_db) else f"{row.psnr_db:.2f}"
        print(f"pipeline: {row.method}: psnr {psnr_text} dB, ssim {row.ssim:.4f}")
    print(f"pipeline: report at {report.artifacts['report.csv']}")
    return 0


def cmd_export(args) -> int:
    import numpy as np

    from . import core

    img = _load_image(args.input)
    if img.unit != core.UNIT_NAME_HU:
        raise CliInputError(f"export expects an HU image, got {img.unit}")
    if args.hi <= args.lo:
        raise ValueError("window high edge must exceed the low edge")
    scaled = (img.data - args.lo) / (args.hi - args.lo) * 65535.0
    pixels = np.floor(np.clip(scaled, 0.0, 65535.0) + 0.5).astype(">u2")
    with open(args.out, "wb") as fh:
        fh.write(f"P5\n{img.size} {img.size}\n65535\n".encode("ascii"))
        fh.write(pixels.tobytes())
    print(f"export: wrote {args.out} (window [{args.lo:g}, {args.hi:g}] HU)")
    return 0


def _apply_threads(threads: int | None) -> None:
    if threads is None:
        return
    if threads < 1:
        raise ValueError("--threads must be >= 1")
    for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS", "NUMBA_NUM_THREADS"):
        os.environ[var] = str(threads)


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        _apply_threads(args.threads)
        return args.func(args)
    except CliFlagError as exc:
        return _fail("flags", str(exc), EXIT_BAD_FLAGS)
    except CliInputError as exc:
        return _fail("input", str(exc), EXIT_BAD_INPUT)
    except FileNotFoundError as exc:
        return _fail("input", str(exc), EXIT_BAD_INPUT)
    except (ValueError, ArithmeticError) as exc:
        return _fail("numeric", str(exc), EXIT_NUMERIC)


if __name__ == "__main__":
    sys.exit(main())
