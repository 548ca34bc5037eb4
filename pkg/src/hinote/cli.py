"""Command-line entry point: ``hinote <command> [flags]``.

Exit codes: 0 ok, 1 runtime failure, 2 usage error.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    pass


def _floats(text: str) -> list[float]:
    try:
        vals = [float(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None
    if not vals:
        raise argparse.ArgumentTypeError("empty list")
    return vals


def _ints(text: str) -> list[int]:
    try:
        vals = [int(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None
    if not vals:
        raise argparse.ArgumentTypeError("empty list")
    return vals


def _extents(text: str) -> tuple[int, int]:
    parts = text.lower().split("x")
    try:
        ny, nx = (int(p) for p in parts)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected HxW extents such as 101x101, got {text!r}") from None
    if ny < 1 or nx < 1:
        raise argparse.ArgumentTypeError("extents must be positive")
    return ny, nx


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="hinote",
        description="Arbitrary-scale super-resolution of 2D fields with a hierarchical neural operator.",
    )
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", metavar="command")
    sub.required = True

    def command(name, help_text):
        p = sub.add_parser(name, help=help_text, description=help_text)
        p.add_argument("--seed", type=int, help="base random seed (default: the config's seed, else 0)")
        return p

    p = command("gen-data", "Generate train/valid/test SFB datasets.")
    p.add_argument("--config", help="run config TOML (default: bundled desk config)")
    p.add_argument("--out", required=True, help="output directory for train/valid/test.sfb")
    p.add_argument("--source", choices=("grf", "turb"), help="override [data] source")

    p = command("train", "Train a model; writes final.ckpt, best.ckpt and train_log.csv.")
    p.add_argument("--config", help="run config TOML (default: bundled desk config)")
    p.add_argument("--data", required=True, help="dataset directory holding train.sfb (and valid.sfb)")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--steps", type=int, help="override [train] steps")
    p.add_argument("--resume", help="checkpoint to continue from")

    p = command("eval", "Metrics of a checkpoint and interpolation baselines over scales.")
    p.add_argument("--ckpt", required=True, help="checkpoint file")
    p.add_argument("--data", required=True, help="SFB file, or a directory holding test.sfb")
    p.add_argument("--scales", type=_floats, default=[4.6, 8.2, 15.7, 32.0],
                   help="comma-separated scales (default 4.6,8.2,15.7,32)")
    p.add_argument("--out", default=".", help="output directory for metric CSVs (default .)")
    p.add_argument("--degrade", choices=("spectral", "bicubic"), default="spectral",
                   help="LR degradation (default spectral)")

    p = command("infer", "Super-resolve every record of an SFB file.")
    p.add_argument("--ckpt", required=True, help="checkpoint file")
    p.add_argument("--in", dest="inp", metavar="SFB", required=True, help="input SFB file")
    g = p.add_mutually_exclusive_group(required=True)
    g.add_argument("--scale", type=float, help="upsampling factor; extents round half up")
    g.add_argument("--out-extents", type=_extents, help="explicit output extents HxW")
    p.add_argument("--out", required=True, help="output SFB file")

    p = command("bench-attn", "Time Galerkin vs softmax attention over sequence lengths.")
    p.add_argument("--sizes", type=_ints, default=[256, 1024, 4096], help="sequence lengths (default 256,1024,4096)")
    p.add_argument("--d", type=int, default=32, help="attention width (default 32)")
    p.add_argument("--heads", type=int, default=4, help="heads (default 4)")
    p.add_argument("--reps", type=int, default=20, help="timed repetitions per size (default 20)")
    p.add_argument("--batch", type=int, default=1, help="sequences per call (default 1)")
    p.add_argument("--out", help="CSV path (default stdout)")

    p = command("spectra", "Radially averaged power spectra of SFB files.")
    p.add_argument("--in", dest="inp", metavar="SFB", action="append", required=True,
                   help="SFB file; repeat for several")
    p.add_argument("--out", default=".", help="output directory (default .)")

    p = command("grad-check", "Finite-difference gradient checks of ops and composites.")
    g = p.add_mutually_exclusive_group(required=True)
    g.add_argument("--all", action="store_true", help="run every check")
    g.add_argument("--op", action="append", help="check name; repeat for several")
    p.add_argument("--tol", type=float, default=1e-4, help="relative error bound (default 1e-4)")

    p = command("prior-corr", "Correlation between prediction error and the resize prior.")
    p.add_argument("--ckpt", required=True, help="checkpoint file")
    p.add_argument("--data", required=True, help="SFB file, or a directory holding test.sfb")
    p.add_argument("--alpha", type=float, default=1.0, help="weight-map alpha (default 1)")
    p.add_argument("--beta", type=float, default=0.1, help="weight-map beta (default 0.1)")
    p.add_argument("--scale", type=float, default=3.0, help="evaluation scale (default 3)")
    p.add_argument("--out", help="CSV path (default stdout)")
    return parser


# -- commands -----------------------------------------------------------------

def _run_config(path):
    from .config import bundled_config, load_config
    return load_config(path) if path else bundled_config()


def _dataset(path, default_name="test.sfb"):
    from .sfb import read_sfb
    p = Path(path)
    if p.is_dir():
        p = p / default_name
    if not p.exists():
        raise FileNotFoundError(f"dataset not found: {p}")
    return read_sfb(p)


def _cmd_gen_data(args) -> int:
    from .datagen import build_dataset
    cfg = _run_config(args.config)
    source = args.source or cfg.data.source
    summary = build_dataset(source, cfg.splits, args.out, grf=cfg.grf, turb=cfg.turb,
                            seed=cfg.data.seed if args.seed is None else args.seed)
    print(json.dumps(summary, sort_keys=True))
    return EXIT_OK


def _cmd_train(args) -> int:
    from .model import HiNOTE
    from .trainer import load_checkpoint, train
    cfg = _run_config(args.config)
    if args.steps is not None:
        cfg.train.steps = args.steps
    if args.seed is not None:
        cfg.train.seed = args.seed
    data = Path(args.data)
    fields = _dataset(data, "train.sfb")
    valid = _dataset(data, "valid.sfb") if (data.is_dir() and (data / "valid.sfb").exists()) else None
    resume = None
    if args.resume:
        model, resume = load_checkpoint(args.resume)
    else:
        model = HiNOTE(cfg.model, seed=cfg.train.seed)
    res = train(model, fields, cfg.train, out_dir=args.out, valid=valid, resume=resume)
    tail = [row[1] for row in res.log[-100:]]
    print(json.dumps({"steps": len(res.log), "final_loss_mean": float(np.mean(tail)) if tail else None,
                      "best_val": None if not np.isfinite(res.best_val) else res.best_val,
                      "checkpoint": str(Path(args.out) / "final.ckpt")}, sort_keys=True))
    return EXIT_OK


def _cmd_eval(args) -> int:
    from .trainer import evaluate, load_checkpoint, summarize, write_metrics
    model, _ = load_checkpoint(args.ckpt)
    fields = _dataset(args.data)
    rows = evaluate(model, fields, args.scales, degrade=args.degrade)
    paths = write_metrics(args.out, rows)
    for method, scale, m, p, s in summarize(rows):
        print(f"{method:10s} x{scale:<6g} mse={m:.4e} psnr={p:.3f} ssim={s:.4f}")
    logging.getLogger(__name__).info("wrote %s", ", ".join(map(str, paths)))
    return EXIT_OK


def _cmd_infer(args) -> int:
    from .fields import GridField, round_half_up
    from .sfb import write_sfb
    from .spectral import spectral_resize
    from .trainer import load_checkpoint
    model, _ = load_checkpoint(args.ckpt)
    fields = _dataset(args.inp)
    ny, nx = fields[0].extents
    if args.out_extents:
        target = args.out_extents
    else:
        if args.scale <= 0:
            raise UsageError("--scale must be positive")
        target = (round_half_up(ny * args.scale), round_half_up(nx * args.scale))
    outs = []
    identity = target == (ny, nx)
    for f in fields:
        if identity:
            out = spectral_resize(f.values, target)
        else:
            out = model.predict(f.values.astype(np.float32), target)
        if not np.all(np.isfinite(out)):
            raise FloatingPointError("non-finite values in the super-resolved field")
        outs.append(GridField(out, f.box))
    write_sfb(args.out, outs)
    meta = {"in_extents": [ny, nx], "out_extents": list(target), "records": len(outs),
            "scale": args.scale, "mode": "spectral-identity" if identity else "model"}
    print(json.dumps(meta, sort_keys=True))
    return EXIT_OK


def _cmd_bench(args) -> int:
    from .attention import bench_attention, bench_csv
    if any(m < 1 for m in args.sizes) or args.d < 1 or args.reps < 1:
        raise UsageError("sizes, --d and --reps must be positive")
    rows = bench_attention(args.sizes, d=args.d, heads=args.heads, reps=args.reps,
                           seed=args.seed or 0, batch=args.batch)
    text = bench_csv(rows)
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


def _cmd_spectra(args) -> int:
    from .spectral import RadialSpectrum, radial_power_spectrum
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for path in args.inp:
        fields = _dataset(path)
        spectra = [radial_power_spectrum(f.values[c]) for f in fields for c in range(f.channels)]
        mean = RadialSpectrum(spectra[0].k, np.mean([s.power for s in spectra], axis=0),
                              spectra[0].counts)
        target = out / f"spectrum_{Path(path).stem}.csv"
        mean.to_csv(target)
        print(target)
    return EXIT_OK


def _cmd_grad_check(args) -> int:
    from .checks import CASES, run_check
    names = list(CASES) if args.all else args.op
    unknown = [n for n in names if n not in CASES]
    if unknown:
        raise UsageError(f"unknown check {unknown[0]!r}; choose from {', '.join(CASES)}")
    print("check,params,max_rel_error,status")
    ok = True
    for name in names:
        r = run_check(name, seed=args.seed or 0, tol=args.tol)
        ok &= r.passed
        print(f"{r.name},{r.params},{r.error:.3e},{'pass' if r.passed else 'FAIL'}")
    return EXIT_OK if ok else EXIT_FAIL


def _cmd_prior_corr(args) -> int:
    from .fields import GridField, make_pair
    from .losses import CORR_HEADER, compute_prior, prior_error_correlation
    from .trainer import load_checkpoint
    if args.alpha <= 0:
        raise UsageError("--alpha must be positive")
    model, _ = load_checkpoint(args.ckpt)
    fields = _dataset(args.data)
    rows = []
    for i, f in enumerate(fields):
        pair = make_pair(GridField(np.asarray(f.values, dtype=np.float64), f.box), args.scale)
        pred = model.predict(pair.lr.values.astype(np.float32), pair.hr.extents).astype(np.float64)
        p = compute_prior(pred, pair.lr.values)
        rows.append((i, args.alpha, args.beta, prior_error_correlation(pred, pair.hr.values, p)))
    lines = [",".join(CORR_HEADER)]
    for rec, a, b, r in rows:
        lines.append(f"{rec},{a:g},{b:g},{'nan' if np.isnan(r) else f'{r:.6f}'}")
    text = "\n".join(lines) + "\n"
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


COMMANDS = {
    "gen-data": _cmd_gen_data,
    "train": _cmd_train,
    "eval": _cmd_eval,
    "infer": _cmd_infer,
    "bench-attn": _cmd_bench,
    "spectra": _cmd_spectra,
    "grad-check": _cmd_grad_check,
    "prior-corr": _cmd_prior_corr,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse exits 2 on usage errors, 0 on --help
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"hinote {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except Exception as exc:  # one-line diagnostic, no traceback
        msg = str(exc).splitlines()[0] if str(exc) else type(exc).__name__
        print(f"hinote {args.command}: error: {msg}", file=sys.stderr)
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
