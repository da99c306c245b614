"""Command-line entry point.

    hirdiff synth --output scene --height 64 --width 64 --bands 16
    hirdiff degrade --input scene.hir --output noisy.hir --task denoise --sigma255 30
    hirdiff restore --input noisy.hir --config noisy.json --output out --reference scene.hir
    hirdiff select-bands --input noisy.hir --rank 3 --compare
    hirdiff schedule-dump --steps 20 --figure schedules.png

Every command first prints its fully resolved configuration as a ``#``
comment line; machine-readable results follow as CSV on stdout. Set
``HIRDIFF_THREADS`` to cap BLAS threads.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
import time
from contextlib import nullcontext
from pathlib import Path

import numpy as np

from . import io as hio
from .degradation import DegradationOp, add_gaussian_noise, apply, blur_downsample_default, random_mask
from .external import ExternalDenoiser, ProtocolError
from .guidance import GuidanceConfig
from .linalg import truncated_svd
from .metrics import ScorePair, metrics_csv_row, psnr, score
from .sampler import SamplerConfig, SmoothingDenoiser, StageError, oracle_from_clean, run_restoration
from .schedule import COSINE, EXPONENTIAL, LINEAR, make_schedule
from .subspace import coefficients_for_bands, estimate_coefficients, naive_band_sets
from .synthetic import make_scene
from .tensor import mode3_multiply, unfold3

# flag name -> RunConfig field, for flags that override a loaded config
OVERRIDES = {
    "task": "task",
    "sigma255": "sigma255",
    "scale": "scale",
    "mask_rate": "mask_rate",
    "rank": "k",
    "rrqr_f": "f",
    "steps": "steps",
    "schedule": "schedule",
    "lam": "lam",
    "beta": "beta",
    "tv_delta": "tv_delta",
    "strength": "strength_rule",
    "strength_scale": "strength_scale",
    "clamp_x0": "clamp_x0",
    "seed": "seed",
    "denoiser": "denoiser",
}


def _prefix(path: str) -> str:
    return path[:-4] if path.endswith(".hir") else path


def _emit_config(d: dict) -> None:
    print("# config " + json.dumps(d, sort_keys=True))


def _run_config(args) -> hio.RunConfig:
    cfg = hio.load_config(args.config) if getattr(args, "config", None) else hio.RunConfig()
    d = cfg.to_dict()
    for flag, name in OVERRIDES.items():
        v = getattr(args, flag, None)
        if v is not None:
            d[name] = v
    params = dict(d["schedule_params"]) if d["schedule"] == cfg.schedule else {}
    if getattr(args, "sched_k", None) is not None:
        params["k"] = args.sched_k
    if getattr(args, "sched_floor", None) is not None:
        params["floor"] = args.sched_floor
    d["schedule_params"] = params
    return hio.RunConfig.from_dict(d)


def _operator(cfg: hio.RunConfig, observed_shape, mask_path=None) -> DegradationOp:
    sigma = cfg.sigma255 / 255.0
    if cfg.task == "denoise":
        return DegradationOp.identity(sigma)
    if cfg.task == "sr":
        return blur_downsample_default(cfg.scale, sigma)
    if mask_path:
        mask = hio.load_cube(mask_path)
    else:
        mask = random_mask(*observed_shape, cfg.mask_rate, cfg.seed)
    return DegradationOp.masked(mask, sigma)


def _denoiser(spec: str):
    kind, _, arg = spec.partition(":")
    if kind == "smooth":
        return SmoothingDenoiser(float(arg or 1.0))
    if kind == "oracle":
        if not arg:
            raise ValueError("oracle denoiser needs a path: oracle:<factors prefix or clean cube>")
        prefix = _prefix(arg)
        if Path(prefix + ".A.hir").exists() and Path(prefix + ".E.hir").exists():
            clean = mode3_multiply(hio.load_cube(prefix + ".A.hir"), hio.load_matrix(prefix + ".E.hir"))
        else:
            clean = hio.load_cube(arg)
        return oracle_from_clean(clean)
    if kind == "exec":
        if not arg:
            raise ValueError("exec denoiser needs a command line")
        return ExternalDenoiser(arg)
    raise ValueError(f"unknown denoiser {spec!r}; use oracle:<path>, smooth:<std> or exec:<command>")


def _show_table(rows, header) -> None:
    """Aligned human-readable table on stderr, after any pending CSV."""
    sys.stdout.flush()
    print(_table(rows, header), file=sys.stderr)


def _table(rows, header) -> str:
    cells = [list(map(str, header))] + [list(map(str, r)) for r in rows]
    widths = [max(len(c[i]) for c in cells) for i in range(len(header))]
    return "\n".join("  ".join(c[i].rjust(widths[i]) for i in range(len(header))) for c in cells)


def cmd_synth(args) -> int:
    _emit_config({"height": args.height, "width": args.width, "bands": args.bands, "rank": args.rank, "seed": args.seed})
    scene = make_scene(args.height, args.width, args.bands, args.rank, args.seed)
    prefix = _prefix(args.output)
    hio.save_cube(prefix + ".hir", scene.x)
    hio.save_cube(prefix + ".A.hir", scene.a)
    hio.save_matrix(prefix + ".E.hir", scene.e)
    resid = truncated_svd(unfold3(scene.x).T, args.rank)
    rel = np.linalg.norm(unfold3(scene.x).T - resid.approximation()) / np.linalg.norm(scene.x)
    print("file,height,width,bands,rank,rank_residual")
    print(f"{prefix}.hir,{args.height},{args.width},{args.bands},{args.rank},{rel:.3e}")
    return 0


def cmd_degrade(args) -> int:
    cfg = _run_config(args)
    _emit_config(cfg.to_dict())
    x = hio.load_cube(args.input)
    op = _operator(cfg, x.shape)
    y = add_gaussian_noise(apply(op, x), cfg.sigma255, cfg.seed)
    prefix = _prefix(args.output)
    hio.save_cube(prefix + ".hir", y)
    hio.save_config(prefix + ".json", cfg)
    rows = [[prefix + ".hir", *y.shape]]
    if cfg.task == "inpaint":
        hio.save_cube(prefix + ".mask.hir", op.mask)
        rows.append([prefix + ".mask.hir", *op.mask.shape])
    print("file,height,width,bands")
    for r in rows:
        print(",".join(map(str, r)))
    return 0


def cmd_restore(args) -> int:
    cfg = _run_config(args)
    _emit_config(cfg.to_dict())
    y = hio.load_cube(args.input)
    op = _operator(cfg, y.shape, args.mask)
    reference = hio.load_cube(args.reference) if args.reference else None
    schedule = make_schedule(cfg.schedule, cfg.steps, **cfg.schedule_params)
    guidance = GuidanceConfig(cfg.lam, cfg.beta, cfg.tv_delta, cfg.strength_rule, cfg.strength_scale)
    denoiser = _denoiser(cfg.denoiser)
    start = time.perf_counter()
    try:
        sampler = SamplerConfig(schedule, guidance, denoiser, cfg.seed, cfg.f, cfg.clamp_x0)
        result = run_restoration(y, op, cfg.k, sampler)
    finally:
        if isinstance(denoiser, ExternalDenoiser):
            denoiser.close()
    elapsed = time.perf_counter() - start

    prefix = _prefix(args.output)
    hio.save_cube(prefix + ".hir", result.x0)
    hio.save_cube(prefix + ".A.hir", result.a0)
    hio.save_matrix(prefix + ".E.hir", result.e)
    hio.save_config(prefix + ".json", cfg)
    with open(prefix + ".loss.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t", "alpha_bar", "loss"])
        for i, loss in enumerate(result.per_step_loss):
            t = cfg.steps - i
            w.writerow([t, repr(schedule.alpha_bar(t)), repr(float(loss))])
    if args.figure:
        from .plotting import plot_loss

        plot_loss(result.per_step_loss, args.figure)

    est = result.estimate
    print(f"# bands {list(est.band_indices)} det_vs {est.det_vs:.6g} max_abs_e {est.max_abs_e:.4g}")
    if reference is not None:
        scores = score(result.x0, reference)
        params = f"T={cfg.steps};schedule={cfg.schedule};lambda={cfg.lam:g};beta={cfg.beta:g};sigma255={cfg.sigma255:g}"
        if cfg.task == "sr":
            params += f";scale={cfg.scale}"
        elif cfg.task == "inpaint":
            params += f";mask_rate={cfg.mask_rate:g}"
        sys.stdout.write(metrics_csv_row(Path(args.input).stem, cfg.task, params, scores, elapsed, header=True))
        rows = [["restored", f"{scores.psnr:.2f}", f"{scores.ssim:.4f}"]]
        if y.shape == reference.shape:
            base = score(y, reference)
            rows.insert(0, ["observed", f"{base.psnr:.2f}", f"{base.ssim:.4f}"])
        _show_table(rows, ["", "PSNR", "SSIM"])
    return 0


def cmd_select_bands(args) -> int:
    _emit_config({"input": args.input, "rank": args.rank, "rrqr_f": args.rrqr_f, "compare": args.compare})
    y = hio.load_cube(args.input)
    est = estimate_coefficients(y, args.rank, args.rrqr_f)
    rows = [["rrqr", " ".join(map(str, est.band_indices)), f"{est.det_vs:.6f}", f"{est.max_abs_e:.2f}"]]
    if args.compare:
        for idx in naive_band_sets(y.shape[2], args.rank):
            try:
                e, det = coefficients_for_bands(est.v, idx)
                rows.append(["equal-interval", " ".join(map(str, idx)), f"{det:.6f}", f"{np.max(np.abs(e)):.2f}"])
            except np.linalg.LinAlgError:
                rows.append(["equal-interval", " ".join(map(str, idx)), f"{0.0:.6f}", "inf"])
    print("method,bands,det_vs,max_abs_e")
    for r in rows:
        print(",".join(r))
    _show_table(rows, ["method", "bands", "|det(V_s)|", "max|E|"])
    return 0


def cmd_estimate_coef(args) -> int:
    _emit_config({"input": args.input, "rank": args.rank, "rrqr_f": args.rrqr_f, "output": args.output})
    est = estimate_coefficients(hio.load_cube(args.input), args.rank, args.rrqr_f)
    hio.save_matrix(args.output, est.e)
    print("bands,det_vs,max_abs_e")
    print(f"{' '.join(map(str, est.band_indices))},{est.det_vs:.6f},{est.max_abs_e:.4f}")
    return 0


def cmd_score(args) -> int:
    _emit_config({"input": args.input, "reference": args.reference})
    x = hio.load_cube(args.input)
    ref = hio.load_cube(args.reference)
    start = time.perf_counter()
    s = score(x, ref) if min(x.shape[:2]) >= 11 else ScorePair(psnr(x, ref), float("nan"))
    sys.stdout.write(metrics_csv_row(Path(args.input).stem, "score", "", s, time.perf_counter() - start, header=True))
    return 0


def cmd_schedule_dump(args) -> int:
    kinds = [args.schedule] if args.schedule else [EXPONENTIAL, LINEAR, COSINE]
    schedules = {}
    for kind in kinds:
        params = {}
        if kind == EXPONENTIAL:
            if args.sched_k is not None:
                params["k"] = args.sched_k
            if args.sched_floor is not None:
                params["floor"] = args.sched_floor
        schedules[kind] = make_schedule(kind, args.steps, **params)
    _emit_config({"steps": args.steps, "schedules": {k: s.params for k, s in schedules.items()}})
    out = open(args.output, "w", newline="") if args.output else nullcontext(sys.stdout)
    with out as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["schedule", "t", "alpha_bar"])
        for kind, s in schedules.items():
            for t, a in s.rows():
                w.writerow([kind, t, repr(a)])
    if args.figure:
        from .plotting import plot_schedules

        plot_schedules({k: s.rows() for k, s in schedules.items()}, args.figure)
    return 0


def cmd_import_raw(args) -> int:
    h, w, b = args.shape
    _emit_config({"input": args.input, "shape": [h, w, b], "dtype": args.dtype, "interleave": args.interleave, "scale": args.scale})
    x = hio.import_raw(args.input, h, w, b, args.dtype, args.interleave, args.scale)
    hio.save_cube(args.output, x)
    print("file,height,width,bands,min,max")
    print(f"{args.output},{h},{w},{b},{x.min():.6g},{x.max():.6g}")
    return 0


def _add_run_flags(p) -> None:
    p.add_argument("--config", help="JSON run config; explicit flags override it")
    p.add_argument("--task", choices=hio.TASKS)
    p.add_argument("--sigma255", type=float, help="noise std on the 0-255 scale")
    p.add_argument("--scale", type=int, help="super-resolution factor")
    p.add_argument("--mask-rate", dest="mask_rate", type=float, help="fraction of missing samples")
    p.add_argument("--seed", type=int)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="hirdiff", description="Hyperspectral restoration by guided diffusion on a reduced image.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="write a synthetic exactly low-rank cube and its factors")
    p.add_argument("--output", required=True, help="output prefix")
    p.add_argument("--height", type=int, default=64)
    p.add_argument("--width", type=int, default=64)
    p.add_argument("--bands", type=int, default=16)
    p.add_argument("--rank", type=int, default=3)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("degrade", help="apply a degradation and noise to a clean cube")
    p.add_argument("--input", required=True)
    p.add_argument("--output", required=True)
    _add_run_flags(p)
    p.set_defaults(func=cmd_degrade)

    p = sub.add_parser("restore", help="run coefficient estimation and guided sampling")
    p.add_argument("--input", required=True)
    p.add_argument("--output", required=True, help="output prefix")
    _add_run_flags(p)
    p.add_argument("--mask", help="mask cube for inpainting (default: regenerate from the seed)")
    p.add_argument("--rank", type=int)
    p.add_argument("--rrqr-f", dest="rrqr_f", type=float)
    p.add_argument("--steps", type=int)
    p.add_argument("--schedule", choices=[EXPONENTIAL, LINEAR, COSINE])
    p.add_argument("--sched-k", dest="sched_k", type=float)
    p.add_argument("--sched-floor", dest="sched_floor", type=float)
    p.add_argument("--lambda", dest="lam", type=float)
    p.add_argument("--beta", type=float)
    p.add_argument("--tv-delta", dest="tv_delta", type=float)
    p.add_argument("--strength", choices=["constant", "sqrt1m"])
    p.add_argument("--strength-scale", dest="strength_scale", type=float)
    p.add_argument("--clamp-x0", dest="clamp_x0", action="store_const", const=True)
    p.add_argument("--denoiser", help="oracle:<factors prefix> | smooth:<std> | exec:<command>")
    p.add_argument("--reference", help="clean cube; adds a metrics CSV row")
    p.add_argument("--figure", help="also plot the loss trace to this image file")
    p.set_defaults(func=cmd_restore)

    p = sub.add_parser("select-bands", help="print the RRQR band selection and its diagnostics")
    p.add_argument("--input", required=True)
    p.add_argument("--rank", type=int, default=3)
    p.add_argument("--rrqr-f", dest="rrqr_f", type=float, default=1.05)
    p.add_argument("--compare", action="store_true", help="also score equal-interval selections")
    p.set_defaults(func=cmd_select_bands)

    p = sub.add_parser("estimate-coef", help="estimate the coefficient matrix E")
    p.add_argument("--input", required=True)
    p.add_argument("--output", required=True)
    p.add_argument("--rank", type=int, default=3)
    p.add_argument("--rrqr-f", dest="rrqr_f", type=float, default=1.05)
    p.set_defaults(func=cmd_estimate_coef)

    p = sub.add_parser("score", help="PSNR and SSIM of a cube against a reference")
    p.add_argument("--input", required=True)
    p.add_argument("--reference", required=True)
    p.set_defaults(func=cmd_score)

    p = sub.add_parser("schedule-dump", help="tabulate noise schedules")
    p.add_argument("--schedule", choices=[EXPONENTIAL, LINEAR, COSINE], help="default: all three")
    p.add_argument("--steps", type=int, default=20)
    p.add_argument("--sched-k", dest="sched_k", type=float)
    p.add_argument("--sched-floor", dest="sched_floor", type=float)
    p.add_argument("--output", help="CSV path (default stdout)")
    p.add_argument("--figure", help="also plot the schedules to this image file")
    p.set_defaults(func=cmd_schedule_dump)

    p = sub.add_parser("import-raw", help="convert a headerless sample array to a cube file")
    p.add_argument("--input", required=True)
    p.add_argument("--output", required=True)
    p.add_argument("--shape", type=int, nargs=3, required=True, metavar=("H", "W", "B"))
    p.add_argument("--dtype", default="<f4", help="numpy dtype string, e.g. <u2 or >f4")
    p.add_argument("--interleave", choices=hio.INTERLEAVES, default="bsq")
    p.add_argument("--scale", type=float, default=1.0, help="multiply samples, e.g. 1/65535")
    p.set_defaults(func=cmd_import_raw)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    threads = os.environ.get("HIRDIFF_THREADS")
    try:
        if threads:
            from threadpoolctl import threadpool_limits

            limiter = threadpool_limits(int(threads))
        else:
            limiter = nullcontext()
        with limiter:
            return args.func(args)
    except StageError as exc:
        print(f"error: [{exc.stage}] {exc}", file=sys.stderr)
    except (ProtocolError, hio.CubeFormatError, hio.ConfigError, OSError, ValueError, np.linalg.LinAlgError) as exc:
        print(f"error: {exc}", file=sys.stderr)
    return 1


if __name__ == "__main__":
    sys.exit(main())
