"""Command-line interface.

Subcommands: prepare (build a patch cache), train (two-stage protocol),
sr (super-resolve one image), eval (benchmark metrics, optional
reference comparison), gradcheck (finite-difference verification), plot
(training-log SVG) and config (print canonical configuration text).

Exit codes: 0 on success, 1 when a verification fails (gradcheck or
reference comparison), 2 on usage or input errors.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .checkpoint import config_from_meta, load_checkpoint, restore_network
from .config import (RunConfig, apply_overrides, desk_preset, dump_config,
                     load_config)
from .data import load_cache, prepare_patches, save_cache
from .evaluate import (compare_reference, evaluate, merge_reports,
                       super_resolve, write_report)
from .gradcheck import run_suite
from .imgio import load_image, save_image
from .network import build_network
from .plotsvg import plot_training_logs
from .training import run_training


def _config_from_args(args) -> RunConfig:
    if getattr(args, "preset", None) == "desk":
        cfg = desk_preset()
    elif getattr(args, "config", None):
        cfg = load_config(args.config)
    else:
        cfg = RunConfig()
    if getattr(args, "config", None) and getattr(args, "preset", None):
        raise ValueError("--config and --preset are mutually exclusive")
    overrides = getattr(args, "set", None) or []
    if overrides:
        cfg = apply_overrides(cfg, overrides)
    return cfg


def _load_network(path):
    ckpt = load_checkpoint(path)
    net = build_network(config_from_meta(ckpt.meta), seed=0)
    restore_network(net, ckpt)
    return net


def cmd_prepare(args) -> int:
    cfg = _config_from_args(args)
    scale = args.scale if args.scale is not None else cfg.network.scale
    stride = args.stride if args.stride is not None else cfg.data.stride
    do_augment = cfg.data.augment and not args.no_augment
    limit = args.limit if args.limit is not None else (cfg.data.limit or None)
    lr, hr, manifest = prepare_patches(args.images, scale,
                                       lr_size=cfg.network.input_patch,
                                       stride=stride, do_augment=do_augment,
                                       limit=limit)
    save_cache(args.out, lr, hr, manifest)
    print(f"wrote {manifest['patches']} patch pairs "
          f"({manifest['variants']} image variants, x{scale}) to {args.out}")
    return 0


def cmd_train(args) -> int:
    cfg = _config_from_args(args)
    lr, hr, meta = load_cache(args.data)
    if int(meta["scale"]) != cfg.network.scale:
        raise ValueError(f"cache was prepared for x{meta['scale']}, "
                         f"config asks for x{cfg.network.scale}")
    if int(meta["lr_size"]) != cfg.network.input_patch:
        raise ValueError(f"cache patches are {meta['lr_size']}px, "
                         f"config expects {cfg.network.input_patch}px")
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    log_path = args.log or out_dir / "train_log.csv"
    final = run_training(lr, hr, cfg.network, cfg.stage1, cfg.stage2,
                         seed=args.seed, out_dir=out_dir, log_path=log_path,
                         resume=args.resume, skip_stage1=args.random_init)
    print(f"final checkpoint: {final}")
    return 0


def cmd_sr(args) -> int:
    net = _load_network(args.checkpoint)
    if args.scale is not None and args.scale != net.cfg.scale:
        raise ValueError(f"checkpoint was trained for x{net.cfg.scale}, "
                         f"--scale asks for x{args.scale}")
    img = load_image(args.input)
    save_image(args.output, super_resolve(img, net))
    print(f"wrote {args.output} (x{net.cfg.scale})")
    return 0


def cmd_eval(args) -> int:
    net = _load_network(args.checkpoint) if args.checkpoint else None
    method = "network" if args.checkpoint else args.method
    reports = [evaluate(d, args.scale, method, net=net) for d in args.images]
    report = merge_reports(reports)
    for row in report.rows + report.aggregates:
        print(f"{row.dataset}/{row.image} x{row.scale} {row.method}: "
              f"psnr={row.psnr_db:.4f} dB ssim={row.ssim:.5f}")
    if args.out:
        write_report(report, args.out)
    if args.reference:
        ok, results = compare_reference(report, args.reference,
                                        tol_psnr=args.tol_psnr,
                                        tol_ssim=args.tol_ssim)
        for res in results:
            if res["status"] == "missing":
                print(f"{res['dataset']} x{res['scale']} {res['method']}: "
                      f"no reference row")
            else:
                print(f"{res['dataset']} x{res['scale']} {res['method']}: "
                      f"delta_psnr={res['delta_psnr_db']:+.4f} dB "
                      f"delta_ssim={res['delta_ssim']:+.5f} [{res['status'].upper()}]")
        if not ok:
            print("reference comparison FAILED", file=sys.stderr)
            return 1
        print("reference comparison passed")
    return 0


def cmd_gradcheck(args) -> int:
    results = run_suite(args.seed)
    worst = 0
    for res in results:
        state = "PASS" if res.passed else "FAIL"
        print(f"{res.name}: max_rel_err={res.max_rel_err:.3e} "
              f"threshold={res.threshold:.0e} [{state}]")
        worst = max(worst, 0 if res.passed else 1)
    print(f"{sum(r.passed for r in results)}/{len(results)} gradient checks passed")
    return worst


def cmd_plot(args) -> int:
    plot_training_logs(args.log, args.out, column=args.column)
    print(f"wrote {args.out}")
    return 0


def cmd_config(args) -> int:
    cfg = desk_preset() if args.preset == "desk" else RunConfig()
    if args.set:
        cfg = apply_overrides(cfg, args.set)
    sys.stdout.write(dump_config(cfg))
    return 0


def _add_config_flags(sub) -> None:
    sub.add_argument("--config", help="configuration file")
    sub.add_argument("--preset", choices=["desk"], help="built-in configuration")
    sub.add_argument("--set", action="append", metavar="SECTION.KEY=VALUE",
                     help="override one configuration value (repeatable)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="lapir",
        description="Laplacian-pyramid super-resolution: data preparation, "
                    "two-stage training, inference and evaluation.")
    subs = parser.add_subparsers(dest="command", required=True)

    p = subs.add_parser("prepare", help="build a training patch cache")
    p.add_argument("--images", required=True, help="directory of source images")
    p.add_argument("--out", required=True, help="cache file to write")
    p.add_argument("--scale", type=int, choices=[2, 3, 4])
    p.add_argument("--stride", type=int)
    p.add_argument("--limit", type=int, help="keep only the first N patches")
    p.add_argument("--no-augment", action="store_true")
    _add_config_flags(p)
    p.set_defaults(func=cmd_prepare)

    p = subs.add_parser("train", help="run the two-stage training protocol")
    p.add_argument("--data", required=True, help="patch cache from 'prepare'")
    p.add_argument("--out", required=True, help="output directory for checkpoints")
    p.add_argument("--log", help="training log CSV (default: <out>/train_log.csv)")
    p.add_argument("--resume", action="store_true",
                   help="continue from <out>/latest.ckpt")
    p.add_argument("--random-init", action="store_true",
                   help="skip stage 1 and fine-tune from random initialization")
    _add_config_flags(p)
    p.set_defaults(func=cmd_train)

    p = subs.add_parser("sr", help="super-resolve one image")
    p.add_argument("--input", required=True)
    p.add_argument("--output", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--scale", type=int, choices=[2, 3, 4],
                   help="expected factor; must match the checkpoint")
    p.set_defaults(func=cmd_sr)

    p = subs.add_parser("eval", help="benchmark PSNR/SSIM on image directories")
    p.add_argument("--images", required=True, nargs="+",
                   help="one or more dataset directories")
    p.add_argument("--scale", type=int, choices=[2, 3, 4], required=True)
    p.add_argument("--method", choices=["bicubic"], default="bicubic",
                   help="baseline method when no checkpoint is given")
    p.add_argument("--checkpoint", help="evaluate this network instead")
    p.add_argument("--out", help="write the report CSV here")
    p.add_argument("--reference", help="reference CSV to compare means against")
    p.add_argument("--tol-psnr", type=float, default=0.15)
    p.add_argument("--tol-ssim", type=float, default=0.01)
    p.set_defaults(func=cmd_eval)

    p = subs.add_parser("gradcheck", help="verify gradients by finite differences")
    p.set_defaults(func=cmd_gradcheck)

    p = subs.add_parser("plot", help="render a training log as SVG")
    p.add_argument("--log", required=True, nargs="+", help="training log CSV(s)")
    p.add_argument("--out", required=True, help="SVG file to write")
    p.add_argument("--column", default="loss")
    p.set_defaults(func=cmd_plot)

    p = subs.add_parser("config", help="print configuration text")
    p.add_argument("--dump-defaults", action="store_true",
                   help="print the canonical defaults")
    p.add_argument("--preset", choices=["desk"])
    p.add_argument("--set", action="append", metavar="SECTION.KEY=VALUE")
    p.set_defaults(func=cmd_config)

    for sub in subs.choices.values():
        sub.add_argument("--seed", type=int, default=0,
                         help="base seed for all randomness")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, OSError, AssertionError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
