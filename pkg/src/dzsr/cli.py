"""Command-line interface.

Subcommands: gen-data, train-degradation, train, infer, eval.  The
DZSR_THREADS environment variable (or the config's `threads` field) caps
torch's intra-op parallelism; set it to 1 for bit-reproducible runs.
"""

from __future__ import annotations

import argparse
import os
import sys

import torch

from .checkpoint import load_checkpoint
from .config import ABLATION_MODES, TrainConfig, load_config
from .data import NoiseSpec
from .dataset import generate_dataset, read_png16, write_png16
from .pipeline import evaluate, infer
from .train import resolve_threads, train_degradation, train_zooming


def _load_cfg(path: str | None) -> TrainConfig:
    return load_config(path) if path else TrainConfig()


def _setup_threads(cfg: TrainConfig | None = None) -> None:
    n = resolve_threads(cfg.threads if cfg else 0)
    if n > 0:
        torch.set_num_threads(n)


def _cmd_gen_data(args) -> int:
    if args.no_noise:
        noise = NoiseSpec.disabled()
    else:
        noise = NoiseSpec()
    blur = (0.0, 0.0) if args.no_blur else (args.blur_lo, args.blur_hi)
    h, w = (int(v) for v in args.size.split("x"))
    dirs = generate_dataset(args.out, args.scenes, args.ratio, args.warp_bound,
                            args.seed, size=(h, w), noise=noise, blur_sigma_range=blur)
    print(f"wrote {len(dirs)} samples to {args.out}")
    return 0


def _cmd_train_degradation(args) -> int:
    cfg = _load_cfg(args.config)
    _setup_threads(cfg)
    _, history = train_degradation(args.data, cfg, out_path=args.out)
    print(f"saved degradation checkpoint to {args.out} "
          f"(final l1 {history[-1]['data']:.5f})")
    return 0


def _cmd_train(args) -> int:
    cfg = _load_cfg(args.config)
    _setup_threads(cfg)
    deg = load_checkpoint(args.deg_ckpt, expect_kind="degradation") if args.deg_ckpt else None
    _, info = train_zooming(args.data, deg, cfg, ablation=args.ablation, out_path=args.out)
    print(f"saved zooming checkpoint to {args.out} "
          f"(final loss {info['history'][-1]['loss']:.5f})")
    return 0


def _cmd_infer(args) -> int:
    _setup_threads()
    short = read_png16(args.short)
    tele = read_png16(args.tele)
    sr = infer(short, tele, args.ckpt)
    write_png16(args.out, sr)
    print(f"wrote {args.out}")
    return 0


def _cmd_eval(args) -> int:
    _setup_threads()
    report = evaluate(args.data, args.ckpt)
    csv_path = args.report
    with open(csv_path, "w") as f:
        f.write(report.to_csv())
    summary = report.summary()
    with open(os.path.splitext(csv_path)[0] + ".txt", "w") as f:
        f.write(summary + "\n")
    print(summary)
    print(f"wrote {csv_path}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="dzsr",
                                description="dual-zoom super-resolution toolkit")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", help="synthesize a dual-zoom dataset")
    g.add_argument("--scenes", type=int, required=True)
    g.add_argument("--ratio", type=int, default=2)
    g.add_argument("--warp-bound", type=float, default=3.0)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", required=True)
    g.add_argument("--size", default="128x128", help="scene HxW")
    g.add_argument("--no-noise", action="store_true")
    g.add_argument("--no-blur", action="store_true")
    g.add_argument("--blur-lo", type=float, default=0.8)
    g.add_argument("--blur-hi", type=float, default=2.4)
    g.set_defaults(func=_cmd_gen_data)

    t1 = sub.add_parser("train-degradation", help="stage 1: fit the degradation net")
    t1.add_argument("--data", required=True)
    t1.add_argument("--config", default=None)
    t1.add_argument("--out", required=True)
    t1.set_defaults(func=_cmd_train_degradation)

    t2 = sub.add_parser("train", help="stage 2: train the zooming net")
    t2.add_argument("--data", required=True)
    t2.add_argument("--deg-ckpt", default=None)
    t2.add_argument("--config", default=None)
    t2.add_argument("--ablation", default="full", choices=ABLATION_MODES)
    t2.add_argument("--out", required=True)
    t2.set_defaults(func=_cmd_train)

    i = sub.add_parser("infer", help="super-resolve one capture pair")
    i.add_argument("--short", required=True)
    i.add_argument("--tele", required=True)
    i.add_argument("--ckpt", required=True)
    i.add_argument("--out", required=True)
    i.set_defaults(func=_cmd_infer)

    e = sub.add_parser("eval", help="full/corner metrics over a dataset")
    e.add_argument("--data", required=True)
    e.add_argument("--ckpt", required=True)
    e.add_argument("--report", required=True)
    e.set_defaults(func=_cmd_eval)
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
