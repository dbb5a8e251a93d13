"""The ``tl`` command line: config-driven training, sampling and studies."""

from __future__ import annotations

import argparse
import sys

from .config import load_config
from .errors import VqgridError


def _add_config_arg(p):
    p.add_argument("config", help="path to a run configuration file")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="tl", description="two-stage discrete-latent image synthesis")
    sub = parser.add_subparsers(dest="command", required=True)

    for name in ("train-vqgan", "train-transformer", "f-study",
                 "ordering-study", "speed-compare", "kmeans-baseline"):
        p = sub.add_parser(name)
        _add_config_arg(p)
        p.add_argument("--out", help="override the output directory")
        p.add_argument("--seed", type=int, help="override the seed")
        p.add_argument("--scan-order", help="override the scan order kind")

    p = sub.add_parser("sample")
    _add_config_arg(p)
    p.add_argument("--out", help="override the output directory")
    p.add_argument("--seed", type=int)
    p.add_argument("--scan-order")
    p.add_argument("--width", type=int, help="grid width in latent cells")
    p.add_argument("--height", type=int, help="grid height in latent cells")
    p.add_argument("--temperature", type=float)
    p.add_argument("--top-k", type=int, dest="top_k")
    p.add_argument("--coords", action="store_true",
                   help="prepend window-coordinate tokens while sliding")
    p.add_argument("--n-samples", type=int, dest="n_samples")

    p = sub.add_parser("reconstruct")
    _add_config_arg(p)
    p.add_argument("--in", dest="in_dir", help="directory of images to reconstruct")
    p.add_argument("--out", help="override the output directory")

    p = sub.add_parser("make-data", help="generate the synthetic shapes dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--n", type=int, default=64)
    p.add_argument("--size", type=int, default=32)
    p.add_argument("--seed", type=int, default=0)

    return parser


def _apply_overrides(cfg, args):
    if getattr(args, "out", None):
        cfg.out_dir = args.out
    if getattr(args, "seed", None) is not None:
        cfg.seed = args.seed
    if getattr(args, "scan_order", None):
        cfg.scan_order = args.scan_order
    for name in ("width", "height", "temperature", "top_k", "n_samples"):
        value = getattr(args, name, None)
        if value is not None:
            setattr(cfg.sampling, name, value)
    if getattr(args, "coords", False):
        cfg.sampling.coords = True
    return cfg


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "make-data":
            from .data import make_synthetic_dataset
            path = make_synthetic_dataset(args.out, n=args.n, size=args.size,
                                          seed=args.seed)
            print(f"wrote dataset to {path}")
            return 0

        cfg = _apply_overrides(load_config(args.config), args)
        if args.command == "train-vqgan":
            from .train import run_train_vqgan
            result = run_train_vqgan(cfg)
            print(f"codec: {result['codec']}  rec_error={result['rec_error']:.5f} "
                  f"codebook_usage={result['codebook_usage']:.2%}")
        elif args.command == "train-transformer":
            from .train import run_train_transformer
            result = run_train_transformer(cfg)
            print(f"transformer: {result['transformer']}  "
                  f"final_nll={result['final_nll']:.4f}")
        elif args.command == "sample":
            from .train import run_sample
            result = run_sample(cfg)
            print("\n".join(result["samples"]))
        elif args.command == "reconstruct":
            from .train import run_reconstruct
            result = run_reconstruct(cfg, in_dir=args.in_dir)
            print(f"reconstructed {result['count']} images into {result['out']}")
        elif args.command == "kmeans-baseline":
            from .experiments import run_kmeans_baseline
            result = run_kmeans_baseline(cfg)
            print(f"codec: {result['codec']}  k={result['k']} "
                  f"rec_error={result['rec_error']:.5f}")
        elif args.command == "f-study":
            from .experiments import run_f_study
            result = run_f_study(cfg)
            print(result["report"])
        elif args.command == "ordering-study":
            from .experiments import run_ordering_study
            result = run_ordering_study(cfg)
            print(result["report"])
            if result["flag"]:
                print(result["flag"])
        elif args.command == "speed-compare":
            from .experiments import run_speed_compare
            result = run_speed_compare(cfg)
            print(f"speedup: {result['speedup']:.2f}x "
                  f"(sequence ratio {result['sequence_ratio']:.1f})")
    except VqgridError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
