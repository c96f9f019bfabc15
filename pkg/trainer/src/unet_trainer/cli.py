"""Command line: train a model, run inference, benchmark latency."""

from __future__ import annotations

import argparse
import json
import logging
import sys

from .dataset import DatasetError, NormalizationError, Sample, SplitDataset
from .infer import benchmark_latency, infer_to_egrid
from .train import TrainConfig, TrainingError, evaluate, load_checkpoint, train


def build_parser():
    parser = argparse.ArgumentParser(prog="unet-trainer")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train on a generated dataset")
    p.add_argument("--dataset", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--epochs", type=int, default=50)
    p.add_argument("--batch-size", type=int, default=16)
    p.add_argument("--learning-rate", type=float, default=2e-3)
    p.add_argument("--base-width", type=int, default=16)
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("infer", help="predict a modulus image")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--sample", required=True)
    p.add_argument("--out", required=True)

    p = sub.add_parser("benchmark", help="per-sample inference latency")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--sample", required=True)
    p.add_argument("--n", type=int, default=100)

    p = sub.add_parser("evaluate", help="NMSE over a dataset split")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--dataset", required=True)
    p.add_argument("--split", default="test")
    return parser


def main(argv=None):
    logging.basicConfig(level=logging.INFO)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else 1

    try:
        if args.command == "train":
            cfg = TrainConfig(epochs=args.epochs, batch_size=args.batch_size,
                              learning_rate=args.learning_rate,
                              base_width=args.base_width, seed=args.seed)
            ckpt, curve = train(args.dataset, cfg, args.out)
            best = min(r["val_nmse"] for r in curve if r["val_nmse"] is not None)
            print(json.dumps({"status": "ok", "checkpoint": ckpt,
                              "best_val_nmse": best}))
        elif args.command == "infer":
            model, _ = load_checkpoint(args.checkpoint)
            infer_to_egrid(model, Sample.load(args.sample), args.out)
            print(json.dumps({"status": "ok", "out": args.out}))
        elif args.command == "benchmark":
            model, _ = load_checkpoint(args.checkpoint)
            latency = benchmark_latency(model, Sample.load(args.sample), args.n)
            print(json.dumps({"status": "ok", "seconds_per_sample": latency}))
        elif args.command == "evaluate":
            import torch
            from .train import _loader
            model, payload = load_checkpoint(args.checkpoint)
            cfg = TrainConfig(**payload.get("config", {})) \
                if payload.get("config") else TrainConfig()
            split = SplitDataset(args.dataset, args.split)
            nmse = evaluate(model, _loader(split, cfg, shuffle=False), "cpu")
            print(json.dumps({"status": "ok", "split": args.split,
                              "nmse": nmse}))
        return 0
    except (DatasetError, NormalizationError, TrainingError, OSError,
            ValueError) as exc:
        print(json.dumps({"error": type(exc).__name__, "message": str(exc)}),
              file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
