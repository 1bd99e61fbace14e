"""``prodehaze`` command line.

    prodehaze synth     --config cfg.json --seed 7 --out data/
    prodehaze prompt    --input img.png --out out/
    prodehaze mask      --input img.png --out out/
    prodehaze train-toy --stage spr|hcr [--teacher-forced] --config cfg.json
    prodehaze dehaze    --method dcp|prodehaze-toy --config cfg.json --out results/
    prodehaze eval      --pred results/ --gt data/clean --out report.json
    prodehaze ablate    --config cfg.json --out ablation/

Flags override values from ``--config``. Failures print one JSON object to
stderr and exit non-zero. ``PRODEHAZE_LOG`` sets the log level.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import torch

from . import pipeline
from .config import RunConfig

LOG_LEVELS = {"error": logging.ERROR, "info": logging.INFO, "debug": logging.DEBUG}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON RunConfig file")
    common.add_argument("--seed", type=int)
    common.add_argument("--out", dest="out_dir")

    parser = argparse.ArgumentParser(prog="prodehaze", description=__doc__.split("\n")[0])
    sub = parser.add_subparsers(dest="command", required=True)
    p = sub.add_parser("synth", parents=[common], help="synthesize hazy/clean pairs")
    p.add_argument("--n", dest="n_images", type=int)
    p.add_argument("--size", dest="image_size", type=int)
    for name in ("prompt", "mask"):
        p = sub.add_parser(name, parents=[common])
        p.add_argument("--input", required=True)
    p = sub.add_parser("train-toy", parents=[common])
    p.add_argument("--stage", choices=["spr", "hcr"], required=True)
    p.add_argument("--teacher-forced", action="store_true", default=None)
    p.add_argument("--dataset", dest="dataset_root")
    p.add_argument("--spr-checkpoint")
    p.add_argument("--hcr-checkpoint")
    p = sub.add_parser("dehaze", parents=[common])
    p.add_argument("--method", choices=["dcp", "prodehaze-toy"])
    p.add_argument("--input", dest="input_dir")
    p.add_argument("--dataset", dest="dataset_root")
    p.add_argument("--spr-checkpoint")
    p.add_argument("--hcr-checkpoint")
    p = sub.add_parser("eval", parents=[common])
    p.add_argument("--pred", required=True)
    p.add_argument("--gt", required=True)
    p = sub.add_parser("ablate", parents=[common])
    p.add_argument("--dataset", dest="dataset_root")
    return parser


CONFIG_FLAGS = ("seed", "out_dir", "n_images", "image_size", "teacher_forced", "dataset_root",
                "spr_checkpoint", "hcr_checkpoint", "method", "input_dir")


def resolve_config(args) -> RunConfig:
    base = RunConfig()
    if args.config:
        base = RunConfig.from_json(Path(args.config).read_text())
    overrides = {k: getattr(args, k) for k in CONFIG_FLAGS if hasattr(args, k)}
    return base.with_overrides(**overrides)


def run(args, config: RunConfig):
    cmd = args.command
    if cmd == "synth":
        return pipeline.cmd_synth(config)
    if cmd == "prompt":
        return pipeline.cmd_prompt(config, args.input)
    if cmd == "mask":
        return pipeline.cmd_mask(config, args.input)
    if cmd == "train-toy":
        return pipeline.cmd_train(config, args.stage)
    if cmd == "dehaze":
        return pipeline.cmd_dehaze(config, config.method)
    if cmd == "eval":
        return pipeline.cmd_eval(args.pred, args.gt, args.out_dir or "report.json")
    if cmd == "ablate":
        return pipeline.cmd_ablate(config)
    raise ValueError(f"unknown command {cmd}")


def main(argv=None) -> int:
    level = LOG_LEVELS.get(os.environ.get("PRODEHAZE_LOG", "info").lower(), logging.INFO)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    torch.set_num_threads(1)
    args = build_parser().parse_args(argv)
    try:
        config = resolve_config(args)
        print(config.to_json(), end="")
        result = run(args, config)
    except Exception as exc:
        logging.getLogger("prodehaze").debug("command failed", exc_info=True)
        print(json.dumps({"error": type(exc).__name__, "message": str(exc), "command": args.command}), file=sys.stderr)
        return 1
    if isinstance(result, dict):
        print(json.dumps(result, sort_keys=True))
    elif result is not None:
        logging.getLogger("prodehaze").info("wrote %s", result)
    return 0


if __name__ == "__main__":
    sys.exit(main())
