"""Synthesize, train both toy stages, dehaze with the trained pipeline and evaluate it against DCP.

    python scripts/end_to_end.py --config my_config.json --out runs/e2e
"""
import argparse
import json
from pathlib import Path

import torch

from prodehaze.config import RunConfig
from prodehaze.pipeline import cmd_dehaze, cmd_eval, cmd_synth, cmd_train


def main():
    ap = argparse.ArgumentParser(description=__doc__.split("\n")[0])
    ap.add_argument("--config", help="RunConfig JSON; defaults are used when omitted")
    ap.add_argument("--out", default="runs/e2e")
    args = ap.parse_args()
    torch.set_num_threads(1)

    base = RunConfig.from_json(Path(args.config).read_text()) if args.config else RunConfig(n_images=16)
    out = Path(args.out)
    data = out / "data"
    ckpt = out / "ckpt"
    cfg = base.with_overrides(dataset_root=str(data), out_dir=str(ckpt),
                              spr_checkpoint=str(ckpt / "spr.ckpt"), hcr_checkpoint=str(ckpt / "hcr.ckpt"))
    cmd_synth(cfg.with_overrides(out_dir=str(data)))
    cmd_train(cfg, "spr")
    cmd_train(cfg, "hcr")
    results = {}
    for method in ("dcp", "prodehaze-toy"):
        res = out / method
        cmd_dehaze(cfg.with_overrides(out_dir=str(res)), method)
        results[method] = cmd_eval(res, data / "clean", out / f"{method}_report.json")["means"]
    results["hazy"] = cmd_eval(data / "hazy", data / "clean", out / "hazy_report.json")["means"]
    print(json.dumps(results, indent=2, sort_keys=True))


if __name__ == "__main__":
    main()
