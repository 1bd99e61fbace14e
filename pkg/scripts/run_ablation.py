"""Run the four-way prompt / haze-mask ablation on the colour-cast probe set for one or more seeds.

    python scripts/run_ablation.py --seeds 0 1 2 --out runs/ablation

Each seed synthesizes its own probe set; the table lists mean CIEDE2000 per
configuration and seed, followed by the mean over seeds.
"""
import argparse
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from prodehaze.config import RunConfig
from prodehaze.pipeline import ABLATION_ROWS, cmd_ablate, cmd_synth


@dataclass
class ProbeSettings:
    a_range: list = field(default_factory=lambda: [[0.9, 1.0], [0.75, 0.85], [0.45, 0.6]])
    n_images: int = 24
    image_size: int = 32
    spr_steps: int = 2000

    def run_config(self, seed, root: Path) -> RunConfig:
        return RunConfig(seed=seed, a_range=self.a_range, n_images=self.n_images, image_size=self.image_size,
                         spr_steps=self.spr_steps, dataset_root=str(root / "data"), out_dir=str(root / "data"))


def main():
    ap = argparse.ArgumentParser(description=__doc__.split("\n")[0])
    ap.add_argument("--seeds", type=int, nargs="+", default=[0])
    ap.add_argument("--spr-steps", type=int, default=ProbeSettings.spr_steps)
    ap.add_argument("--out", default="runs/ablation")
    args = ap.parse_args()
    torch.set_num_threads(1)

    settings = ProbeSettings(spr_steps=args.spr_steps)
    table = {label: [] for label, _, _ in ABLATION_ROWS}
    for seed in args.seeds:
        root = Path(args.out) / f"seed_{seed}"
        cfg = settings.run_config(seed, root)
        cmd_synth(cfg)
        out = cmd_ablate(cfg.with_overrides(out_dir=str(root / "ablation")))
        for row in json.loads((out / "ablation.json").read_text()):
            table[row["config"]].append(row["ciede2000"])
        print(f"seed {seed} done", flush=True)

    header = "config".ljust(12) + "".join(f"{'s' + str(s):>8s}" for s in args.seeds) + f"{'mean':>8s}"
    print(header)
    for label, values in table.items():
        print(label.ljust(12) + "".join(f"{v:8.2f}" for v in values) + f"{np.mean(values):8.2f}")


if __name__ == "__main__":
    main()
