"""Run configuration and seed derivation."""
from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field

from .haze import DEPTH_KINDS, HazeRanges
from .refiner import RefinerConfig


def derive_seed(root: int, label: str) -> int:
    """Component seed: first 4 bytes of sha256("<root>/<label>"), big-endian."""
    digest = hashlib.sha256(f"{int(root)}/{label}".encode()).digest()
    return int.from_bytes(digest[:4], "big")


@dataclass
class RunConfig:
    seed: int = 0
    dataset_root: str = "data"
    out_dir: str = "out"
    n_images: int = 20
    image_size: int = 32
    a_range: list = field(default_factory=lambda: [0.7, 1.0])
    beta_range: list = field(default_factory=lambda: [0.5, 2.0])
    depth_kinds: list = field(default_factory=lambda: list(DEPTH_KINDS))
    k_fraction: float = 0.25
    dcp_patch: int = 3
    window: list = field(default_factory=lambda: [4, 4])
    T: int = 50
    beta_min: float = 1e-4
    beta_max: float = 0.02
    spr_steps: int = 200
    spr_lr: float = 0.5
    hcr_steps: int = 200
    hcr_lr: float = 0.1
    teacher_forced: bool = False
    train_fraction: float = 0.75
    spr_checkpoint: str = ""
    hcr_checkpoint: str = ""
    method: str = "dcp"
    input_dir: str = ""

    def __post_init__(self):
        if not 0.0 <= self.k_fraction <= 1.0:
            raise ValueError(f"k_fraction must be in [0, 1], got {self.k_fraction}")
        if self.dcp_patch < 1 or self.dcp_patch % 2 == 0:
            raise ValueError(f"dcp_patch must be odd, got {self.dcp_patch}")
        if len(self.window) != 2:
            raise ValueError("window must be [H_win, W_win]")
        self.haze_ranges()

    def haze_ranges(self) -> HazeRanges:
        a = self.a_range
        a = tuple(tuple(p) for p in a) if isinstance(a[0], (list, tuple)) else tuple(a)
        return HazeRanges(a_range=a, beta_range=tuple(self.beta_range), depth_kinds=tuple(self.depth_kinds))

    def refiner_config(self, use_mask: bool = True, seed: int | None = None) -> RefinerConfig:
        return RefinerConfig(window=tuple(self.window), k_fraction=self.k_fraction, dcp_patch=self.dcp_patch,
                             use_mask=use_mask, seed=derive_seed(self.seed, "refiner-init") if seed is None else seed)

    def to_json(self) -> str:
        return json.dumps(dataclasses.asdict(self), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(d) - known)
        if unknown:
            raise ValueError(f"unknown config keys: {unknown}")
        return cls(**d)

    @classmethod
    def from_json(cls, text: str) -> "RunConfig":
        return cls.from_dict(json.loads(text))

    def with_overrides(self, **overrides) -> "RunConfig":
        d = dataclasses.asdict(self)
        d.update({k: v for k, v in overrides.items() if v is not None})
        return RunConfig.from_dict(d)
