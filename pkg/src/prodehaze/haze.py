"""Synthetic hazy/clean pairs from the atmospheric scattering model.

    I = J * t + A * (1 - t),   t = exp(-beta * d)

Depth maps and clean scenes are procedural; nothing here is estimated from data.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass

import numpy as np

DEPTH_KINDS = ("linear-ramp", "radial", "value-noise")


@dataclass(frozen=True)
class HazeParams:
    atmospheric_light: tuple[float, float, float]
    beta: float
    depth_kind: str
    seed: int

    def __post_init__(self):
        a = tuple(float(v) for v in self.atmospheric_light)
        if len(a) != 3 or not all(0.0 <= v <= 1.0 for v in a):
            raise ValueError(f"atmospheric light must be 3 values in [0, 1], got {a}")
        if not self.beta >= 0:
            raise ValueError(f"beta must be >= 0, got {self.beta}")
        if self.depth_kind not in DEPTH_KINDS:
            raise ValueError(f"unknown depth kind {self.depth_kind!r}")
        object.__setattr__(self, "atmospheric_light", a)
        object.__setattr__(self, "beta", float(self.beta))
        object.__setattr__(self, "seed", int(self.seed))

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "HazeParams":
        d = json.loads(text)
        unknown = set(d) - {"atmospheric_light", "beta", "depth_kind", "seed"}
        if unknown:
            raise ValueError(f"unknown HazeParams keys: {sorted(unknown)}")
        return cls(tuple(d["atmospheric_light"]), d["beta"], d["depth_kind"], d["seed"])


@dataclass(frozen=True)
class HazeRanges:
    """Sampling ranges. ``a_range`` is one (lo, hi) pair or one pair per channel."""

    a_range: tuple = (0.7, 1.0)
    beta_range: tuple = (0.5, 2.0)
    depth_kinds: tuple = DEPTH_KINDS

    def channel_ranges(self):
        a = np.asarray(self.a_range, dtype=np.float64)
        return np.broadcast_to(a, (3, 2)) if a.ndim == 1 else a


def _value_noise(height, width, rng, cells=4, octaves=3):
    ys = np.linspace(0.0, 1.0, height)
    xs = np.linspace(0.0, 1.0, width)
    out = np.zeros((height, width))
    amp = 1.0
    for o in range(octaves):
        n = cells * 2**o
        grid = rng.random((n + 1, n + 1))
        gy, gx = ys * n, xs * n
        y0 = np.minimum(gy.astype(int), n - 1)
        x0 = np.minimum(gx.astype(int), n - 1)
        fy = (gy - y0)[:, None]
        fx = (gx - x0)[None, :]
        # smoothstep fade between lattice values
        fy, fx = fy * fy * (3 - 2 * fy), fx * fx * (3 - 2 * fx)
        g00 = grid[np.ix_(y0, x0)]
        g01 = grid[np.ix_(y0, x0 + 1)]
        g10 = grid[np.ix_(y0 + 1, x0)]
        g11 = grid[np.ix_(y0 + 1, x0 + 1)]
        top = g00 * (1 - fx) + g01 * fx
        bot = g10 * (1 - fx) + g11 * fx
        out += amp * (top * (1 - fy) + bot * fy)
        amp *= 0.5
    return out


def _normalize(d):
    lo, hi = d.min(), d.max()
    if hi - lo <= 0:
        return np.zeros_like(d)
    return (d - lo) / (hi - lo)


def generate_depth(kind: str, height: int, width: int, seed: int = 0) -> np.ndarray:
    """Synthetic depth in [0, 1], shape ``(H, W, 1)``.

    ``linear-ramp`` grows left to right, ``radial`` grows with distance from the
    image center, ``value-noise`` is seeded multi-octave lattice noise.
    """
    if height < 1 or width < 1:
        raise ValueError("height and width must be >= 1")
    if kind == "linear-ramp":
        d = np.broadcast_to(np.linspace(0.0, 1.0, width)[None, :], (height, width))
        d = np.array(d) if width > 1 else np.zeros((height, width))
    elif kind == "radial":
        yy, xx = np.mgrid[0:height, 0:width].astype(np.float64)
        r = np.hypot(yy - (height - 1) / 2.0, xx - (width - 1) / 2.0)
        d = _normalize(r)
    elif kind == "value-noise":
        d = _normalize(_value_noise(height, width, np.random.default_rng(seed)))
    else:
        raise ValueError(f"unknown depth kind {kind!r}")
    return d[:, :, None].astype(np.float64)


def synthesize_transmission(depth, beta: float) -> np.ndarray:
    if beta < 0:
        raise ValueError(f"beta must be >= 0, got {beta}")
    depth = np.asarray(depth, dtype=np.float64)
    if depth.ndim == 2:
        depth = depth[:, :, None]
    if depth.shape[2] != 1:
        raise ValueError("depth must be single-channel")
    return np.exp(-beta * depth)


def apply_asm(clean, transmission, atmospheric_light, clamp: bool = True) -> np.ndarray:
    clean = np.asarray(clean, dtype=np.float64)
    t = np.asarray(transmission, dtype=np.float64)
    if t.ndim == 2:
        t = t[:, :, None]
    if clean.shape[:2] != t.shape[:2]:
        raise ValueError(f"shape mismatch: clean {clean.shape[:2]} vs transmission {t.shape[:2]}")
    a = np.asarray(atmospheric_light, dtype=np.float64).reshape(1, 1, -1)
    hazy = clean * t + a * (1.0 - t)
    return np.clip(hazy, 0.0, 1.0) if clamp else hazy


def sample_haze_params(seed: int, ranges: HazeRanges = HazeRanges()) -> HazeParams:
    a_rng = ranges.channel_ranges()
    b_lo, b_hi = ranges.beta_range
    if np.any(a_rng[:, 0] > a_rng[:, 1]) or b_lo > b_hi or not ranges.depth_kinds:
        raise ValueError(f"empty sampling range in {ranges}")
    if np.any(a_rng < 0) or np.any(a_rng > 1) or b_lo < 0:
        raise ValueError(f"ranges outside the valid parameter domain: {ranges}")
    rng = np.random.default_rng(seed)
    a = rng.uniform(a_rng[:, 0], a_rng[:, 1])
    beta = rng.uniform(b_lo, b_hi)
    kind = ranges.depth_kinds[int(rng.integers(len(ranges.depth_kinds)))]
    return HazeParams(tuple(a), beta, kind, int(rng.integers(2**31)))


def generate_clean_image(height: int, width: int, seed: int) -> np.ndarray:
    """Procedural haze-free scene: colored smooth texture plus a few hard-edged shapes.

    Every pixel keeps at least one dark channel value low, the way outdoor
    haze-free patches tend to.
    """
    rng = np.random.default_rng(seed)
    img = np.empty((height, width, 3))
    for c in range(3):
        img[:, :, c] = _normalize(_value_noise(height, width, rng, cells=2, octaves=4))
    img = 0.15 + 0.7 * img
    yy, xx = np.mgrid[0:height, 0:width]
    for _ in range(int(rng.integers(2, 5))):
        color = rng.random(3)
        y0, x0 = rng.integers(0, height), rng.integers(0, width)
        hh, ww = rng.integers(height // 8 + 1, height // 2 + 2), rng.integers(width // 8 + 1, width // 2 + 2)
        region = (yy >= y0) & (yy < y0 + hh) & (xx >= x0) & (xx < x0 + ww)
        img[region] = color
    # darken one channel per pixel so the dark channel of the clean scene stays small
    dark = np.argmin(img, axis=2)
    np.put_along_axis(img, dark[:, :, None], np.take_along_axis(img, dark[:, :, None], 2) * 0.25, axis=2)
    return np.clip(img, 0.0, 1.0)


def synthesize_pair(clean: np.ndarray, params: HazeParams) -> tuple[np.ndarray, np.ndarray]:
    """Return ``(hazy, transmission)`` for ``clean`` under ``params``."""
    h, w = clean.shape[:2]
    depth = generate_depth(params.depth_kind, h, w, params.seed)
    t = synthesize_transmission(depth, params.beta)
    return apply_asm(clean, t, params.atmospheric_light), t
