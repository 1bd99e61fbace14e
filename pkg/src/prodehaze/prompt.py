"""Haar feature extraction, the toy latent encoder/decoder and condition assembly."""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

LATENT_CHANNELS = 4
LATENT_FACTOR = 8
PROJECTION_SEED = 20240817


@dataclass(frozen=True)
class HaarSubbands:
    ll: np.ndarray
    lh: np.ndarray
    hl: np.ndarray
    hh: np.ndarray


@dataclass(frozen=True)
class StructuralPrompt:
    x_high: np.ndarray
    kernel_weights: np.ndarray


def haar_dwt(img) -> HaarSubbands:
    """Single-level orthonormal 2-D Haar transform, applied per channel.

    For each 2x2 block ``[[a, b], [c, d]]``::

        ll = (a + b + c + d) / 2    lh = (a + b - c - d) / 2
        hl = (a - b + c - d) / 2    hh = (a - b - c + d) / 2
    """
    x = np.asarray(img, dtype=np.float64)
    if x.ndim == 2:
        x = x[:, :, None]
    h, w = x.shape[:2]
    if h % 2 or w % 2:
        raise ValueError(f"haar_dwt needs even height and width, got {h}x{w}")
    a = x[0::2, 0::2]
    b = x[0::2, 1::2]
    c = x[1::2, 0::2]
    d = x[1::2, 1::2]
    return HaarSubbands(
        ll=(a + b + c + d) / 2,
        lh=(a + b - c - d) / 2,
        hl=(a - b + c - d) / 2,
        hh=(a - b - c + d) / 2,
    )


def inverse_haar(bands: HaarSubbands) -> np.ndarray:
    ll, lh, hl, hh = bands.ll, bands.lh, bands.hl, bands.hh
    h, w, c = ll.shape
    out = np.empty((2 * h, 2 * w, c))
    out[0::2, 0::2] = (ll + lh + hl + hh) / 2
    out[0::2, 1::2] = (ll + lh - hl - hh) / 2
    out[1::2, 0::2] = (ll - lh + hl - hh) / 2
    out[1::2, 1::2] = (ll - lh - hl + hh) / 2
    return out


def default_prompt_kernel(channels: int = 3) -> np.ndarray:
    """Point-wise fusion weights (3C x C) averaging the three detail bands."""
    eye = np.eye(channels)
    return np.vstack([eye, eye, eye]) / 3.0


def stack_high_bands(bands: HaarSubbands) -> np.ndarray:
    # channel order LH, HH, HL
    return np.concatenate([bands.lh, bands.hh, bands.hl], axis=2)


def extract_high_freq_prompt(img, kernel_weights=None) -> StructuralPrompt:
    """Fuse the Haar detail bands with a point-wise (1x1) mixing kernel."""
    bands = haar_dwt(img)
    c = bands.lh.shape[2]
    kernel = default_prompt_kernel(c) if kernel_weights is None else np.asarray(kernel_weights, dtype=np.float64)
    if kernel.shape != (3 * c, c):
        raise ValueError(f"kernel must have shape {(3 * c, c)}, got {kernel.shape}")
    x_high = stack_high_bands(bands) @ kernel
    return StructuralPrompt(x_high=x_high, kernel_weights=kernel)


@lru_cache(maxsize=None)
def projection_matrix(factor: int = LATENT_FACTOR, channels: int = 3, seed: int = PROJECTION_SEED) -> np.ndarray:
    """Rows of the fixed latent projection, shape ``(4, factor*factor*channels)``.

    Rows are orthogonal with norm ``1/factor``. The first ``channels`` rows are
    the per-channel block-mean directions, so those latent channels hold block
    means exactly; the remaining rows are seeded random directions orthogonal
    to them.
    """
    if channels > LATENT_CHANNELS:
        raise ValueError(f"at most {LATENT_CHANNELS} input channels are supported")
    n = factor * factor * channels
    basis = np.zeros((n, n))
    # space-to-depth layout is (dy, dx, c) flattened, so channel c sits at stride `channels`
    for c in range(channels):
        basis[c::channels, c] = 1.0 / factor
    basis[:, channels:] = np.random.default_rng(seed).standard_normal((n, n - channels))
    q, _ = np.linalg.qr(basis[:, :LATENT_CHANNELS])
    # QR may flip signs; keep DC directions positive
    q *= np.sign(np.sum(q, axis=0, keepdims=True) + 1e-300)
    q[:, :channels] = np.abs(q[:, :channels])
    proj = q.T / factor
    proj.setflags(write=False)
    return proj


def space_to_depth(img: np.ndarray, factor: int) -> np.ndarray:
    h, w, c = img.shape
    if h % factor or w % factor:
        raise ValueError(f"image size {h}x{w} is not divisible by {factor}")
    x = img.reshape(h // factor, factor, w // factor, factor, c).transpose(0, 2, 1, 3, 4)
    return x.reshape(h // factor, w // factor, factor * factor * c)


def depth_to_space(x: np.ndarray, factor: int, channels: int) -> np.ndarray:
    h, w, _ = x.shape
    x = x.reshape(h, w, factor, factor, channels).transpose(0, 2, 1, 3, 4)
    return x.reshape(h * factor, w * factor, channels)


def encode_latent(img, factor: int = LATENT_FACTOR) -> np.ndarray:
    """Toy encoder: space-to-depth by ``factor`` then the fixed 4-channel projection.

    Use ``factor=LATENT_FACTOR // 2`` for half-resolution inputs such as the
    structural prompt so that both latents share a spatial grid.
    """
    x = np.asarray(img, dtype=np.float64)
    if x.ndim == 2:
        x = x[:, :, None]
    proj = projection_matrix(factor, x.shape[2])
    return space_to_depth(x, factor) @ proj.T


def latent_pinv(latent, factor: int = LATENT_FACTOR, channels: int = 3) -> np.ndarray:
    """Least-squares inverse of :func:`encode_latent` (blocky, full resolution)."""
    proj = projection_matrix(factor, channels)
    blocks = np.asarray(latent) @ (proj * factor * factor)
    return depth_to_space(blocks, factor, channels)


SMOOTH_KERNEL = np.outer([1.0, 2.0, 1.0], [1.0, 2.0, 1.0]) / 16.0


def smooth3x3(x: np.ndarray) -> np.ndarray:
    """Depthwise 3x3 binomial filter with edge replication."""
    p = np.pad(x, ((1, 1), (1, 1), (0, 0)), mode="edge")
    h, w = x.shape[:2]
    out = np.zeros_like(x)
    for dy in range(3):
        for dx in range(3):
            out += SMOOTH_KERNEL[dy, dx] * p[dy : dy + h, dx : dx + w]
    return out


def upsample_stage(x: np.ndarray) -> np.ndarray:
    """Nearest x2 followed by the binomial filter, i.e. bilinear x2 in the interior."""
    return smooth3x3(np.repeat(np.repeat(x, 2, axis=0), 2, axis=1))


def decode_latent(latent, factor: int = LATENT_FACTOR, channels: int = 3) -> np.ndarray:
    """Plain toy decoder: block means from the latent, then ``log2(factor)`` upsample stages."""
    z = np.asarray(latent, dtype=np.float64)
    x = z[:, :, :channels]
    for _ in range(int(np.log2(factor))):
        x = upsample_stage(x)
    return x


def build_condition(latent_in, latent_high) -> np.ndarray:
    """Channel concatenation, input latent first."""
    a = np.asarray(latent_in, dtype=np.float64)
    b = np.asarray(latent_high, dtype=np.float64)
    if a.shape[:2] != b.shape[:2]:
        raise ValueError(f"spatial mismatch: {a.shape[:2]} vs {b.shape[:2]}")
    return np.concatenate([a, b], axis=2)


def image_condition(x_in, kernel_weights=None, use_prompt: bool = True) -> np.ndarray:
    """Encode a hazy input and its structural prompt into the diffusion condition.

    With ``use_prompt=False`` the prompt half is zero, which keeps the
    condition shape fixed for ablations.
    """
    z_in = encode_latent(x_in)
    if not use_prompt:
        return build_condition(z_in, np.zeros_like(z_in))
    prompt = extract_high_freq_prompt(x_in, kernel_weights)
    z_high = encode_latent(prompt.x_high, factor=LATENT_FACTOR // 2)
    return build_condition(z_in, z_high)
