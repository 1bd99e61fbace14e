"""Dark channel prior, the classical DCP dehazer, and haze-aware sparse masks.

The mask pipeline per attention window:

    corr  = clamp01((m wq) (m wk)^T)
    topk  = indices of the k largest corr entries (row-major tie break)
    M_s   = -inf on topk, 1 - corr elsewhere
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.ndimage import minimum_filter

from .imaging import avg_pool


@dataclass(frozen=True)
class DcpMask:
    values: np.ndarray
    patch_size: int


@dataclass(frozen=True)
class MaskMatrix:
    n: int
    corr: np.ndarray
    topk_set: np.ndarray
    sparse: np.ndarray
    wq: np.ndarray
    wk: np.ndarray


def dark_channel(img, patch_size: int = 15) -> DcpMask:
    """Min over channels, then min over a ``patch_size`` square (edge-replicated borders).

    Used directly as the haze-density map: bright dark channel means dense haze.
    """
    img = np.asarray(img, dtype=np.float64)
    if img.ndim != 3 or img.shape[2] != 3:
        raise ValueError(f"dark_channel expects a 3-channel image, got shape {img.shape}")
    if patch_size < 1 or patch_size % 2 == 0:
        raise ValueError(f"patch_size must be odd and >= 1, got {patch_size}")
    per_pixel = img.min(axis=2)
    values = minimum_filter(per_pixel, size=patch_size, mode="nearest")
    return DcpMask(values=values[:, :, None], patch_size=patch_size)


def estimate_atmospheric_light(img, dcp: DcpMask, top_fraction: float = 0.001) -> np.ndarray:
    """Mean color of the pixels with the brightest 0.1% dark channel (at least one)."""
    img = np.asarray(img, dtype=np.float64)
    flat_dark = dcp.values.reshape(-1)
    n = max(1, int(math.floor(flat_dark.size * top_fraction)))
    order = np.argsort(-flat_dark, kind="stable")[:n]
    return img.reshape(-1, img.shape[2])[order].mean(axis=0)


def dcp_dehaze_baseline(img, patch_size: int = 15, omega: float = 0.95, t0: float = 0.1) -> np.ndarray:
    img = np.asarray(img, dtype=np.float64)
    a = estimate_atmospheric_light(img, dark_channel(img, patch_size))
    a_safe = np.maximum(a, 1e-6)
    t_hat = 1.0 - omega * dark_channel(img / a_safe, patch_size).values
    t_hat = np.maximum(t_hat, t0)
    return np.clip((img - a) / t_hat + a, 0.0, 1.0)


def init_mask_weights(n_l: int) -> tuple[np.ndarray, np.ndarray]:
    w = np.full(n_l, 1.0 / math.sqrt(n_l))
    return w.copy(), w.copy()


def correlation_map(m_flat, wq, wk, clamp: bool = True) -> np.ndarray:
    """``(m wq)(m wk)^T`` for a length-N mask vector and 1 x N_l weight rows.

    Evaluated in the equivalent factored form ``(wq . wk) m m^T``, which is
    exactly symmetric in floating point so mirrored entries tie exactly.
    """
    m = np.asarray(m_flat, dtype=np.float64).reshape(-1, 1)
    wq = np.asarray(wq, dtype=np.float64).reshape(1, -1)
    wk = np.asarray(wk, dtype=np.float64).reshape(1, -1)
    if wq.shape != wk.shape or wq.shape[1] < 1:
        raise ValueError(f"wq and wk must be equal-length rows, got {wq.shape} and {wk.shape}")
    corr = float(wq[0] @ wk[0]) * (m @ m.T)
    return np.clip(corr, 0.0, 1.0) if clamp else corr


def topk_indices(corr, k: int) -> np.ndarray:
    """``(k, 2)`` array of the k largest entries; ties go to the smaller row-major index."""
    corr = np.asarray(corr)
    n_total = corr.size
    if not 0 <= k <= n_total:
        raise ValueError(f"k must lie in [0, {n_total}], got {k}")
    flat = np.argsort(-corr.reshape(-1), kind="stable")[:k]
    return np.stack(np.unravel_index(flat, corr.shape), axis=1)


def build_sparse_mask(corr, indices) -> np.ndarray:
    sparse = 1.0 - np.asarray(corr, dtype=np.float64)
    idx = np.asarray(indices, dtype=int).reshape(-1, 2)
    sparse[idx[:, 0], idx[:, 1]] = -np.inf
    return sparse


def default_k(n: int, k_fraction: float = 0.25) -> int:
    return int(math.ceil(k_fraction * n * n))


def haze_mask(m_flat, wq, wk, k: int | None = None, k_fraction: float = 0.25) -> MaskMatrix:
    m = np.asarray(m_flat, dtype=np.float64).reshape(-1)
    n = m.size
    k = default_k(n, k_fraction) if k is None else k
    corr = correlation_map(m, wq, wk)
    idx = topk_indices(corr, k)
    return MaskMatrix(n=n, corr=corr, topk_set=idx, sparse=build_sparse_mask(corr, idx),
                      wq=np.asarray(wq, dtype=np.float64), wk=np.asarray(wk, dtype=np.float64))


def pooled_window_vectors(dcp_values, feature_hw, window) -> np.ndarray:
    """Pool the DCP map to ``feature_hw`` and flatten each window row-major.

    Returns ``(n_windows, H_win*W_win)`` in row-major window order.
    """
    from .attention import window_partition

    h, w = feature_hw
    full = np.asarray(dcp_values, dtype=np.float64)
    if full.ndim == 2:
        full = full[:, :, None]
    if full.shape[0] % h or full.shape[1] % w or full.shape[0] // h != full.shape[1] // w:
        raise ValueError(f"cannot pool a {full.shape[:2]} mask to {feature_hw}")
    pooled = avg_pool(full, full.shape[0] // h)
    return window_partition(pooled, window)[..., 0]


def window_sparse_masks(dcp_values, feature_hw, window, wq, wk, k_fraction: float = 0.25) -> np.ndarray:
    """Per-window sparse masks ``(n_windows, N, N)`` for one decoder stage."""
    vecs = pooled_window_vectors(dcp_values, feature_hw, window)
    return np.stack([haze_mask(v, wq, wk, k_fraction=k_fraction).sparse for v in vecs])
