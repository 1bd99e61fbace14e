"""Window partitioning and mask-modulated window self-attention.

Attention logits are ``(Q K^T) * M_s / sqrt(n_l)`` where ``n_l`` is the token
count used for scaling (the window's token count unless given). An entry with
``M_s == -inf`` forces its logit to ``-inf`` whatever the sign of ``Q K^T``;
rows with every entry masked output zeros.

numpy functions are the reference; the ``*_torch`` twins are used for training.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, fields

import numpy as np
import torch
from scipy.special import erf


def window_partition(feature, window) -> np.ndarray:
    """``(H, W, D)`` -> ``(n_windows, H_win*W_win, D)``, windows and tokens row-major."""
    x = np.asarray(feature)
    h, w, d = x.shape
    wh, ww = window
    if h % wh or w % ww:
        raise ValueError(f"feature {h}x{w} is not divisible by window {wh}x{ww}")
    x = x.reshape(h // wh, wh, w // ww, ww, d).transpose(0, 2, 1, 3, 4)
    return x.reshape(-1, wh * ww, d)


def window_merge(windows, feature_hw, window) -> np.ndarray:
    h, w = feature_hw
    wh, ww = window
    x = np.asarray(windows)
    d = x.shape[-1]
    x = x.reshape(h // wh, w // ww, wh, ww, d).transpose(0, 2, 1, 3, 4)
    return x.reshape(h, w, d)


def masked_logits(q, k, mask, n_l=None) -> np.ndarray:
    q, k, mask = np.asarray(q, np.float64), np.asarray(k, np.float64), np.asarray(mask, np.float64)
    n = q.shape[0]
    if k.shape != q.shape or mask.shape != (n, n):
        raise ValueError(f"shape mismatch: Q {q.shape}, K {k.shape}, M_s {mask.shape}")
    n_l = n if n_l is None else n_l
    finite = np.isfinite(mask)
    scores = (q @ k.T) * np.where(finite, mask, 0.0) / math.sqrt(n_l)
    return np.where(finite, scores, -np.inf)


def masked_softmax(logits) -> np.ndarray:
    finite = np.isfinite(logits)
    live = finite.any(axis=-1, keepdims=True)
    row_max = np.max(np.where(finite, logits, -np.inf), axis=-1, keepdims=True)
    row_max = np.where(live, row_max, 0.0)
    e = np.where(finite, np.exp(np.where(finite, logits, 0.0) - row_max), 0.0)
    denom = e.sum(axis=-1, keepdims=True)
    return np.where(live, e / np.where(live, denom, 1.0), 0.0)


def attention_weights(q, k, mask, n_l=None) -> np.ndarray:
    return masked_softmax(masked_logits(q, k, mask, n_l))


def modulated_attention(q, k, v, mask, n_l=None) -> np.ndarray:
    v = np.asarray(v, np.float64)
    if v.shape[0] != np.asarray(q).shape[0]:
        raise ValueError("V must have one row per token")
    return attention_weights(q, k, mask, n_l) @ v


@dataclass
class AttentionParams:
    """Single-head attention plus MLP weights for one block (row-vector convention ``x @ W``)."""

    w_q: np.ndarray
    w_k: np.ndarray
    w_v: np.ndarray
    w_o: np.ndarray
    mlp_w1: np.ndarray
    mlp_b1: np.ndarray
    mlp_w2: np.ndarray
    mlp_b2: np.ndarray
    ln1_g: np.ndarray
    ln1_b: np.ndarray
    ln2_g: np.ndarray
    ln2_b: np.ndarray

    @classmethod
    def init(cls, dim: int, rng: np.random.Generator, zero_output: bool = True) -> "AttentionParams":
        s = 1.0 / math.sqrt(dim)
        hidden = 4 * dim
        return cls(
            w_q=rng.normal(0, s, (dim, dim)),
            w_k=rng.normal(0, s, (dim, dim)),
            w_v=rng.normal(0, s, (dim, dim)),
            w_o=np.zeros((dim, dim)) if zero_output else rng.normal(0, s, (dim, dim)),
            mlp_w1=rng.normal(0, s, (dim, hidden)),
            mlp_b1=np.zeros(hidden),
            mlp_w2=np.zeros((hidden, dim)) if zero_output else rng.normal(0, 1 / math.sqrt(hidden), (hidden, dim)),
            mlp_b2=np.zeros(dim),
            ln1_g=np.ones(dim),
            ln1_b=np.zeros(dim),
            ln2_g=np.ones(dim),
            ln2_b=np.zeros(dim),
        )

    def as_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}


def layer_norm(x, gain, bias, eps=1e-5):
    mu = x.mean(axis=-1, keepdims=True)
    var = ((x - mu) ** 2).mean(axis=-1, keepdims=True)
    return (x - mu) / np.sqrt(var + eps) * gain + bias


def gelu(x):
    return 0.5 * x * (1.0 + erf(x / math.sqrt(2.0)))


def wst_block(tokens, mask, params: AttentionParams, n_l=None) -> np.ndarray:
    """Pre-norm residual block: ``x + Attn(LN(x))`` then ``+ MLP(LN(.))``."""
    x = np.asarray(tokens, np.float64)
    if x.ndim != 2 or x.shape[1] != params.w_q.shape[0]:
        raise ValueError(f"tokens of shape {x.shape} do not match params of width {params.w_q.shape[0]}")
    h = layer_norm(x, params.ln1_g, params.ln1_b)
    attn = modulated_attention(h @ params.w_q, h @ params.w_k, h @ params.w_v, mask, n_l)
    x = x + attn @ params.w_o
    h = layer_norm(x, params.ln2_g, params.ln2_b)
    return x + gelu(h @ params.mlp_w1 + params.mlp_b1) @ params.mlp_w2 + params.mlp_b2


# torch twins; batched over leading dims


def window_partition_torch(x: torch.Tensor, window) -> torch.Tensor:
    """``(B, H, W, D)`` -> ``(B, n_windows, N, D)``."""
    b, h, w, d = x.shape
    wh, ww = window
    if h % wh or w % ww:
        raise ValueError(f"feature {h}x{w} is not divisible by window {wh}x{ww}")
    x = x.reshape(b, h // wh, wh, w // ww, ww, d).permute(0, 1, 3, 2, 4, 5)
    return x.reshape(b, -1, wh * ww, d)


def window_merge_torch(x: torch.Tensor, feature_hw, window) -> torch.Tensor:
    h, w = feature_hw
    wh, ww = window
    b, d = x.shape[0], x.shape[-1]
    x = x.reshape(b, h // wh, w // ww, wh, ww, d).permute(0, 1, 3, 2, 4, 5)
    return x.reshape(b, h, w, d)


def modulated_attention_torch(q, k, v, mask, n_l=None) -> torch.Tensor:
    n = q.shape[-2]
    n_l = n if n_l is None else n_l
    finite = torch.isfinite(mask)
    scores = (q @ k.transpose(-1, -2)) * torch.where(finite, mask, torch.zeros_like(mask)) / math.sqrt(n_l)
    live = finite.any(dim=-1, keepdim=True)
    # fully masked rows get dummy zero logits so softmax stays finite, then are zeroed
    logits = torch.where(finite, scores, torch.where(live, torch.full_like(scores, -math.inf), torch.zeros_like(scores)))
    weights = torch.softmax(logits, dim=-1) * live
    return weights @ v


def wst_block_torch(x, mask, p: dict, n_l=None) -> torch.Tensor:
    """Same block as :func:`wst_block`; ``p`` maps AttentionParams field names to tensors."""
    dim = x.shape[-1]
    h = torch.nn.functional.layer_norm(x, (dim,), p["ln1_g"], p["ln1_b"], eps=1e-5)
    attn = modulated_attention_torch(h @ p["w_q"], h @ p["w_k"], h @ p["w_v"], mask, n_l)
    x = x + attn @ p["w_o"]
    h = torch.nn.functional.layer_norm(x, (dim,), p["ln2_g"], p["ln2_b"], eps=1e-5)
    return x + torch.nn.functional.gelu(h @ p["mlp_w1"] + p["mlp_b1"]) @ p["mlp_w2"] + p["mlp_b2"]
