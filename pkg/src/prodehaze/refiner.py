"""Haze-aware refiner: toy decoder with mask-modulated window attention at the two
upsampling stages, a residual refine network fusing input-image skip features,
and the L1 + feature-bank training objective.

Decoder layout for a latent of size ``h x w`` (image ``8h x 8w``)::

    latent --1x1--> D feats @ h          (unproject)
      stage 1: up x2 + 3x3 conv @ 2h  -> WST -> refine
      stage 2: up x2 + 3x3 conv @ 4h  -> WST -> refine
      stage 3: up x2 + 3x3 conv @ 8h  ->        refine -> 1x1 readout -> clamp

At initialization the convs reproduce :func:`prodehaze.prompt.decode_latent`
and every inserted block (WST output projections, refine outputs) is zero.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch
import torch.nn.functional as F

from .attention import window_merge_torch, window_partition_torch, wst_block_torch
from .imaging import avg_pool
from .mask import dark_channel
from .prompt import LATENT_CHANNELS, SMOOTH_KERNEL, encode_latent

torch.set_default_dtype(torch.float64)

N_STAGES = 3
WST_STAGES = (0, 1)


@dataclass(frozen=True)
class RefinerConfig:
    feature_dim: int = 8
    window: tuple = (4, 4)
    refine_hidden: int = 16
    use_mask: bool = True
    use_wst: bool = True
    use_refine: bool = True
    k_fraction: float = 0.25
    dcp_patch: int = 3
    seed: int = 0

    def as_dict(self) -> dict:
        d = dict(self.__dict__)
        d["window"] = list(self.window)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "RefinerConfig":
        d = dict(d)
        d["window"] = tuple(d["window"])
        return cls(**d)


def refine_features(f_enc, f_dec, w1, b1, w2, b2):
    """``F_RN = f_dec + R([f_enc, f_dec])`` with R a two-layer 1x1 conv (channels-last).

    Accepts numpy or torch arrays of shape ``(..., H, W, C)``.
    """
    if f_enc.shape[:-1] != f_dec.shape[:-1]:
        raise ValueError(f"skip feature {tuple(f_enc.shape)} does not match decoder feature {tuple(f_dec.shape)}")
    if isinstance(f_dec, torch.Tensor):
        x = torch.cat([f_enc, f_dec], dim=-1)
        return f_dec + F.silu(x @ w1 + b1) @ w2 + b2
    x = np.concatenate([f_enc, f_dec], axis=-1)
    h = x @ w1 + b1
    return f_dec + (h / (1.0 + np.exp(-h))) @ w2 + b2


def _param(x) -> torch.nn.Parameter:
    return torch.nn.Parameter(torch.as_tensor(np.asarray(x, dtype=np.float64)).clone())


class RefinerParams(torch.nn.Module):
    def __init__(self, config: RefinerConfig = RefinerConfig()):
        super().__init__()
        self.config = config
        d = config.feature_dim
        rng = np.random.default_rng(config.seed)
        unproject = np.zeros((LATENT_CHANNELS, d))
        unproject[:3, :3] = np.eye(3)
        unproject[:, 3:] = rng.normal(0.0, 0.1, (LATENT_CHANNELS, d - 3))
        self.unproject = _param(unproject)
        conv = np.zeros((d, d, 3, 3))
        for c in range(d):
            conv[c, c] = SMOOTH_KERNEL
        self.stage_w = torch.nn.ParameterList([_param(conv) for _ in range(N_STAGES)])
        self.stage_b = torch.nn.ParameterList([_param(np.zeros(d)) for _ in range(N_STAGES)])
        readout = np.zeros((d, 3))
        readout[:3, :3] = np.eye(3)
        self.readout = _param(readout)
        self.readout_b = _param(np.zeros(3))

        n_tok = config.window[0] * config.window[1]
        self.wst = torch.nn.ModuleList()
        for _ in WST_STAGES:
            block = torch.nn.ParameterDict()
            hidden = 4 * d
            s = 1.0 / math.sqrt(d)
            for name in ("w_q", "w_k", "w_v"):
                block[name] = _param(rng.normal(0.0, s, (d, d)))
            block["w_o"] = _param(np.zeros((d, d)))
            block["mlp_w1"] = _param(rng.normal(0.0, s, (d, hidden)))
            block["mlp_b1"] = _param(np.zeros(hidden))
            block["mlp_w2"] = _param(np.zeros((hidden, d)))
            block["mlp_b2"] = _param(np.zeros(d))
            block["ln1_g"], block["ln1_b"] = _param(np.ones(d)), _param(np.zeros(d))
            block["ln2_g"], block["ln2_b"] = _param(np.ones(d)), _param(np.zeros(d))
            block["mask_wq"] = _param(np.full(n_tok, 1.0 / math.sqrt(n_tok)))
            block["mask_wk"] = _param(np.full(n_tok, 1.0 / math.sqrt(n_tok)))
            self.wst.append(block)

        hid = config.refine_hidden
        self.refine = torch.nn.ModuleList()
        for _ in range(N_STAGES):
            r = torch.nn.ParameterDict()
            r["w1"] = _param(rng.normal(0.0, 1.0 / math.sqrt(3 + d), (3 + d, hid)))
            r["b1"] = _param(np.zeros(hid))
            r["w2"] = _param(np.zeros((hid, d)))
            r["b2"] = _param(np.zeros(d))
            self.refine.append(r)

    # forward pieces, all channels-last (B, H, W, C)

    def _upsample(self, x, stage):
        x = x.repeat_interleave(2, dim=1).repeat_interleave(2, dim=2).permute(0, 3, 1, 2)
        x = F.conv2d(F.pad(x, (1, 1, 1, 1), mode="replicate"), self.stage_w[stage], self.stage_b[stage])
        return x.permute(0, 2, 3, 1)

    def stage_masks(self, dcp_windows: torch.Tensor, block) -> torch.Tensor:
        """Per-window sparse masks from pooled DCP vectors ``(B, nW, N)``."""
        m = dcp_windows.unsqueeze(-1)
        corr = (block["mask_wq"] @ block["mask_wk"]) * (m @ m.transpose(-1, -2))
        corr = corr.clamp(0.0, 1.0)
        n = corr.shape[-1]
        k = int(math.ceil(self.config.k_fraction * n * n))
        flat = corr.detach().reshape(*corr.shape[:-2], n * n)
        order = torch.argsort(-flat, dim=-1, stable=True)[..., :k]
        hit = torch.zeros_like(flat, dtype=torch.bool).scatter_(-1, order, True).reshape(corr.shape)
        return torch.where(hit, torch.full_like(corr, -math.inf), 1.0 - corr)

    def forward(self, z0, enc_feats, dcp_windows, plain: bool = False):
        """Decode ``z0`` ``(B, h, w, 4)``.

        ``enc_feats[s]`` is the input-image skip feature at stage ``s``;
        ``dcp_windows[i]`` the pooled, windowed DCP vectors for WST stage ``i``.
        ``plain=True`` skips every inserted block (the bare toy decoder).
        """
        cfg = self.config
        x = z0 @ self.unproject
        for s in range(N_STAGES):
            x = self._upsample(x, s)
            if not plain and cfg.use_wst and s in WST_STAGES:
                block = self.wst[WST_STAGES.index(s)]
                hw = x.shape[1:3]
                tokens = window_partition_torch(x, cfg.window)
                if cfg.use_mask:
                    mask = self.stage_masks(dcp_windows[WST_STAGES.index(s)], block)
                else:
                    n = tokens.shape[-2]
                    mask = torch.ones((n, n))
                tokens = wst_block_torch(tokens, mask, block)
                x = window_merge_torch(tokens, hw, cfg.window)
            if not plain and cfg.use_refine:
                r = self.refine[s]
                x = refine_features(enc_feats[s], x, r["w1"], r["b1"], r["w2"], r["b2"])
        out = x @ self.readout + self.readout_b
        return out.clamp(0.0, 1.0)


@dataclass
class RefinerInputs:
    """Precomputed per-image tensors for decoding: latents, skip features, DCP windows."""

    z0: torch.Tensor
    enc_feats: list
    dcp_windows: list

    def select(self, idx):
        return RefinerInputs(self.z0[idx], [f[idx] for f in self.enc_feats], [d[idx] for d in self.dcp_windows])


def encoder_features(x_in: np.ndarray) -> list[np.ndarray]:
    """Input-image skip features at the decoder stage resolutions (1/4, 1/2, 1)."""
    return [avg_pool(x_in, 2 ** (N_STAGES - 1 - s)) for s in range(N_STAGES)]


def dcp_window_vectors(x_in: np.ndarray, config: RefinerConfig) -> list[np.ndarray]:
    from .mask import pooled_window_vectors

    h, w = x_in.shape[:2]
    dcp = dark_channel(x_in, config.dcp_patch).values
    out = []
    for s in WST_STAGES:
        f = 2 ** (N_STAGES - 1 - s)
        out.append(pooled_window_vectors(dcp, (h // f, w // f), config.window))
    return out


def prepare_inputs(x_ins, z0s, config: RefinerConfig) -> RefinerInputs:
    x_ins = [np.asarray(x, dtype=np.float64) for x in x_ins]
    for x in x_ins:
        h, w = x.shape[:2]
        # latent grid needs /8, the 1/4 stage needs whole windows
        if h % 8 or w % 8 or (h // 4) % config.window[0] or (w // 4) % config.window[1]:
            raise ValueError(f"image {h}x{w} is not compatible with window {config.window} at the 1/4 stage")
    feats = [torch.as_tensor(np.stack(f)) for f in zip(*[encoder_features(x) for x in x_ins])]
    dcps = [torch.as_tensor(np.stack(d)) for d in zip(*[dcp_window_vectors(x, config) for x in x_ins])]
    return RefinerInputs(torch.as_tensor(np.stack([np.asarray(z) for z in z0s])), feats, dcps)


def decode(z0, x_in, params: RefinerParams, plain: bool = False) -> np.ndarray:
    """Decode one latent ``(h, w, 4)`` given its hazy input image ``(8h, 8w, 3)``."""
    z0 = np.asarray(z0, dtype=np.float64)
    if z0.shape[0] * 8 != x_in.shape[0] or z0.shape[1] * 8 != x_in.shape[1]:
        raise ValueError(f"latent {z0.shape} does not match image {x_in.shape}")
    inputs = prepare_inputs([x_in], [z0], params.config)
    with torch.no_grad():
        return params(inputs.z0, inputs.enc_feats, inputs.dcp_windows, plain=plain)[0].numpy()


class FeatureBank(torch.nn.Module):
    """Fixed seeded random two-layer conv features standing in for a perceptual network."""

    def __init__(self, seed: int = 1234, width: int = 8):
        super().__init__()
        g = torch.Generator().manual_seed(seed)
        self.register_buffer("w1", torch.randn((width, 3, 3, 3), generator=g) / math.sqrt(27))
        self.register_buffer("w2", torch.randn((width, width, 3, 3), generator=g) / math.sqrt(9 * width))

    def forward(self, x):
        """``x``: ``(B, H, W, 3)`` channels-last."""
        x = x.permute(0, 3, 1, 2)
        x = F.relu(F.conv2d(x, self.w1, padding=1))
        return F.conv2d(x, self.w2, padding=1)


def hcr_loss_torch(x_r, x_gt, bank: FeatureBank, lambda_p: float = 0.1):
    l1 = (x_r - x_gt).abs().mean()
    perceptual = ((bank(x_r) - bank(x_gt)) ** 2).mean()
    return l1 + lambda_p * perceptual, l1, perceptual


def hcr_loss(x_r, x_gt, feature_bank: FeatureBank | None = None, lambda_p: float = 0.1) -> dict:
    """``{"l1", "perceptual", "total"}`` for channels-last images (single or batched)."""
    a = torch.as_tensor(np.asarray(x_r, dtype=np.float64))
    b = torch.as_tensor(np.asarray(x_gt, dtype=np.float64))
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {tuple(a.shape)} vs {tuple(b.shape)}")
    if a.ndim == 3:
        a, b = a.unsqueeze(0), b.unsqueeze(0)
    bank = FeatureBank() if feature_bank is None else feature_bank
    with torch.no_grad():
        total, l1, perc = hcr_loss_torch(a, b, bank, lambda_p)
    return {"l1": float(l1), "perceptual": float(perc), "total": float(total)}


def teacher_latents(clean_images) -> list[np.ndarray]:
    return [encode_latent(x) for x in clean_images]


def train_hcr(params: RefinerParams, inputs: RefinerInputs, targets, steps: int, lr: float, seed: int,
              lambda_p: float = 0.1, batch_size: int | None = None):
    """Gradient descent on every refiner weight; returns ``(params, trace)``.

    ``targets`` is ``(B, H, W, 3)``. Latents in ``inputs`` come either from the
    SPR sampler or, teacher-forced, from encoding the ground truth.
    """
    targets = torch.as_tensor(np.asarray(targets, dtype=np.float64))
    n = targets.shape[0]
    if n == 0:
        raise ValueError("empty dataset")
    batch_size = n if batch_size is None else batch_size
    bank = FeatureBank()
    trace = []
    for step in range(steps):
        if batch_size < n:
            g = torch.Generator().manual_seed(seed * 1_000_003 + step)
            idx = torch.randperm(n, generator=g)[:batch_size]
            batch, tgt = inputs.select(idx), targets[idx]
        else:
            batch, tgt = inputs, targets
        x_r = params(batch.z0, batch.enc_feats, batch.dcp_windows)
        loss, _, _ = hcr_loss_torch(x_r, tgt, bank, lambda_p)
        params.zero_grad(set_to_none=True)
        loss.backward()
        with torch.no_grad():
            for p in params.parameters():
                if p.grad is not None:
                    p -= lr * p.grad
        trace.append(float(loss.detach()))
    return params, trace
