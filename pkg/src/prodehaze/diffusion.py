"""Toy latent diffusion restorer: schedule, forward process, eps-prediction loss,
a small conditional conv denoiser, gradient-descent training and ancestral sampling.

Latents cross the public API as numpy ``(h, w, c)`` arrays; internally the
network works on torch ``(B, C, h, w)`` float64 tensors.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import torch
import torch.nn.functional as F

from .prompt import LATENT_CHANNELS, LATENT_FACTOR, default_prompt_kernel, projection_matrix

torch.set_default_dtype(torch.float64)


@dataclass(frozen=True)
class NoiseSchedule:
    betas: np.ndarray
    alphas: np.ndarray
    alpha_bars: np.ndarray

    @property
    def T(self) -> int:
        return len(self.betas)

    def as_dict(self) -> dict:
        return {"T": self.T, "beta_min": float(self.betas[0]), "beta_max": float(self.betas[-1])}


def make_schedule(T: int = 50, beta_min: float = 1e-4, beta_max: float = 0.02) -> NoiseSchedule:
    """Linear beta schedule; index ``t - 1`` holds step ``t``."""
    if T < 1 or not 0 < beta_min <= beta_max < 1:
        raise ValueError(f"invalid schedule T={T}, beta in [{beta_min}, {beta_max}]")
    betas = np.linspace(beta_min, beta_max, T) if T > 1 else np.array([beta_min])
    alphas = 1.0 - betas
    return NoiseSchedule(betas=betas, alphas=alphas, alpha_bars=np.cumprod(alphas))


def forward_diffuse(z0, t: int, eps, schedule: NoiseSchedule):
    if not 1 <= t <= schedule.T:
        raise ValueError(f"t must be in [1, {schedule.T}], got {t}")
    ab = schedule.alpha_bars[t - 1]
    return math.sqrt(ab) * z0 + math.sqrt(1.0 - ab) * eps


def to_torch(x: np.ndarray) -> torch.Tensor:
    """``(h, w, c)`` or ``(B, h, w, c)`` numpy -> ``(B, c, h, w)`` torch."""
    t = torch.as_tensor(np.asarray(x, dtype=np.float64))
    if t.ndim == 3:
        t = t.unsqueeze(0)
    return t.permute(0, 3, 1, 2).contiguous()


def to_numpy(x: torch.Tensor) -> np.ndarray:
    out = x.detach().permute(0, 2, 3, 1).numpy()
    return out[0] if out.shape[0] == 1 else out


class ToyDenoiser(torch.nn.Module):
    """3-layer 3x3 conv net: ``[z_t, c_f, t/T] -> eps``."""

    def __init__(self, latent_channels: int = LATENT_CHANNELS, cond_channels: int = 2 * LATENT_CHANNELS,
                 hidden: int = 16, seed: int = 0):
        super().__init__()
        self.latent_channels = latent_channels
        self.cond_channels = cond_channels
        cin = latent_channels + cond_channels + 1
        self.conv1 = torch.nn.Conv2d(cin, hidden, 3, padding=1)
        self.conv2 = torch.nn.Conv2d(hidden, hidden, 3, padding=1)
        self.conv3 = torch.nn.Conv2d(hidden, latent_channels, 3, padding=1)
        g = torch.Generator().manual_seed(seed)
        with torch.no_grad():
            for conv in (self.conv1, self.conv2, self.conv3):
                bound = 1.0 / math.sqrt(conv.weight[0].numel())
                conv.weight.copy_((torch.rand(conv.weight.shape, generator=g) * 2 - 1) * bound)
                conv.bias.zero_()

    def forward(self, z_t: torch.Tensor, t_frac: torch.Tensor, cond: torch.Tensor) -> torch.Tensor:
        b, _, h, w = z_t.shape
        t_map = t_frac.reshape(b, 1, 1, 1).expand(b, 1, h, w)
        x = torch.cat([z_t, cond, t_map], dim=1)
        x = F.silu(self.conv1(x))
        x = F.silu(self.conv2(x))
        return self.conv3(x)


class SprModel(torch.nn.Module):
    """Denoiser plus the learnable point-wise kernel that fuses Haar detail bands."""

    def __init__(self, seed: int = 0, use_prompt: bool = True, hidden: int = 16):
        super().__init__()
        self.use_prompt = use_prompt
        self.denoiser = ToyDenoiser(hidden=hidden, seed=seed)
        self.prompt_kernel = torch.nn.Parameter(torch.as_tensor(default_prompt_kernel(3)))
        half = LATENT_FACTOR // 2
        self.register_buffer("prompt_projection", torch.as_tensor(np.array(projection_matrix(half, 3))))

    def condition(self, z_in: torch.Tensor, high_bands: torch.Tensor | None) -> torch.Tensor:
        """``c_f = [z_in, E(x_high)]`` with ``x_high = bands @ kernel``.

        ``high_bands`` is ``(B, h2, w2, 9)`` in LH, HH, HL order at half resolution.
        """
        if not self.use_prompt or high_bands is None:
            return torch.cat([z_in, torch.zeros_like(z_in)], dim=1)
        x_high = high_bands @ self.prompt_kernel
        b, h2, w2, c = x_high.shape
        f = LATENT_FACTOR // 2
        blocks = x_high.reshape(b, h2 // f, f, w2 // f, f, c).permute(0, 1, 3, 2, 4, 5).reshape(b, h2 // f, w2 // f, -1)
        z_high = (blocks @ self.prompt_projection.T).permute(0, 3, 1, 2)
        return torch.cat([z_in, z_high], dim=1)

    def forward(self, z_t, t_frac, cond):
        return self.denoiser(z_t, t_frac, cond)


@dataclass
class SprBatch:
    """Stacked training data: clean latents, hazy-input latents, hazy detail bands."""

    z0: torch.Tensor
    z_in: torch.Tensor
    high_bands: torch.Tensor | None = None
    extras: dict = field(default_factory=dict)

    def __len__(self):
        return self.z0.shape[0]


def make_spr_batch(clean_images, hazy_images) -> SprBatch:
    from .prompt import encode_latent, haar_dwt, stack_high_bands

    if len(clean_images) == 0:
        raise ValueError("empty dataset")
    z0 = np.stack([encode_latent(x) for x in clean_images])
    z_in = np.stack([encode_latent(x) for x in hazy_images])
    bands = np.stack([stack_high_bands(haar_dwt(x)) for x in hazy_images])
    return SprBatch(z0=to_torch(z0), z_in=to_torch(z_in), high_bands=torch.as_tensor(bands))


def _draw_noise(shape, schedule: NoiseSchedule, seed: int):
    g = torch.Generator().manual_seed(seed)
    t = torch.randint(1, schedule.T + 1, (shape[0],), generator=g)
    eps = torch.randn(shape, generator=g)
    return t, eps


def diffusion_loss(model, z0: torch.Tensor, cond: torch.Tensor, t: torch.Tensor, eps: torch.Tensor,
                   schedule: NoiseSchedule) -> torch.Tensor:
    ab = torch.as_tensor(schedule.alpha_bars)[t - 1].reshape(-1, 1, 1, 1)
    z_t = ab.sqrt() * z0 + (1 - ab).sqrt() * eps
    pred = model(z_t, t.to(torch.float64) / schedule.T, cond)
    return ((eps - pred) ** 2).mean()


def spr_loss(denoiser, z0, c_f, schedule: NoiseSchedule, seed: int) -> float:
    """Mean squared eps-prediction error with t ~ U{1..T} and eps ~ N(0, I) drawn from ``seed``.

    ``denoiser(z_t, t_frac, cond)`` works on torch ``(B, C, h, w)`` tensors;
    ``z0`` and ``c_f`` may be numpy ``(h, w, c)`` / ``(B, h, w, c)`` or torch.
    """
    z0 = z0 if isinstance(z0, torch.Tensor) else to_torch(z0)
    c_f = c_f if isinstance(c_f, torch.Tensor) else to_torch(c_f)
    t, eps = _draw_noise(z0.shape, schedule, seed)
    with torch.no_grad():
        return float(diffusion_loss(denoiser, z0, c_f, t, eps, schedule))


def smoothed(trace, window: int = 20) -> tuple[float, float]:
    """Mean of the first and of the last ``window`` entries of a loss trace."""
    trace = np.asarray(trace, dtype=np.float64)
    window = max(1, min(window, len(trace)))
    return float(trace[:window].mean()), float(trace[-window:].mean())


def train_spr(model: SprModel, data: SprBatch, schedule: NoiseSchedule, steps: int, lr: float, seed: int,
              batch_size: int | None = None):
    """Plain full-parameter gradient descent; returns ``(model, loss_trace)``.

    Each step draws fresh timesteps and noise from ``seed + step``.
    """
    if len(data) == 0:
        raise ValueError("empty dataset")
    params = [p for p in model.parameters() if p.requires_grad]
    if not model.use_prompt:
        params = [p for p in params if p is not model.prompt_kernel]
    n = len(data)
    batch_size = n if batch_size is None else batch_size
    trace = []
    for step in range(steps):
        g = torch.Generator().manual_seed(seed * 1_000_003 + step)
        idx = torch.randperm(n, generator=g)[:batch_size] if batch_size < n else torch.arange(n)
        z0 = data.z0[idx]
        bands = data.high_bands[idx] if data.high_bands is not None else None
        t = torch.randint(1, schedule.T + 1, (len(idx),), generator=g)
        eps = torch.randn(z0.shape, generator=g)
        cond = model.condition(data.z_in[idx], bands)
        loss = diffusion_loss(model, z0, cond, t, eps, schedule)
        model.zero_grad(set_to_none=True)
        loss.backward()
        with torch.no_grad():
            for p in params:
                if p.grad is not None:
                    p -= lr * p.grad
        trace.append(float(loss.detach()))
    return model, trace


@torch.no_grad()
def sample(denoiser, c_f, schedule: NoiseSchedule, seed: int, latent_channels: int = LATENT_CHANNELS):
    """Ancestral DDPM sampling from ``z_T ~ N(0, I)``; posterior variance for the added noise.

    Accepts a torch ``(B, C, h, w)`` condition or numpy ``(h, w, C)``; returns the same kind.
    """
    as_np = not isinstance(c_f, torch.Tensor)
    cond = to_torch(c_f) if as_np else c_f
    b, _, h, w = cond.shape
    g = torch.Generator().manual_seed(seed)
    z = torch.randn((b, latent_channels, h, w), generator=g)
    betas, alphas, abars = schedule.betas, schedule.alphas, schedule.alpha_bars
    for t in range(schedule.T, 0, -1):
        t_frac = torch.full((b,), t / schedule.T)
        eps = denoiser(z, t_frac, cond)
        mean = (z - betas[t - 1] / math.sqrt(1.0 - abars[t - 1]) * eps) / math.sqrt(alphas[t - 1])
        if t > 1:
            var = betas[t - 1] * (1.0 - abars[t - 2]) / (1.0 - abars[t - 1])
            z = mean + math.sqrt(var) * torch.randn(z.shape, generator=g)
        else:
            z = mean
    return to_numpy(z) if as_np else z


class EpsOracle:
    """Denoiser that knows the clean latent and returns the exact injected noise."""

    def __init__(self, z0, schedule: NoiseSchedule):
        self.z0 = z0 if isinstance(z0, torch.Tensor) else to_torch(z0)
        self.schedule = schedule

    def __call__(self, z_t, t_frac, cond):
        t = torch.round(t_frac * self.schedule.T).long()
        ab = torch.as_tensor(self.schedule.alpha_bars)[t - 1].reshape(-1, 1, 1, 1)
        return (z_t - ab.sqrt() * self.z0) / (1 - ab).sqrt()
