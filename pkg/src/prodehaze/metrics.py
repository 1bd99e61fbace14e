"""Full-reference image metrics: PSNR, SSIM (luma) and CIEDE2000, plus a directory evaluator."""
from __future__ import annotations

import csv
import io
import json
import logging
import math
import os
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.signal import convolve2d

from .imaging import list_images, load_image

log = logging.getLogger(__name__)

PSNR_CAP = 99.0
SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
D65_WHITE = np.array([0.95047, 1.0, 1.08883])
_SRGB_TO_XYZ = np.array([
    [0.412453, 0.357580, 0.180423],
    [0.212671, 0.715160, 0.072169],
    [0.019334, 0.119193, 0.950227],
])


def _check_pair(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    return a, b


def psnr(a, b) -> float:
    """``10 log10(1 / MSE)`` over all channels, capped at 99 dB."""
    a, b = _check_pair(a, b)
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return PSNR_CAP
    return min(PSNR_CAP, 10.0 * math.log10(1.0 / mse))


def luma(img: np.ndarray) -> np.ndarray:
    if img.ndim == 3 and img.shape[2] == 3:
        return img[:, :, 0] * 0.299 + img[:, :, 1] * 0.587 + img[:, :, 2] * 0.114
    return img.reshape(img.shape[0], img.shape[1])


def gaussian_window(size: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA) -> np.ndarray:
    r = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-(r**2) / (2 * sigma**2))
    w = np.outer(g, g)
    return w / w.sum()


def ssim(a, b, k1: float = 0.01, k2: float = 0.03, data_range: float = 1.0) -> float:
    """Gaussian-window SSIM on luma, averaged over valid (fully covered) positions."""
    a, b = _check_pair(a, b)
    x, y = luma(a), luma(b)
    if min(x.shape) < SSIM_WINDOW:
        raise ValueError(f"image {x.shape} is smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} SSIM window")
    w = gaussian_window()

    def filt(v):
        return convolve2d(v, w, mode="valid")

    c1, c2 = (k1 * data_range) ** 2, (k2 * data_range) ** 2
    mu_x, mu_y = filt(x), filt(y)
    sxx = filt(x * x) - mu_x * mu_x
    syy = filt(y * y) - mu_y * mu_y
    sxy = filt(x * y) - mu_x * mu_y
    num = (2 * mu_x * mu_y + c1) * (2 * sxy + c2)
    den = (mu_x * mu_x + mu_y * mu_y + c1) * (sxx + syy + c2)
    return float(np.mean(num / den))


def srgb_to_lab(img) -> np.ndarray:
    """sRGB in [0, 1] -> CIELAB (D65 white)."""
    rgb = np.asarray(img, dtype=np.float64)
    lin = np.where(rgb <= 0.04045, rgb / 12.92, ((rgb + 0.055) / 1.055) ** 2.4)
    xyz = lin @ _SRGB_TO_XYZ.T / D65_WHITE
    delta = 6.0 / 29.0
    f = np.where(xyz > delta**3, np.cbrt(xyz), xyz / (3 * delta**2) + 4.0 / 29.0)
    L = 116.0 * f[..., 1] - 16.0
    a = 500.0 * (f[..., 0] - f[..., 1])
    b = 200.0 * (f[..., 1] - f[..., 2])
    return np.stack([L, a, b], axis=-1)


def delta_e2000(lab1, lab2, kL: float = 1.0, kC: float = 1.0, kH: float = 1.0) -> np.ndarray:
    """Elementwise CIEDE2000 colour difference between Lab arrays (last axis = L, a, b)."""
    lab1, lab2 = _check_pair(lab1, lab2)
    L1, a1, b1 = lab1[..., 0], lab1[..., 1], lab1[..., 2]
    L2, a2, b2 = lab2[..., 0], lab2[..., 1], lab2[..., 2]

    c_bar = (np.hypot(a1, b1) + np.hypot(a2, b2)) / 2.0
    c7 = c_bar**7
    g = 0.5 * (1.0 - np.sqrt(c7 / (c7 + 25.0**7)))
    a1p, a2p = (1.0 + g) * a1, (1.0 + g) * a2
    c1p, c2p = np.hypot(a1p, b1), np.hypot(a2p, b2)
    h1p = np.degrees(np.arctan2(b1, a1p)) % 360.0
    h2p = np.degrees(np.arctan2(b2, a2p)) % 360.0

    dLp = L2 - L1
    dCp = c2p - c1p
    chroma_zero = (c1p * c2p) == 0
    dh = h2p - h1p
    dh = np.where(dh > 180.0, dh - 360.0, np.where(dh < -180.0, dh + 360.0, dh))
    dh = np.where(chroma_zero, 0.0, dh)
    dHp = 2.0 * np.sqrt(c1p * c2p) * np.sin(np.radians(dh) / 2.0)

    L_bar = (L1 + L2) / 2.0
    cp_bar = (c1p + c2p) / 2.0
    h_sum = h1p + h2p
    far = np.abs(h1p - h2p) > 180.0
    h_bar = np.where(far, np.where(h_sum < 360.0, (h_sum + 360.0) / 2.0, (h_sum - 360.0) / 2.0), h_sum / 2.0)
    h_bar = np.where(chroma_zero, h_sum, h_bar)

    t = (1.0 - 0.17 * np.cos(np.radians(h_bar - 30.0)) + 0.24 * np.cos(np.radians(2 * h_bar))
         + 0.32 * np.cos(np.radians(3 * h_bar + 6.0)) - 0.20 * np.cos(np.radians(4 * h_bar - 63.0)))
    d_theta = 30.0 * np.exp(-(((h_bar - 275.0) / 25.0) ** 2))
    cp7 = cp_bar**7
    r_c = 2.0 * np.sqrt(cp7 / (cp7 + 25.0**7))
    l50 = (L_bar - 50.0) ** 2
    s_l = 1.0 + 0.015 * l50 / np.sqrt(20.0 + l50)
    s_c = 1.0 + 0.045 * cp_bar
    s_h = 1.0 + 0.015 * cp_bar * t
    r_t = -np.sin(np.radians(2.0 * d_theta)) * r_c

    tl, tc, th = dLp / (kL * s_l), dCp / (kC * s_c), dHp / (kH * s_h)
    return np.sqrt(tl**2 + tc**2 + th**2 + r_t * tc * th)


def ciede2000(a, b) -> float:
    """Mean per-pixel CIEDE2000 between two sRGB images."""
    a, b = _check_pair(a, b)
    return float(np.mean(delta_e2000(srgb_to_lab(a), srgb_to_lab(b))))


@dataclass
class MetricReport:
    rows: list = field(default_factory=list)
    means: dict = field(default_factory=dict)
    warnings: list = field(default_factory=list)
    config: dict = field(default_factory=lambda: {
        "ssim_window": SSIM_WINDOW, "ssim_sigma": SSIM_SIGMA, "ssim_channel": "luma (BT.601)",
        "ciede_illuminant": "D65", "ciede_aggregation": "per-pixel mean, then per-image mean",
        "psnr_cap_db": PSNR_CAP,
    })

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True) + "\n"

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["name", "psnr_db", "ssim", "ciede2000"])
        for r in self.rows:
            writer.writerow([r["name"], repr(r["psnr_db"]), repr(r["ssim"]), repr(r["ciede2000"])])
        if self.rows:
            writer.writerow(["MEAN", repr(self.means["psnr_db"]), repr(self.means["ssim"]),
                             repr(self.means["ciede2000"])])
        return buf.getvalue()


def compare_images(pred, gt) -> dict:
    return {"psnr_db": psnr(pred, gt), "ssim": ssim(pred, gt), "ciede2000": ciede2000(pred, gt)}


def evaluate_dataset(pred_dir, gt_dir) -> MetricReport:
    """Score every filename present in both directories, in sorted order."""
    pred_names, gt_names = set(list_images(pred_dir)), set(list_images(gt_dir))
    report = MetricReport()
    for name in sorted(pred_names ^ gt_names):
        side = "prediction" if name in pred_names else "ground truth"
        report.warnings.append(f"unmatched {side} file skipped: {name}")
    common = sorted(pred_names & gt_names)
    if not common:
        report.warnings.append("no matching filenames between prediction and ground-truth directories")
    for name in common:
        pred = load_image(os.path.join(pred_dir, name))
        gt = load_image(os.path.join(gt_dir, name))
        report.rows.append({"name": name, **compare_images(pred, gt)})
    if report.rows:
        report.means = {k: float(np.mean([r[k] for r in report.rows])) for k in ("psnr_db", "ssim", "ciede2000")}
    if report.warnings:
        log.warning("evaluation produced %d warning(s)", len(report.warnings))
    return report
