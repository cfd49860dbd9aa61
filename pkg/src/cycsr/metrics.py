"""Reference fidelity metrics: PSNR, SSIM, MS-SSIM, directory evaluation.

The SSIM family is implemented once as torch ops (differentiable, batched)
and wrapped for numpy image input. Windows are 11x11 gaussian with sigma 1.5,
C1 = 0.01^2 and C2 = 0.03^2 at unit peak, aggregated over valid window
positions only (no padding), per channel, then averaged across channels.
"""

from __future__ import annotations

import csv
import os
from dataclasses import dataclass, field
from functools import lru_cache
from math import inf, log10

import numpy as np
import torch
import torch.nn.functional as F

from .imaging import list_pngs, load_image

WINDOW_SIZE = 11
WINDOW_SIGMA = 1.5
C1 = 0.01 ** 2
C2 = 0.03 ** 2

# canonical per-scale weights for the multi-scale variant
MS_WEIGHTS = (0.0448, 0.2856, 0.3001, 0.2363, 0.1333)


def psnr(a: np.ndarray, b: np.ndarray) -> float:
    """Peak signal-to-noise ratio in dB at unit peak; +inf for identical input."""
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch {a.shape} vs {b.shape}")
    mse = float(np.mean((a.astype(np.float64) - b.astype(np.float64)) ** 2))
    if mse == 0.0:
        return inf
    return 10.0 * log10(1.0 / mse)


@lru_cache(maxsize=8)
def _gaussian_window(size: int, sigma: float, dtype_name: str):
    coords = torch.arange(size, dtype=torch.float64) - (size - 1) / 2.0
    g = torch.exp(-(coords ** 2) / (2.0 * sigma ** 2))
    g = g / g.sum()
    win = torch.outer(g, g)
    return win.to(getattr(torch, dtype_name))


def _ssim_parts(x, y, window_size=WINDOW_SIZE, sigma=WINDOW_SIGMA):
    """Mean SSIM and contrast-structure term for (B, C, H, W) tensors.

    Valid-window aggregation: the gaussian window slides without padding, so
    H and W must be at least window_size. Returns per-batch (ssim, cs).
    """
    if x.shape != y.shape:
        raise ValueError(f"shape mismatch {tuple(x.shape)} vs {tuple(y.shape)}")
    b, c, h, w = x.shape
    if h < window_size or w < window_size:
        raise ValueError(f"spatial dims {(h, w)} smaller than the {window_size}x{window_size} window")
    win = _gaussian_window(window_size, sigma, str(x.dtype).split(".")[-1])
    win = win.expand(c, 1, window_size, window_size).to(x.device)

    mu_x = F.conv2d(x, win, groups=c)
    mu_y = F.conv2d(y, win, groups=c)
    mu_xx = mu_x * mu_x
    mu_yy = mu_y * mu_y
    mu_xy = mu_x * mu_y
    sigma_xx = F.conv2d(x * x, win, groups=c) - mu_xx
    sigma_yy = F.conv2d(y * y, win, groups=c) - mu_yy
    sigma_xy = F.conv2d(x * y, win, groups=c) - mu_xy

    cs_map = (2.0 * sigma_xy + C2) / (sigma_xx + sigma_yy + C2)
    lum_map = (2.0 * mu_xy + C1) / (mu_xx + mu_yy + C1)
    ssim_map = lum_map * cs_map
    return ssim_map.mean(dim=(1, 2, 3)), cs_map.mean(dim=(1, 2, 3))


def ssim_torch(x, y):
    """Differentiable mean SSIM per batch element for (B, C, H, W) tensors."""
    value, _ = _ssim_parts(x, y)
    return value


def ms_ssim_levels(min_dim: int, max_levels: int = len(MS_WEIGHTS)) -> int:
    """Number of usable scales: each halving must keep a full window."""
    levels = 0
    for l in range(1, max_levels + 1):
        if min_dim > (WINDOW_SIZE - 1) * 2 ** (l - 1):
            levels = l
    if levels == 0:
        raise ValueError(f"min dim {min_dim} too small for even one {WINDOW_SIZE}x{WINDOW_SIZE} scale")
    return levels


def ms_ssim_torch(x, y, levels: int | None = None):
    """Differentiable multi-scale SSIM per batch element.

    Five scales with the canonical weights when min(H, W) >= 161; otherwise
    the scale count drops to what the window size allows and the leading
    weights are renormalized to sum to 1. Contrast terms are floored at zero
    before exponentiation so the product stays in [0, 1].
    """
    min_dim = min(x.shape[-2], x.shape[-1])
    if levels is None:
        levels = ms_ssim_levels(min_dim)
    else:
        if min_dim <= (WINDOW_SIZE - 1) * 2 ** (levels - 1):
            raise ValueError(f"min dim {min_dim} too small for {levels} scales")
    weights = torch.tensor(MS_WEIGHTS[:levels], dtype=x.dtype, device=x.device)
    weights = weights / weights.sum()

    cs_terms = []
    cur_x, cur_y = x, y
    for l in range(levels):
        ssim_val, cs_val = _ssim_parts(cur_x, cur_y)
        if l < levels - 1:
            cs_terms.append(torch.clamp(cs_val, min=0.0))
            pad = (cur_x.shape[-2] % 2, cur_x.shape[-1] % 2)
            cur_x = F.avg_pool2d(cur_x, kernel_size=2, padding=pad)
            cur_y = F.avg_pool2d(cur_y, kernel_size=2, padding=pad)
    final = torch.clamp(ssim_val, min=0.0)
    out = final ** weights[-1]
    for l, cs_val in enumerate(cs_terms):
        out = out * cs_val ** weights[l]
    return out


def _to_batch(a: np.ndarray):
    t = torch.from_numpy(np.ascontiguousarray(a.astype(np.float64)))
    return t.unsqueeze(0)


def ssim(a: np.ndarray, b: np.ndarray) -> float:
    """Mean SSIM between two (C, H, W) images, computed in double precision."""
    with torch.no_grad():
        return float(ssim_torch(_to_batch(a), _to_batch(b))[0])


def ms_ssim(a: np.ndarray, b: np.ndarray) -> float:
    """Multi-scale SSIM between two (C, H, W) images."""
    with torch.no_grad():
        return float(ms_ssim_torch(_to_batch(a), _to_batch(b))[0])


@dataclass
class MetricRow:
    name: str
    psnr: float
    ssim: float
    lpips: float | None = None


@dataclass
class MetricReport:
    """Per-image metric rows plus aggregates.

    Infinite PSNR values (bit-identical pairs) are excluded from the PSNR
    mean and counted separately.
    """

    rows: list = field(default_factory=list)

    @property
    def n_psnr_infinite(self) -> int:
        return sum(1 for r in self.rows if r.psnr == inf)

    @property
    def mean_psnr(self) -> float:
        finite = [r.psnr for r in self.rows if r.psnr != inf]
        if not finite:
            return inf if self.rows else float("nan")
        return float(np.mean(finite))

    @property
    def mean_ssim(self) -> float:
        return float(np.mean([r.ssim for r in self.rows])) if self.rows else float("nan")

    @property
    def mean_lpips(self):
        vals = [r.lpips for r in self.rows if r.lpips is not None]
        return float(np.mean(vals)) if vals else None

    def to_csv(self, path):
        has_lpips = any(r.lpips is not None for r in self.rows)
        fields = ["name", "psnr", "ssim"] + (["lpips"] if has_lpips else [])
        with open(path, "w", newline="") as f:
            writer = csv.writer(f)
            writer.writerow(fields)
            for r in self.rows:
                row = [r.name, f"{r.psnr:.6f}" if r.psnr != inf else "inf", f"{r.ssim:.6f}"]
                if has_lpips:
                    row.append("" if r.lpips is None else f"{r.lpips:.6f}")
                writer.writerow(row)

    def format_table(self) -> str:
        has_lpips = any(r.lpips is not None for r in self.rows)
        lines = ["name                          psnr_db   ssim" + ("     lpips" if has_lpips else "")]
        for r in self.rows:
            p = "    inf" if r.psnr == inf else f"{r.psnr:7.3f}"
            line = f"{r.name:<28}  {p}  {r.ssim:6.4f}"
            if has_lpips:
                line += "  " + ("     -" if r.lpips is None else f"{r.lpips:8.4f}")
            lines.append(line)
        p = "    inf" if self.mean_psnr == inf else f"{self.mean_psnr:7.3f}"
        mean_line = f"{'mean':<28}  {p}  {self.mean_ssim:6.4f}"
        if has_lpips and self.mean_lpips is not None:
            mean_line += f"  {self.mean_lpips:8.4f}"
        lines.append(mean_line)
        if self.n_psnr_infinite:
            lines.append(f"({self.n_psnr_infinite} identical pair(s) excluded from the psnr mean)")
        return "\n".join(lines)


def evaluate_dir(sr_dir, hr_dir, perceptual=None) -> MetricReport:
    """Score every SR image in sr_dir against the same-named file in hr_dir.

    ``perceptual`` is an optional callable (a, b) -> float appended as an
    extra column (a learned perceptual metric slots in here; none ships with
    the package). Raises on filename mismatches between the two directories
    and on per-pair shape mismatches.
    """
    sr_names = set(list_pngs(sr_dir))
    hr_names = set(list_pngs(hr_dir))
    if sr_names != hr_names:
        missing_hr = sorted(sr_names - hr_names)
        missing_sr = sorted(hr_names - sr_names)
        raise FileNotFoundError(
            f"directory mismatch: missing in {hr_dir}: {missing_hr}; missing in {sr_dir}: {missing_sr}"
        )
    if not sr_names:
        raise FileNotFoundError(f"no .png files in {sr_dir}")
    report = MetricReport()
    for name in sorted(sr_names):
        a = load_image(os.path.join(sr_dir, name))
        b = load_image(os.path.join(hr_dir, name))
        if a.shape != b.shape:
            raise ValueError(f"{name}: shape mismatch {a.shape} vs {b.shape}")
        row = MetricRow(name=name, psnr=psnr(a, b), ssim=ssim(a, b))
        if perceptual is not None:
            row.lpips = float(perceptual(a, b))
        report.rows.append(row)
    return report
