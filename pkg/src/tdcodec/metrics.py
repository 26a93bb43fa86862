"""Distortion metrics for 8-bit images: PSNR and MS-SSIM.

Colour images are handled channel by channel. PSNR uses the MSE over all
samples, which equals the mean of the per-channel MSEs; MS-SSIM is computed
per channel and the channel values are averaged.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

__all__ = ["psnr", "ms_ssim", "ssim_components", "MetricReport", "evaluate", "MS_SSIM_WEIGHTS"]

MS_SSIM_WEIGHTS = (0.0448, 0.2856, 0.3001, 0.2363, 0.1333)
WINDOW = 11
SIGMA = 1.5
K1, K2 = 0.01, 0.03


def _as_planes(img) -> np.ndarray:
    a = np.asarray(img, dtype=np.float64)
    if a.ndim == 2:
        a = a[:, :, None]
    if a.ndim != 3:
        raise ValueError(f"expected an (H, W) or (H, W, C) image, got shape {a.shape}")
    return a


def _pair(a, b):
    a, b = _as_planes(a), _as_planes(b)
    if a.shape != b.shape:
        raise ValueError(f"image dimensions differ: {a.shape} vs {b.shape}")
    if a.size == 0:
        raise ValueError("images have no pixels")
    return a, b


def psnr(a, b, peak: float = 255.0) -> float:
    """``10 log10(peak^2 / MSE)`` in dB; ``inf`` when the images are identical."""
    a, b = _pair(a, b)
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return float("inf")
    return 10.0 * np.log10(peak * peak / mse)


def _gaussian_window() -> np.ndarray:
    x = np.arange(WINDOW, dtype=np.float64) - (WINDOW - 1) / 2
    g = np.exp(-(x * x) / (2 * SIGMA * SIGMA))
    return g / g.sum()


_G = _gaussian_window()


def _filter(x: np.ndarray) -> np.ndarray:
    """Separable Gaussian filter over the first two axes, 'valid' region only."""
    x = sliding_window_view(x, WINDOW, axis=0) @ _G
    return sliding_window_view(x, WINDOW, axis=1) @ _G


def ssim_components(x: np.ndarray, y: np.ndarray, peak: float = 255.0):
    """Per-channel mean SSIM and mean contrast-structure term of two planes stacks."""
    c1 = (K1 * peak) ** 2
    c2 = (K2 * peak) ** 2
    mx, my = _filter(x), _filter(y)
    sxx = _filter(x * x) - mx * mx
    syy = _filter(y * y) - my * my
    sxy = _filter(x * y) - mx * my
    cs = (2 * sxy + c2) / (sxx + syy + c2)
    lum = (2 * mx * my + c1) / (mx * mx + my * my + c1)
    return (lum * cs).mean(axis=(0, 1)), cs.mean(axis=(0, 1))


def _downsample(x: np.ndarray) -> np.ndarray:
    h, w = (x.shape[0] // 2) * 2, (x.shape[1] // 2) * 2
    x = x[:h, :w]
    return 0.25 * (x[0::2, 0::2] + x[1::2, 0::2] + x[0::2, 1::2] + x[1::2, 1::2])


def ms_ssim(a, b, peak: float = 255.0, max_scales: int = 5) -> float:
    """Multi-scale SSIM in [0, 1].

    Five dyadic scales need a smaller side of at least ``11 * 2**4 = 176``.
    Smaller images use as many scales as fit and renormalise the leading
    scale weights to sum to one. Negative per-scale terms are clipped to 0.
    """
    a, b = _pair(a, b)
    side = min(a.shape[:2])
    if side < WINDOW:
        raise ValueError(f"image too small for MS-SSIM: smaller side {side} < {WINDOW}")
    scales = 1
    while scales < max_scales and side // (2 ** scales) >= WINDOW:
        scales += 1
    weights = np.array(MS_SSIM_WEIGHTS[:scales])
    weights /= weights.sum()
    terms = []
    x, y = a, b
    for s in range(scales):
        ssim, cs = ssim_components(x, y, peak)
        terms.append(np.maximum(ssim if s == scales - 1 else cs, 0.0))
        if s < scales - 1:
            x, y = _downsample(x), _downsample(y)
    per_channel = np.prod(np.stack(terms) ** weights[:, None], axis=0)
    return float(np.clip(per_channel.mean(), 0.0, 1.0))


@dataclass(frozen=True)
class MetricReport:
    psnr_db: float
    ms_ssim: float
    bpp: float = float("nan")

    def as_dict(self) -> dict:
        return {"psnr_db": self.psnr_db, "ms_ssim": self.ms_ssim, "bpp": self.bpp}

    def describe(self) -> str:
        p = "lossless" if np.isinf(self.psnr_db) else f"{self.psnr_db:.4f} dB"
        text = f"PSNR {p}, MS-SSIM {self.ms_ssim:.6f}"
        if not np.isnan(self.bpp):
            text += f", {self.bpp:.4f} bpp"
        return text


def evaluate(ref, test, bpp: float = float("nan")) -> MetricReport:
    return MetricReport(psnr(ref, test), ms_ssim(ref, test), bpp)
