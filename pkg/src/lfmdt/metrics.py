"""Y-channel PSNR and SSIM, computed per SAI and averaged over SAIs."""

from __future__ import annotations

import math

import numpy as np

from .errors import DimensionError
from .lightfield import LightField

PSNR_CAP = 100.0


def _as_sais(x) -> np.ndarray:
    arr = x.data if isinstance(x, LightField) else np.asarray(getattr(x, "data", x))
    if arr.ndim == 5:
        if arr.shape[-1] != 1:
            raise DimensionError(f"metrics need a single (Y) channel, got {arr.shape[-1]}")
        arr = arr[..., 0]
    if arr.ndim == 2:
        arr = arr[None, None]
    if arr.ndim != 4:
        raise DimensionError(f"expected (U, V, H, W[, 1]) or (H, W), got {arr.shape}")
    return np.clip(arr.astype(np.float64), 0.0, 1.0)


def _pair(pred, target) -> tuple[np.ndarray, np.ndarray]:
    a, b = _as_sais(pred), _as_sais(target)
    if a.shape != b.shape:
        raise DimensionError(f"shape mismatch: {a.shape} vs {b.shape}")
    return a.reshape((-1,) + a.shape[2:]), b.reshape((-1,) + b.shape[2:])


def psnr_plane(a: np.ndarray, b: np.ndarray) -> float:
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return PSNR_CAP
    return min(10.0 * math.log10(1.0 / mse), PSNR_CAP)


def psnr_y(pred, target) -> float:
    a, b = _pair(pred, target)
    return float(np.mean([psnr_plane(x, y) for x, y in zip(a, b)]))


def gaussian_window(size: int = 11, sigma: float = 1.5) -> np.ndarray:
    x = np.arange(size) - (size - 1) / 2
    g = np.exp(-(x * x) / (2 * sigma * sigma))
    return g / g.sum()


def _filter_valid(img: np.ndarray, g: np.ndarray) -> np.ndarray:
    n = g.size
    H, W = img.shape
    rows = sum(g[k] * img[k:H - n + 1 + k, :] for k in range(n))
    return sum(g[k] * rows[:, k:W - n + 1 + k] for k in range(n))


def ssim_plane(a: np.ndarray, b: np.ndarray, size: int = 11, sigma: float = 1.5) -> float:
    """Mean SSIM over all window positions fully inside the image.

    Images smaller than the window use the largest odd window that fits.
    """
    size = min(size, *(s if s % 2 else s - 1 for s in a.shape))
    g = gaussian_window(size, sigma)
    c1, c2 = 0.01 ** 2, 0.03 ** 2
    mu_a, mu_b = _filter_valid(a, g), _filter_valid(b, g)
    saa = _filter_valid(a * a, g) - mu_a * mu_a
    sbb = _filter_valid(b * b, g) - mu_b * mu_b
    sab = _filter_valid(a * b, g) - mu_a * mu_b
    num = (2 * mu_a * mu_b + c1) * (2 * sab + c2)
    den = (mu_a * mu_a + mu_b * mu_b + c1) * (saa + sbb + c2)
    return float(np.mean(num / den))


def ssim_y(pred, target) -> float:
    a, b = _pair(pred, target)
    return float(np.mean([ssim_plane(x, y) for x, y in zip(a, b)]))
