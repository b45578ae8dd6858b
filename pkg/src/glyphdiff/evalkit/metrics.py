"""Reference image-quality metrics: MSE, PSNR, windowed SSIM.

SSIM uses 8x8 windows at stride 4 with C1=(0.01*peak)^2, C2=(0.03*peak)^2,
averaged over all windows and channels.
"""

from __future__ import annotations

import math

import numpy as np

from ..errors import ContractError


def _check_pair(a: np.ndarray, b: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ContractError(f"shape mismatch {a.shape} vs {b.shape}")
    return a, b


def mse(a: np.ndarray, b: np.ndarray) -> float:
    a, b = _check_pair(a, b)
    return float(np.mean((a - b) ** 2))


def psnr(a: np.ndarray, b: np.ndarray, peak: float = 1.0) -> float:
    err = mse(a, b)
    if err == 0.0:
        return math.inf
    return float(10.0 * math.log10(peak**2 / err))


def ssim(
    a: np.ndarray,
    b: np.ndarray,
    peak: float = 1.0,
    window: int = 8,
    stride: int = 4,
) -> float:
    a, b = _check_pair(a, b)
    if a.ndim == 2:
        a, b = a[..., None], b[..., None]
    if a.ndim != 3:
        raise ContractError(f"expected (H,W) or (H,W,C), got {a.shape}")
    h, w, _ = a.shape
    if h < window or w < window:
        raise ContractError(f"image {h}x{w} smaller than window {window}")
    c1 = (0.01 * peak) ** 2
    c2 = (0.03 * peak) ** 2
    values = []
    for ch in range(a.shape[2]):
        wa = np.lib.stride_tricks.sliding_window_view(a[..., ch], (window, window))
        wb = np.lib.stride_tricks.sliding_window_view(b[..., ch], (window, window))
        wa = wa[::stride, ::stride].reshape(-1, window * window)
        wb = wb[::stride, ::stride].reshape(-1, window * window)
        mu_a = wa.mean(axis=1)
        mu_b = wb.mean(axis=1)
        var_a = wa.var(axis=1)
        var_b = wb.var(axis=1)
        cov = (wa * wb).mean(axis=1) - mu_a * mu_b
        num = (2 * mu_a * mu_b + c1) * (2 * cov + c2)
        den = (mu_a**2 + mu_b**2 + c1) * (var_a + var_b + c2)
        values.append(num / den)
    return float(np.mean(np.concatenate(values)))
