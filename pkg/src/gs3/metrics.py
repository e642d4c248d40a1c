"""Image metrics: differentiable SSIM (plain 11x11 Gaussian window, sigma 1.5,
K1=0.01, K2=0.03, dynamic range 1.0, valid windows only) and PSNR."""

from __future__ import annotations

import numpy as np
from scipy.ndimage import convolve1d

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03
_C1 = SSIM_K1**2
_C2 = SSIM_K2**2
_HALF = SSIM_WINDOW // 2


def _window() -> np.ndarray:
    x = np.arange(SSIM_WINDOW) - _HALF
    w = np.exp(-0.5 * (x / SSIM_SIGMA) ** 2)
    return w / w.sum()


_W1D = _window()


def _filt(img: np.ndarray) -> np.ndarray:
    """Separable window over (H, W, C), zero padding; callers crop to valid."""
    out = convolve1d(img, _W1D, axis=0, mode="constant")
    return convolve1d(out, _W1D, axis=1, mode="constant")


def _crop(img: np.ndarray) -> np.ndarray:
    return img[_HALF:img.shape[0] - _HALF, _HALF:img.shape[1] - _HALF]


def _uncrop(grad: np.ndarray, shape) -> np.ndarray:
    out = np.zeros(shape)
    out[_HALF:shape[0] - _HALF, _HALF:shape[1] - _HALF] = grad
    return out


def _check_pair(a, b):
    a = np.atleast_3d(np.asarray(a, dtype=np.float64))
    b = np.atleast_3d(np.asarray(b, dtype=np.float64))
    if a.shape != b.shape:
        raise ValueError(f"image shapes differ: {a.shape} vs {b.shape}")
    return a, b


def compute_ssim(a, b, want_grad: bool = False):
    """Mean local SSIM over valid windows; optionally also dSSIM/da.

    Values are clamped to [0, 1] for the metric; the gradient is zero where
    the clamp is active.
    """
    a_raw, b_raw = _check_pair(a, b)
    if a_raw.shape[0] < SSIM_WINDOW or a_raw.shape[1] < SSIM_WINDOW:
        raise ValueError(f"images must be at least {SSIM_WINDOW}px in each dimension")
    a = np.clip(a_raw, 0.0, 1.0)
    b = np.clip(b_raw, 0.0, 1.0)

    mu_a = _crop(_filt(a))
    mu_b = _crop(_filt(b))
    s_aa = _crop(_filt(a * a)) - mu_a**2
    s_bb = _crop(_filt(b * b)) - mu_b**2
    s_ab = _crop(_filt(a * b)) - mu_a * mu_b

    A = 2 * mu_a * mu_b + _C1
    B = 2 * s_ab + _C2
    C = mu_a**2 + mu_b**2 + _C1
    D = s_aa + s_bb + _C2
    ssim_map = (A * B) / (C * D)
    value = float(ssim_map.mean())
    if not want_grad:
        return value

    n = ssim_map.size
    g_mu_a = (2 * mu_b * B / (C * D) - 2 * mu_a * A * B / (C**2 * D)) / n
    g_s_ab = (2 * A / (C * D)) / n
    g_s_aa = (-A * B / (C * D**2)) / n

    shape = a.shape
    wt_mu = _filt(_uncrop(g_mu_a - 2 * mu_a * g_s_aa - mu_b * g_s_ab, shape))
    wt_aa = _filt(_uncrop(g_s_aa, shape))
    wt_ab = _filt(_uncrop(g_s_ab, shape))
    grad = wt_mu + 2 * a * wt_aa + b * wt_ab
    grad = np.where((a_raw >= 0.0) & (a_raw <= 1.0), grad, 0.0)
    return value, grad


def psnr(a, b) -> float:
    """10*log10(1/MSE) with peak 1.0; +inf for identical images."""
    a, b = _check_pair(a, b)
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return float("inf")
    return 10.0 * np.log10(1.0 / mse)
