"""Objective quality metrics: MSE, PSNR (255 peak), and windowed SSIM."""

from __future__ import annotations

import math

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .image import Image

SSIM_WINDOW = 8
SSIM_C1 = (0.01 * 255.0) ** 2
SSIM_C2 = (0.03 * 255.0) ** 2


def _pair(x: Image, y: Image):
    if x.shape != y.shape:
        raise ValueError(f"image sizes differ: {x.shape} vs {y.shape}")
    return x.data, y.data


def mse(x: Image, y: Image) -> float:
    """Mean squared pixel difference."""
    a, b = _pair(x, y)
    d = a - b
    return float(np.mean(d * d))


def psnr(x: Image, y: Image) -> float:
    """Peak signal-to-noise ratio in dB against a 255 peak.

    Identical images report +inf (serialized as "inf" in CSV output).
    """
    err = mse(x, y)
    if err == 0.0:
        return math.inf
    return 10.0 * math.log10(255.0 * 255.0 / err)


def ssim(x: Image, y: Image) -> float:
    """Mean local structural similarity over 8x8 sliding windows (stride 1).

    Uniform windows with the standard stabilizers C1 = (0.01*255)^2 and
    C2 = (0.03*255)^2; covariance and variances use plain means over each
    window.
    """
    a, b = _pair(x, y)
    w = SSIM_WINDOW
    if min(a.shape) < w:
        raise ValueError(f"image {a.shape} smaller than the {w}x{w} SSIM window")
    wa = sliding_window_view(a, (w, w))
    wb = sliding_window_view(b, (w, w))
    mu_a = wa.mean(axis=(2, 3))
    mu_b = wb.mean(axis=(2, 3))
    sq_a = np.mean(wa * wa, axis=(2, 3)) - mu_a * mu_a
    sq_b = np.mean(wb * wb, axis=(2, 3)) - mu_b * mu_b
    cov = np.mean(wa * wb, axis=(2, 3)) - mu_a * mu_b
    num = (2.0 * mu_a * mu_b + SSIM_C1) * (2.0 * cov + SSIM_C2)
    den = (mu_a * mu_a + mu_b * mu_b + SSIM_C1) * (sq_a + sq_b + SSIM_C2)
    return float(np.mean(num / den))
