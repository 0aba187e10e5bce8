"""PSNR and SSIM image-quality metrics on HU images.

PSNR uses the reference image's value range by default (so it is not
symmetric in its arguments); SSIM uses the standard Gaussian-weighted
local statistics with an 11x11, sigma 1.5 window and is symmetric once
the dynamic range is fixed externally.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .core import Image


@dataclass(frozen=True)
class SsimParams:
    k1: float = 0.01
    k2: float = 0.03
    window: int = 11
    sigma: float = 1.5
    data_range: float | None = None  # None: use the reference image's range

    def __post_init__(self):
        if self.window < 1 or self.window % 2 == 0:
            raise ValueError(f"window must be odd and positive, got {self.window}")
        if self.sigma <= 0:
            raise ValueError(f"sigma must be positive, got {self.sigma}")
        if self.data_range is not None and self.data_range <= 0:
            raise ValueError(f"data_range must be positive, got {self.data_range}")


def _check_dims(ref: Image, test: Image) -> None:
    if ref.data.shape != test.data.shape:
        raise ValueError(f"image shapes differ: {ref.data.shape} vs {test.data.shape}")


def psnr(ref: Image, test: Image, data_range: float | None = None) -> float:
    """Peak signal-to-noise ratio in dB; ``inf`` when the images are identical.

    The peak R defaults to max(ref) - min(ref), so swapping the arguments
    changes the answer; pass ``data_range`` to fix R externally.
    """
    _check_dims(ref, test)
    if data_range is None:
        data_range = float(ref.data.max() - ref.data.min())
        if data_range == 0.0:
            raise ValueError("constant reference image: pass an explicit data_range")
    mse = float(np.mean((ref.data - test.data) ** 2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(data_range * data_range / mse)


def _gaussian_window(size: int, sigma: float) -> np.ndarray:
    half = (size - 1) / 2.0
    x = np.arange(size) - half
    g = np.exp(-(x**2) / (2.0 * sigma**2))
    return g / g.sum()


def _local_mean(img: np.ndarray, g: np.ndarray) -> np.ndarray:
    # Separable Gaussian-weighted mean, valid region only.
    w = g.shape[0]
    rows = sliding_window_view(img, w, axis=0) @ g
    return sliding_window_view(rows, w, axis=1) @ g


def ssim(ref: Image, test: Image, params: SsimParams = SsimParams()) -> float:
    """Mean structural similarity over the valid (fully windowed) region."""
    _check_dims(ref, test)
    x = ref.data
    y = test.data
    if min(x.shape) < params.window:
        raise ValueError(f"images smaller than the {params.window}x{params.window} ssim window")
    data_range = params.data_range
    if data_range is None:
        data_range = float(x.max() - x.min())
        if data_range == 0.0:
            raise ValueError("constant reference image: pass an explicit data_range")
    c1 = (params.k1 * data_range) ** 2
    c2 = (params.k2 * data_range) ** 2
    g = _gaussian_window(params.window, params.sigma)
    mu_x = _local_mean(x, g)
    mu_y = _local_mean(y, g)
    var_x = _local_mean(x * x, g) - mu_x * mu_x
    var_y = _local_mean(y * y, g) - mu_y * mu_y
    cov = _local_mean(x * y, g) - mu_x * mu_y
    num = (2.0 * mu_x * mu_y + c1) * (2.0 * cov + c2)
    den = (mu_x * mu_x + mu_y * mu_y + c1) * (var_x + var_y + c2)
    return float(np.mean(num / den))
