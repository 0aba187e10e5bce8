"""Parallel-beam forward projection, exact-adjoint backprojection, SART.

The discrete forward operator samples each ray on a symmetric grid with
step ``0.5 * pixel_spacing`` and bilinear interpolation; backprojection
scatters the identical weights, so ``<A x, y> == <x, A^T y>`` holds to
rounding error.  SART sweeps the views one at a time in index order,
normalizing residuals by per-ray weight sums and updates by per-pixel
column sums.  All accumulation is double precision.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import _kernels
from .core import Image, ScanGeometry, Sinogram, UNIT_NAME_MU


# Per-view column-sum caching threshold for SART (f32 cache bytes).
DEN_CACHE_LIMIT_BYTES = 400_000_000


@dataclass(frozen=True)
class SartConfig:
    iterations: int = 50
    relaxation: float = 1.0
    nonneg: bool = True
    epsilon: float = 1e-8

    def __post_init__(self):
        if self.iterations <= 0:
            raise ValueError(f"iterations must be positive, got {self.iterations}")
        if not 0.0 < self.relaxation <= 2.0:
            raise ValueError(f"relaxation must be in (0, 2], got {self.relaxation}")
        if self.epsilon <= 0:
            raise ValueError(f"epsilon must be positive, got {self.epsilon}")


def _trig(geom: ScanGeometry):
    angles = np.deg2rad(geom.view_angles_deg())
    return np.cos(angles), np.sin(angles)


def _sampling(geom: ScanGeometry):
    step = 0.5 * geom.pixel_spacing
    # Half-width of the symmetric sample grid: covers the image diagonal.
    half = int(math.floor(geom.image_size * math.sqrt(2.0)))
    return step, half


def forward_project(img: Image, geom: ScanGeometry) -> Sinogram:
    """Ray-driven line integrals of an attenuation image (mu in 1/mm)."""
    if img.unit != UNIT_NAME_MU:
        raise ValueError(f"forward projection expects a mu_per_mm image, got {img.unit}")
    if img.size != geom.image_size:
        raise ValueError(f"image size {img.size} does not match geometry {geom.image_size}")
    if img.pixel_spacing != geom.pixel_spacing:
        raise ValueError("image pixel_spacing does not match geometry")
    cos_t, sin_t = _trig(geom)
    offsets = geom.det_offsets()
    step, half = _sampling(geom)
    data = np.ascontiguousarray(img.data, dtype=np.float64)
    out = np.empty((geom.n_views, geom.n_dets), dtype=np.float64)
    for i in range(geom.n_views):
        _kernels.fwd_view(data, cos_t[i], sin_t[i], offsets, step, half, geom.pixel_spacing, out[i])
    return Sinogram(geometry=geom, data=out)


def back_project(sino: Sinogram, geom: ScanGeometry | None = None) -> Image:
    """Exact transpose of :func:`forward_project` applied to a sinogram."""
    geom = geom or sino.geometry
    if (sino.geometry.n_views, sino.geometry.n_dets) != (geom.n_views, geom.n_dets):
        raise ValueError("sinogram dimensions do not match geometry")
    cos_t, sin_t = _trig(geom)
    offsets = geom.det_offsets()
    step, half = _sampling(geom)
    data = np.ascontiguousarray(sino.data, dtype=np.float64)
    img = np.zeros((geom.image_size, geom.image_size), dtype=np.float64)
    for i in range(geom.n_views):
        _kernels.bwd_view(data[i], cos_t[i], sin_t[i], offsets, step, half, geom.pixel_spacing, img)
    return Image(size=geom.image_size, pixel_spacing=geom.pixel_spacing, data=img, unit=UNIT_NAME_MU)


def ray_weight_sums(geom: ScanGeometry) -> np.ndarray:
    """Per-ray sums of projection weights (discrete ray lengths), M x N."""
    ones = Image(
        size=geom.image_size,
        pixel_spacing=geom.pixel_spacing,
        data=np.ones((geom.image_size, geom.image_size)),
        unit=UNIT_NAME_MU,
    )
    return forward_project(ones, geom).data


def sart(
    sino: Sinogram,
    geom: ScanGeometry | None = None,
    cfg: SartConfig | None = None,
    init: Image | None = None,
    return_residuals: bool = False,
):
    """SART reconstruction of a sinogram into a mu image.

    Each sweep applies, view by view in index order,
    ``x <- x + lambda * C^-1 A_i^T R_i^-1 (p_i - A_i x)`` with R_i the
    per-ray weight sums and C the per-pixel column sums of view i,
    divisions guarded by ``cfg.epsilon``; the image is clamped at zero
    after each sweep when ``cfg.nonneg``.

    When ``return_residuals`` is set, also returns the full sinogram
    residual norm ``||p - A x||`` measured after each sweep.
    """
    geom = geom or sino.geometry
    cfg = cfg or SartConfig()
    if (sino.geometry.n_views, sino.geometry.n_dets) != (geom.n_views, geom.n_dets):
        raise ValueError("sinogram dimensions do not match geometry")
    n = geom.image_size
    if init is not None:
        if init.size != n:
            raise ValueError(f"init image size {init.size} does not match geometry {n}")
        x = np.array(init.data, dtype=np.float64)
    else:
        x = np.zeros((n, n), dtype=np.float64)

    cos_t, sin_t = _trig(geom)
    offsets = geom.det_offsets()
    step, half = _sampling(geom)
    p = np.ascontiguousarray(sino.data, dtype=np.float64)
    ray_norm = ray_weight_sums(geom)
    num = np.empty((n, n), dtype=np.float64)
    den = np.empty((n, n), dtype=np.float64)
    work = np.empty(geom.n_dets, dtype=np.float64)

    # Per-view pixel column sums are iteration-independent; cache them when
    # that fits in a few hundred MB (always at desk scale), otherwise
    # rebuild per view.  The choice depends only on the geometry, so runs
    # stay reproducible.
    cache_bytes = geom.n_views * n * n * 4
    den_cache = None
    if cache_bytes <= DEN_CACHE_LIMIT_BYTES:
        den_cache = np.empty((geom.n_views, n, n), dtype=np.float32)
        ones = np.ones(geom.n_dets, dtype=np.float64)
        for i in range(geom.n_views):
            den[:] = 0.0
            _kernels.bwd_view(ones, cos_t[i], sin_t[i], offsets, step, half, geom.pixel_spacing, den)
            den_cache[i] = den

    residuals = []
    for _ in range(cfg.iterations):
        for i in range(geom.n_views):
            if den_cache is not None:
                _kernels.sart_view_update_cached(
                    x, cos_t[i], sin_t[i], offsets, p[i], ray_norm[i],
                    step, half, geom.pixel_spacing, cfg.relaxation, cfg.epsilon,
                    num, den_cache[i], work,
                )
            else:
                _kernels.sart_view_update(
                    x, cos_t[i], sin_t[i], offsets, p[i], ray_norm[i],
                    step, half, geom.pixel_spacing, cfg.relaxation, cfg.epsilon,
                    num, den, work,
                )
        if cfg.nonneg:
            np.maximum(x, 0.0, out=x)
        if return_residuals:
            recon = Image(size=n, pixel_spacing=geom.pixel_spacing, data=x.copy(), unit=UNIT_NAME_MU)
            residuals.append(float(np.linalg.norm(p - forward_project(recon, geom).data)))
    result = Image(size=n, pixel_spacing=geom.pixel_spacing, data=x, unit=UNIT_NAME_MU)
    if return_residuals:
        return result, residuals
    return result
