"""Synthetic ground-truth generation and HU/attenuation unit conversions.

The default test object is the modified Shepp-Logan head phantom, shipped
as a plain-text ellipse table so alternate phantoms are drop-in.  Pixel
values are additive "relative attenuation" where 0 is air and 1 is
water-equivalent; :func:`intensity_to_hu` and friends connect that scale
to Hounsfield units and linear attenuation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from importlib import resources

import numpy as np

from .core import Image, UNIT_NAME_HU, UNIT_NAME_MU, UNIT_RELATIVE

# Water attenuation in 1/mm used by default when converting HU to linear
# attenuation; representative of a ~50 keV monoenergetic beam.
DEFAULT_MU_WATER = 0.0227


@dataclass(frozen=True)
class EllipseSpec:
    """One additive ellipse in normalized [-1, 1] coordinates."""

    cx: float
    cy: float
    a: float
    b: float
    angle_deg: float
    intensity: float

    def __post_init__(self):
        if self.a <= 0 or self.b <= 0:
            raise ValueError(f"ellipse semi-axes must be positive, got a={self.a}, b={self.b}")

    def contains(self, x: float, y: float) -> bool:
        """Analytic membership test for a single point."""
        phi = math.radians(self.angle_deg)
        dx, dy = x - self.cx, y - self.cy
        xr = dx * math.cos(phi) + dy * math.sin(phi)
        yr = -dx * math.sin(phi) + dy * math.cos(phi)
        return (xr / self.a) ** 2 + (yr / self.b) ** 2 <= 1.0


def parse_ellipse_table(text: str) -> list[EllipseSpec]:
    """Parse the six-column whitespace table ("#" starts a comment)."""
    ellipses = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        body = line.split("#", 1)[0].strip()
        if not body:
            continue
        parts = body.split()
        if len(parts) != 6:
            raise ValueError(f"ellipse table line {lineno}: expected 6 fields, got {len(parts)}")
        cx, cy, a, b, angle, intensity = (float(p) for p in parts)
        ellipses.append(EllipseSpec(cx, cy, a, b, angle, intensity))
    return ellipses


def load_ellipse_table(path) -> list[EllipseSpec]:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_ellipse_table(fh.read())


def shepp_logan_ellipses() -> list[EllipseSpec]:
    """The bundled modified Shepp-Logan ten-ellipse table."""
    text = resources.files("sinoflick").joinpath("data/shepp_logan_modified.txt").read_text()
    return parse_ellipse_table(text)


def rasterize(ellipses, n: int, pixel_spacing: float = 1.0) -> Image:
    """Point-sample the ellipse sum on an n x n grid.

    Pixel (row r, col c) has its center at normalized coordinates
    ``x = (c - (n-1)/2) * 2/n`` and ``y = ((n-1)/2 - r) * 2/n`` (row 0 at
    the top).  A pixel's value is the sum of intensities of all ellipses
    whose closed interior contains the center; no anti-aliasing.
    """
    if n < 16:
        raise ValueError(f"raster size must be >= 16, got {n}")
    coords = (np.arange(n) - (n - 1) / 2.0) * (2.0 / n)
    x = coords[np.newaxis, :]
    y = -coords[:, np.newaxis]
    data = np.zeros((n, n), dtype=np.float64)
    for e in ellipses:
        phi = math.radians(e.angle_deg)
        ct, st = math.cos(phi), math.sin(phi)
        dx = x - e.cx
        dy = y - e.cy
        xr = dx * ct + dy * st
        yr = -dx * st + dy * ct
        inside = (xr / e.a) ** 2 + (yr / e.b) ** 2 <= 1.0
        data[inside] += e.intensity
    return Image(size=n, pixel_spacing=pixel_spacing, data=data, unit=UNIT_RELATIVE)


def intensity_to_hu(img: Image) -> Image:
    """Map relative attenuation to HU: v=0 is air (-1000), v=1 is water (0)."""
    if img.unit != UNIT_RELATIVE:
        raise ValueError(f"expected a relative_intensity image, got {img.unit}")
    return Image(
        size=img.size,
        pixel_spacing=img.pixel_spacing,
        data=1000.0 * (img.data - 1.0),
        unit=UNIT_NAME_HU,
    )


def hu_to_mu(img: Image, mu_water: float = DEFAULT_MU_WATER) -> Image:
    """HU to linear attenuation in 1/mm, clamped at 0 (nothing amplifies)."""
    if img.unit != UNIT_NAME_HU:
        raise ValueError(f"expected an HU image, got {img.unit}")
    if mu_water <= 0:
        raise ValueError(f"mu_water must be positive, got {mu_water}")
    mu = mu_water * (1.0 + img.data / 1000.0)
    return Image(
        size=img.size,
        pixel_spacing=img.pixel_spacing,
        data=np.maximum(mu, 0.0),
        unit=UNIT_NAME_MU,
    )


def mu_to_hu(img: Image, mu_water: float = DEFAULT_MU_WATER) -> Image:
    """Exact inverse of :func:`hu_to_mu` on mu >= 0."""
    if img.unit != UNIT_NAME_MU:
        raise ValueError(f"expected a mu_per_mm image, got {img.unit}")
    if mu_water <= 0:
        raise ValueError(f"mu_water must be positive, got {mu_water}")
    return Image(
        size=img.size,
        pixel_spacing=img.pixel_spacing,
        data=1000.0 * (img.data / mu_water - 1.0),
        unit=UNIT_NAME_HU,
    )
