"""Shared domain types, seeded randomness, and the SFLK binary container.

Everything downstream (projection, noise simulation, flicking, training,
the CLI) builds on the types and I/O defined here. All random behavior in
the package flows through :class:`Pcg32` so that a 64-bit seed fully
determines every result, independent of platform.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass

import numpy as np

# Container kind codes (header bytes 12-15).
KIND_IMAGE = 0
KIND_SINOGRAM = 1
KIND_PARAMS = 2

_KIND_NAMES = {KIND_IMAGE: "image", KIND_SINOGRAM: "sinogram", KIND_PARAMS: "params"}
_KIND_CODES = {v: k for k, v in _KIND_NAMES.items()}

# Unit codes (header bytes 40-43). "relative_intensity" images are stored
# with the dimensionless code; the round trip is resolved by kind.
UNIT_DIMENSIONLESS = 0
UNIT_HU = 1
UNIT_MU_PER_MM = 2

UNIT_RELATIVE = "relative_intensity"
UNIT_NAME_HU = "HU"
UNIT_NAME_MU = "mu_per_mm"

_IMAGE_UNIT_CODES = {UNIT_RELATIVE: 0, UNIT_NAME_HU: 1, UNIT_NAME_MU: 2}
_IMAGE_UNIT_NAMES = {v: k for k, v in _IMAGE_UNIT_CODES.items()}

_MAGIC = b"SINOFLK\x00"
_VERSION = 1
_HEADER = struct.Struct("<8sIIIIddI20s")  # 64 bytes total
assert _HEADER.size == 64


class ContainerError(Exception):
    """Base class for SFLK container failures."""


class BadMagicError(ContainerError):
    """File does not start with the SFLK magic bytes."""


class UnsupportedVersionError(ContainerError):
    """Container version is not understood by this implementation."""


class TruncatedPayloadError(ContainerError):
    """File ends before the payload announced in the header."""


@dataclass(frozen=True)
class ScanGeometry:
    """Parallel-beam acquisition description.

    View i has angle ``i * (360 / n_views)`` degrees over the full circle;
    detector bin j has signed isocenter offset ``(j - (n_dets - 1) / 2) *
    det_spacing`` mm.  ``n_views`` must be even so that every view has an
    exactly opposed partner, which is what makes conjugate-ray indexing
    well defined.
    """

    n_views: int
    n_dets: int
    det_spacing: float
    pixel_spacing: float
    image_size: int

    def __post_init__(self):
        if self.n_views <= 0 or self.n_views % 2 != 0:
            raise ValueError(f"n_views must be positive and even, got {self.n_views}")
        if self.n_dets <= 0:
            raise ValueError(f"n_dets must be positive, got {self.n_dets}")
        if self.det_spacing <= 0 or self.pixel_spacing <= 0:
            raise ValueError("det_spacing and pixel_spacing must be positive")
        if self.image_size <= 0:
            raise ValueError(f"image_size must be positive, got {self.image_size}")

    @property
    def view_step_deg(self) -> float:
        return 360.0 / self.n_views

    def view_angles_deg(self) -> np.ndarray:
        return np.arange(self.n_views) * self.view_step_deg

    def det_offsets(self) -> np.ndarray:
        """Signed detector-center offsets from the isocenter, in mm."""
        return (np.arange(self.n_dets) - (self.n_dets - 1) / 2.0) * self.det_spacing


def _check_finite(data: np.ndarray, what: str) -> None:
    if not np.all(np.isfinite(data)):
        raise ValueError(f"non-finite data in {what}")


@dataclass
class Image:
    """Square image with physical pixel spacing and an explicit unit."""

    size: int
    pixel_spacing: float
    data: np.ndarray
    unit: str

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float64)
        if self.data.shape != (self.size, self.size):
            raise ValueError(
                f"image data shape {self.data.shape} does not match size {self.size}"
            )
        if self.unit not in _IMAGE_UNIT_CODES:
            raise ValueError(f"unknown image unit {self.unit!r}")
        _check_finite(self.data, "image")


@dataclass
class Sinogram:
    """Line-integral matrix: row = view, column = detector bin."""

    geometry: ScanGeometry
    data: np.ndarray

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float64)
        expected = (self.geometry.n_views, self.geometry.n_dets)
        if self.data.shape != expected:
            raise ValueError(
                f"sinogram data shape {self.data.shape} does not match geometry {expected}"
            )
        _check_finite(self.data, "sinogram")


# ---------------------------------------------------------------------------
# Seeded randomness
# ---------------------------------------------------------------------------

_MASK64 = (1 << 64) - 1
_PCG_MULT = 6364136223846793005


def splitmix64(x: int) -> int:
    """One splitmix64 output for the given 64-bit state value."""
    z = (x + 0x9E3779B97F4A7C15) & _MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return z ^ (z >> 31)


def child_seed(parent_seed: int, stream_index: int) -> int:
    """Derive an independent child seed: splitmix64(parent XOR index)."""
    return splitmix64((parent_seed ^ stream_index) & _MASK64)


class Pcg32:
    """PCG32 (XSH-RR) generator with Box-Muller normals.

    State advances as ``s <- s * 6364136223846793005 + inc`` mod 2^64 and
    each 32-bit output is an xorshift-high of the previous state followed
    by a random rotation, matching the published reference generator.
    A fixed (seed, stream) pair yields a bit-identical output sequence on
    every platform.

    Derivations from the raw 32-bit stream:

    * ``uniform_u(bound)``: rejection sampling (threshold ``2^32 % bound``)
      so every value in [0, bound) is exactly equally likely.
    * ``random()``: ``next_u32() * 2^-32`` in [0, 1).
    * ``normal()``: Box-Muller on ``u1 = (next_u32() + 1) * 2^-32`` (open
      at 0 so the log is finite) and ``u2 = next_u32() * 2^-32``; the
      second variate of each pair is cached and returned by the next call.
    """

    __slots__ = ("state", "inc", "_spare")

    def __init__(self, seed: int, stream: int = 0):
        self.inc = ((stream << 1) | 1) & _MASK64
        self.state = 0
        self._spare: float | None = None
        self.next_u32()
        self.state = (self.state + (seed & _MASK64)) & _MASK64
        self.next_u32()

    def next_u32(self) -> int:
        old = self.state
        self.state = (old * _PCG_MULT + self.inc) & _MASK64
        xorshifted = (((old >> 18) ^ old) >> 27) & 0xFFFFFFFF
        rot = old >> 59
        return ((xorshifted >> rot) | (xorshifted << ((-rot) & 31))) & 0xFFFFFFFF

    def uniform_u(self, bound: int) -> int:
        """Uniform integer in [0, bound), rejection-sampled (no modulo bias)."""
        if bound < 1:
            raise ValueError(f"bound must be >= 1, got {bound}")
        if bound == 1:
            return 0
        threshold = (1 << 32) % bound
        while True:
            r = self.next_u32()
            if r >= threshold:
                return r % bound

    def random(self) -> float:
        """Uniform real in [0, 1)."""
        return self.next_u32() * 2.0**-32

    def normal(self) -> float:
        """Standard normal variate (Box-Muller, pairwise with caching)."""
        if self._spare is not None:
            z = self._spare
            self._spare = None
            return z
        u1 = (self.next_u32() + 1) * 2.0**-32
        u2 = self.next_u32() * 2.0**-32
        mag = math.sqrt(-2.0 * math.log(u1))
        self._spare = mag * math.sin(2.0 * math.pi * u2)
        return mag * math.cos(2.0 * math.pi * u2)


# ---------------------------------------------------------------------------
# SFLK container
# ---------------------------------------------------------------------------


def write_container(path, kind, matrix, metadata) -> None:
    """Write a matrix to the SFLK binary container.

    ``kind`` is "image", "sinogram" or "params" (or the corresponding code).
    ``metadata`` carries ``spacing_row``, ``spacing_col`` (f64, mm or
    degrees depending on kind) and an integer ``unit`` code.  Payload is
    float32 little-endian row-major; identical inputs produce identical
    bytes.
    """
    matrix = np.asarray(matrix)
    if matrix.ndim != 2:
        raise ValueError(f"container payload must be 2-D, got shape {matrix.shape}")
    _check_finite(matrix, "container payload")
    kind_code = _KIND_CODES[kind] if isinstance(kind, str) else int(kind)
    if kind_code not in _KIND_NAMES:
        raise ValueError(f"unknown container kind {kind!r}")
    spacing_row = float(metadata.get("spacing_row", 0.0))
    spacing_col = float(metadata.get("spacing_col", 0.0))
    unit = int(metadata.get("unit", UNIT_DIMENSIONLESS))
    if kind_code == KIND_SINOGRAM and (spacing_row <= 0.0 or spacing_col <= 0.0):
        raise ValueError("sinogram containers require positive spacing metadata")
    rows, cols = matrix.shape
    header = _HEADER.pack(
        _MAGIC, _VERSION, kind_code, rows, cols, spacing_row, spacing_col, unit, b"\x00" * 20
    )
    payload = np.ascontiguousarray(matrix, dtype="<f4").tobytes()
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(payload)


def read_container(path):
    """Read an SFLK container; returns ``(kind, matrix, metadata)``.

    Raises :class:`BadMagicError`, :class:`UnsupportedVersionError` or
    :class:`TruncatedPayloadError` depending on what is wrong with the
    file.
    """
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) >= 8 and raw[:8] != _MAGIC:
        raise BadMagicError(f"bad magic in {path}")
    if len(raw) < _HEADER.size:
        if len(raw) < 8:
            raise BadMagicError(f"bad magic in {path}")
        raise TruncatedPayloadError(f"truncated header in {path}")
    magic, version, kind_code, rows, cols, spacing_row, spacing_col, unit, _ = _HEADER.unpack(
        raw[: _HEADER.size]
    )
    if version != _VERSION:
        raise UnsupportedVersionError(f"unsupported container version {version} in {path}")
    if kind_code not in _KIND_NAMES:
        raise ContainerError(f"unknown container kind code {kind_code} in {path}")
    n_bytes = rows * cols * 4
    body = raw[_HEADER.size :]
    if len(body) < n_bytes:
        raise TruncatedPayloadError(
            f"truncated payload in {path}: expected {n_bytes} bytes, got {len(body)}"
        )
    matrix = np.frombuffer(body[:n_bytes], dtype="<f4").reshape(rows, cols)
    metadata = {"spacing_row": spacing_row, "spacing_col": spacing_col, "unit": unit}
    return _KIND_NAMES[kind_code], matrix.copy(), metadata


def save_image(path, img: Image) -> None:
    write_container(
        path,
        "image",
        img.data,
        {
            "spacing_row": img.pixel_spacing,
            "spacing_col": img.pixel_spacing,
            "unit": _IMAGE_UNIT_CODES[img.unit],
        },
    )


def load_image(path) -> Image:
    kind, matrix, meta = read_container(path)
    if kind != "image":
        raise ContainerError(f"{path} holds a {kind}, expected an image")
    rows, cols = matrix.shape
    if rows != cols:
        raise ContainerError(f"{path} image payload is not square: {matrix.shape}")
    return Image(
        size=rows,
        pixel_spacing=meta["spacing_col"],
        data=matrix.astype(np.float64),
        unit=_IMAGE_UNIT_NAMES[meta["unit"]],
    )


def save_sinogram(path, sino: Sinogram) -> None:
    write_container(
        path,
        "sinogram",
        sino.data,
        {
            "spacing_row": sino.geometry.view_step_deg,
            "spacing_col": sino.geometry.det_spacing,
            "unit": UNIT_DIMENSIONLESS,
        },
    )


def load_sinogram(path, image_size: int | None = None, pixel_spacing: float | None = None) -> Sinogram:
    """Load a sinogram container.

    The header carries views, detectors and detector spacing; the
    reconstruction-grid fields default to a square grid covering the
    detector extent (``image_size = n_dets``, ``pixel_spacing =
    det_spacing``) and only matter to operations that reconstruct.
    """
    kind, matrix, meta = read_container(path)
    if kind != "sinogram":
        raise ContainerError(f"{path} holds a {kind}, expected a sinogram")
    rows, cols = matrix.shape
    geom = ScanGeometry(
        n_views=rows,
        n_dets=cols,
        det_spacing=meta["spacing_col"],
        pixel_spacing=pixel_spacing if pixel_spacing is not None else meta["spacing_col"],
        image_size=image_size if image_size is not None else cols,
    )
    return Sinogram(geometry=geom, data=matrix.astype(np.float64))
