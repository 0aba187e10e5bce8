"""Conjugate-pair indexing and noise-variant sinogram generation.

In a full-circle parallel-beam scan, the ray at (view i, detector j) and
the ray at (view i + M/2, detector N-1-j) traverse the same physical line,
so their line integrals share an expected value and differ only in
measurement noise.  Swapping values inside randomly chosen conjugate pairs
therefore rearranges the noise while leaving the object content intact,
which is what provides training pairs for the denoiser.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .core import Pcg32, ScanGeometry, Sinogram


@dataclass(frozen=True)
class ConjugateMap:
    """Pairing of sinogram cells into k = M*N/2 conjugate pairs.

    Pair t (0 <= t < k) is the unordered pair whose lexicographically
    smaller cell is the t-th cell, row-major, over the half sinogram
    (views 0..M/2-1), i.e. t = view * N + det.
    """

    geometry: ScanGeometry

    @property
    def pair_count(self) -> int:
        return self.geometry.n_views * self.geometry.n_dets // 2

    def pair_cells(self, t: int):
        n = self.geometry.n_dets
        if not 0 <= t < self.pair_count:
            raise IndexError(f"pair index {t} out of range [0, {self.pair_count})")
        view, det = divmod(t, n)
        return (view, det), conjugate_index(self.geometry, view, det)


@dataclass(frozen=True)
class FlickPlan:
    """A seeded set of conjugate-pair swap draws.

    ``n_draws`` pair indices are drawn uniformly from [0, k) with
    replacement; each draw toggles that pair's swap state, so a pair is
    swapped iff it is drawn an odd number of times.
    """

    n_draws: int
    seed: int

    def __post_init__(self):
        if self.n_draws < 0:
            raise ValueError(f"n_draws must be >= 0, got {self.n_draws}")


def conjugate_index(geom: ScanGeometry, view: int, det: int) -> tuple[int, int]:
    """The cell measuring the same line 180 degrees away."""
    if not 0 <= view < geom.n_views:
        raise IndexError(f"view {view} out of range [0, {geom.n_views})")
    if not 0 <= det < geom.n_dets:
        raise IndexError(f"det {det} out of range [0, {geom.n_dets})")
    return (view + geom.n_views // 2) % geom.n_views, geom.n_dets - 1 - det


def expand_swap_mask(plan: FlickPlan, geom: ScanGeometry) -> np.ndarray:
    """Toggle the plan's draws into a boolean mask over the half sinogram.

    Returns shape (M/2, N); entry [v, d] says whether pair v*N+d ends up
    swapped.  Draws consume the plan's PCG32 stream in order, so the mask
    is a pure function of (n_draws, seed, geometry).
    """
    half = geom.n_views // 2
    n = geom.n_dets
    k = half * n
    mask = np.zeros(k, dtype=bool)
    rng = Pcg32(plan.seed)
    for _ in range(plan.n_draws):
        t = rng.uniform_u(k)
        mask[t] = not mask[t]
    return mask.reshape(half, n)


def flick(sino: Sinogram, plan: FlickPlan) -> Sinogram:
    """Swap conjugate projection values according to the plan."""
    geom = sino.geometry
    mask = expand_swap_mask(plan, geom)
    half = geom.n_views // 2
    out = sino.data.copy()
    top = sino.data[:half]
    bottom_conj = sino.data[half:, ::-1]  # [v, d] -> cell (v + M/2, N-1-d)
    out[:half][mask] = bottom_conj[mask]
    out_bottom = out[half:, ::-1]
    out_bottom[mask] = top[mask]
    return Sinogram(geometry=geom, data=out)


class ConjugateDiscrepancy(NamedTuple):
    max_abs: float
    mean_abs: float
    rms: float


def conjugate_discrepancy(sino: Sinogram) -> ConjugateDiscrepancy:
    """Statistics of |s(i,j) - s(conj(i,j))| over all conjugate pairs.

    Diagnostic for how well the data honor the premise that conjugate
    rays measure the same path: zero for ideal noiseless data, of order
    sqrt(2) times the noise level for noisy data.
    """
    geom = sino.geometry
    half = geom.n_views // 2
    diff = np.abs(sino.data[:half] - sino.data[half:, ::-1])
    return ConjugateDiscrepancy(
        max_abs=float(diff.max()),
        mean_abs=float(diff.mean()),
        rms=float(np.sqrt(np.mean(diff**2))),
    )
