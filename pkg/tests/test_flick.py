import numpy as np
import pytest

from sinoflick.core import ScanGeometry, Sinogram
from sinoflick.flick import (
    ConjugateMap,
    FlickPlan,
    conjugate_discrepancy,
    conjugate_index,
    expand_swap_mask,
    flick,
)


def _geom(views, dets):
    return ScanGeometry(
        n_views=views, n_dets=dets, det_spacing=1.0, pixel_spacing=1.0, image_size=64
    )


def test_conjugate_index_paper_scale_corner():
    geom = _geom(1160, 672)
    assert conjugate_index(geom, 0, 0) == (580, 671)


def test_conjugate_index_involution_exhaustive():
    geom = _geom(8, 6)
    for v in range(8):
        for d in range(6):
            v2, d2 = conjugate_index(geom, v, d)
            assert conjugate_index(geom, v2, d2) == (v, d)
            assert (v2, d2) != (v, d)  # no fixed points


def test_conjugate_index_range_checks():
    geom = _geom(4, 2)
    with pytest.raises(IndexError):
        conjugate_index(geom, 4, 0)
    with pytest.raises(IndexError):
        conjugate_index(geom, 0, 2)


def test_pair_enumeration_4x2():
    geom = _geom(4, 2)
    cmap = ConjugateMap(geom)
    assert cmap.pair_count == 4
    pairs = [cmap.pair_cells(t) for t in range(4)]
    assert pairs == [
        ((0, 0), (2, 1)),
        ((0, 1), (2, 0)),
        ((1, 0), (3, 1)),
        ((1, 1), (3, 0)),
    ]
    # the pairs partition all 8 cells
    cells = [c for p in pairs for c in p]
    assert len(set(cells)) == 8


def test_flick_l_zero_is_identity():
    geom = _geom(6, 4)
    sino = Sinogram(geom, np.random.default_rng(0).random((6, 4)))
    out = flick(sino, FlickPlan(n_draws=0, seed=1))
    assert np.array_equal(out.data, sino.data)


@pytest.mark.parametrize("seed", range(5))
def test_flick_double_application_restores_input(seed):
    geom = _geom(10, 8)
    sino = Sinogram(geom, np.random.default_rng(seed).random((10, 8)))
    plan = FlickPlan(n_draws=37, seed=seed)
    assert np.array_equal(flick(flick(sino, plan), plan).data, sino.data)


@pytest.mark.parametrize("seed", range(5))
def test_flick_preserves_value_multiset(seed):
    geom = _geom(12, 6)
    sino = Sinogram(geom, np.random.default_rng(100 + seed).standard_normal((12, 6)))
    out = flick(sino, FlickPlan(n_draws=50, seed=seed))
    assert np.array_equal(np.sort(out.data.ravel()), np.sort(sino.data.ravel()))
    assert out.data.sum() == pytest.approx(sino.data.sum())


def test_flick_actually_swaps_pairs():
    geom = _geom(6, 4)
    data = np.arange(24, dtype=float).reshape(6, 4)
    sino = Sinogram(geom, data)
    plan = FlickPlan(n_draws=11, seed=3)
    mask = expand_swap_mask(plan, geom)
    out = flick(sino, plan)
    for v in range(3):
        for d in range(4):
            v2, d2 = conjugate_index(geom, v, d)
            if mask[v, d]:
                assert out.data[v, d] == data[v2, d2]
                assert out.data[v2, d2] == data[v, d]
            else:
                assert out.data[v, d] == data[v, d]
                assert out.data[v2, d2] == data[v2, d2]


def test_flick_commutes_with_scaling():
    geom = _geom(10, 6)
    sino = Sinogram(geom, np.random.default_rng(2).random((10, 6)))
    plan = FlickPlan(n_draws=29, seed=9)
    scaled = Sinogram(geom, 3.5 * sino.data)
    assert np.array_equal(flick(scaled, plan).data, 3.5 * flick(sino, plan).data)


def test_swap_mask_deterministic_and_seed_sensitive():
    geom = _geom(20, 10)
    plan = FlickPlan(n_draws=64, seed=42)
    m1 = expand_swap_mask(plan, geom)
    m2 = expand_swap_mask(plan, geom)
    assert np.array_equal(m1, m2)
    m3 = expand_swap_mask(FlickPlan(n_draws=64, seed=43), geom)
    assert not np.array_equal(m1, m3)


def test_swapped_fraction_paper_scale_single_seed():
    # 400k draws over k = 1160*672/2 pairs: toggle parity leaves roughly
    # (1 - (1 - 2/k)^L) / 2 of pairs swapped, about 0.436.
    geom = ScanGeometry(
        n_views=1160, n_dets=672, det_spacing=0.6, pixel_spacing=0.78125, image_size=512
    )
    mask = expand_swap_mask(FlickPlan(n_draws=400_000, seed=7), geom)
    frac = mask.mean()
    assert 0.35 <= frac <= 0.65


def test_flick_does_not_introduce_neighbor_correlation():
    geom = _geom(360, 180)
    rng = np.random.default_rng(5)
    noise = rng.standard_normal((360, 180))
    sino = Sinogram(geom, noise)
    delta = flick(sino, FlickPlan(n_draws=32_400, seed=11)).data - noise
    a = delta[:, :-1].ravel()
    b = delta[:, 1:].ravel()
    corr = np.corrcoef(a, b)[0, 1]
    assert abs(corr) < 0.05


def test_conjugate_discrepancy_constant_sinogram():
    geom = _geom(8, 6)
    stats = conjugate_discrepancy(Sinogram(geom, np.full((8, 6), 3.25)))
    assert stats == (0.0, 0.0, 0.0)


def test_conjugate_discrepancy_known_case():
    geom = _geom(2, 2)
    # cells: (0,0)<->(1,1) and (0,1)<->(1,0)
    data = np.array([[1.0, 2.0], [5.0, 4.0]])
    stats = conjugate_discrepancy(Sinogram(geom, data))
    assert stats.max_abs == pytest.approx(3.0)
    assert stats.mean_abs == pytest.approx(3.0)
    assert stats.rms == pytest.approx(3.0)
