import math

import numpy as np
import pytest

from sinoflick.core import (
    BadMagicError,
    ContainerError,
    Image,
    Pcg32,
    ScanGeometry,
    Sinogram,
    TruncatedPayloadError,
    UnsupportedVersionError,
    child_seed,
    load_image,
    load_sinogram,
    read_container,
    save_image,
    save_sinogram,
    splitmix64,
    write_container,
)


# -- reference implementations used as independent oracles -------------------


def _pcg32_reference(initstate, initseq, count):
    """Direct transcription of the published minimal PCG32 generator."""
    mask = (1 << 64) - 1
    state = 0
    inc = ((initseq << 1) | 1) & mask

    def step():
        nonlocal state
        old = state
        state = (old * 6364136223846793005 + inc) & mask
        xorshifted = (((old >> 18) ^ old) >> 27) & 0xFFFFFFFF
        rot = old >> 59
        return ((xorshifted >> rot) | (xorshifted << ((-rot) & 31))) & 0xFFFFFFFF

    step()
    state = (state + initstate) & mask
    step()
    return [step() for _ in range(count)]


def _splitmix64_reference(x):
    mask = (1 << 64) - 1
    z = (x + 0x9E3779B97F4A7C15) & mask
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & mask
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & mask
    return z ^ (z >> 31)


# -- RNG ----------------------------------------------------------------------


def test_pcg32_published_first_output():
    rng = Pcg32(42, 54)
    assert rng.next_u32() == 0xA15C02B7


def test_pcg32_matches_reference_sequence():
    rng = Pcg32(123456789, 7)
    assert [rng.next_u32() for _ in range(200)] == _pcg32_reference(123456789, 7, 200)


def test_pcg32_deterministic_across_instances():
    a = Pcg32(99)
    b = Pcg32(99)
    assert [a.next_u32() for _ in range(1000)] == [b.next_u32() for _ in range(1000)]


def test_uniform_bound_one_is_always_zero():
    rng = Pcg32(5)
    assert all(rng.uniform_u(1) == 0 for _ in range(100))


def test_uniform_rejects_bad_bound():
    with pytest.raises(ValueError):
        Pcg32(0).uniform_u(0)


def test_uniform_frequencies_within_5_sigma():
    bound = 7
    n = 1_000_000
    rng = Pcg32(2024)
    counts = np.zeros(bound, dtype=np.int64)
    for _ in range(n):
        counts[rng.uniform_u(bound)] += 1
    p = 1.0 / bound
    sigma = math.sqrt(n * p * (1 - p))
    assert np.all(np.abs(counts - n * p) < 5 * sigma)


def test_normal_moments():
    rng = Pcg32(7)
    draws = np.array([rng.normal() for _ in range(200_000)])
    assert abs(draws.mean()) < 0.01
    assert abs(draws.var() - 1.0) < 0.02


def test_splitmix64_matches_reference():
    for x in (0, 1, 0xDEADBEEF, (1 << 64) - 1):
        assert splitmix64(x) == _splitmix64_reference(x)


def test_child_seed_is_splitmix_of_xor():
    assert child_seed(1234, 7) == _splitmix64_reference(1234 ^ 7)
    assert child_seed(1234, 7) != child_seed(1234, 8)


# -- domain types -------------------------------------------------------------


def test_geometry_rejects_odd_views():
    with pytest.raises(ValueError):
        ScanGeometry(n_views=361, n_dets=5, det_spacing=1.0, pixel_spacing=1.0, image_size=64)


def test_geometry_detector_offsets_symmetric():
    geom = ScanGeometry(n_views=4, n_dets=5, det_spacing=2.0, pixel_spacing=1.0, image_size=64)
    offs = geom.det_offsets()
    assert np.allclose(offs, [-4.0, -2.0, 0.0, 2.0, 4.0])
    assert np.allclose(offs, -offs[::-1])


def test_geometry_angles_uniform():
    geom = ScanGeometry(n_views=8, n_dets=3, det_spacing=1.0, pixel_spacing=1.0, image_size=64)
    assert np.allclose(geom.view_angles_deg(), np.arange(8) * 45.0)


def test_image_validates_shape_and_finiteness():
    with pytest.raises(ValueError):
        Image(size=4, pixel_spacing=1.0, data=np.zeros((4, 5)), unit="HU")
    bad = np.zeros((4, 4))
    bad[1, 2] = np.nan
    with pytest.raises(ValueError, match="non-finite"):
        Image(size=4, pixel_spacing=1.0, data=bad, unit="HU")


def test_sinogram_validates_dims():
    geom = ScanGeometry(n_views=4, n_dets=6, det_spacing=1.0, pixel_spacing=1.0, image_size=64)
    with pytest.raises(ValueError):
        Sinogram(geometry=geom, data=np.zeros((4, 5)))


# -- SFLK container -----------------------------------------------------------


def test_container_roundtrip_zeros(tmp_path):
    path = tmp_path / "z.sflk"
    meta = {"spacing_row": 1.0, "spacing_col": 2.0, "unit": 0}
    write_container(path, "image", np.zeros((4, 4)), meta)
    kind, matrix, got = read_container(path)
    assert kind == "image"
    assert np.array_equal(matrix, np.zeros((4, 4)))
    assert got == meta


def test_container_roundtrip_random_payload(tmp_path):
    rng = np.random.default_rng(3)
    data = rng.standard_normal((13, 7)).astype(np.float32)
    path = tmp_path / "r.sflk"
    write_container(path, "sinogram", data, {"spacing_row": 0.5, "spacing_col": 0.25, "unit": 0})
    _, matrix, _ = read_container(path)
    assert np.array_equal(matrix, data)


def test_container_rejects_nan(tmp_path):
    bad = np.zeros((3, 3))
    bad[0, 0] = np.inf
    with pytest.raises(ValueError, match="non-finite"):
        write_container(tmp_path / "bad.sflk", "image", bad, {"spacing_row": 1, "spacing_col": 1})


def test_container_file_size_paper_scale(tmp_path):
    path = tmp_path / "big.sflk"
    write_container(
        path,
        "sinogram",
        np.zeros((1160, 672), dtype=np.float32),
        {"spacing_row": 360.0 / 1160.0, "spacing_col": 0.6, "unit": 0},
    )
    assert path.stat().st_size == 64 + 1160 * 672 * 4


def test_container_write_is_byte_reproducible(tmp_path):
    rng = np.random.default_rng(11)
    data = rng.standard_normal((9, 5))
    meta = {"spacing_row": 1.0, "spacing_col": 1.0, "unit": 2}
    a, b = tmp_path / "a.sflk", tmp_path / "b.sflk"
    write_container(a, "image", data, meta)
    write_container(b, "image", data, meta)
    assert a.read_bytes() == b.read_bytes()


def test_container_bad_magic(tmp_path):
    path = tmp_path / "bad.sflk"
    path.write_bytes(b"XXXXXXXX" + b"\x00" * 100)
    with pytest.raises(BadMagicError):
        read_container(path)


def test_container_unsupported_version(tmp_path):
    path = tmp_path / "v.sflk"
    write_container(path, "image", np.zeros((2, 2)), {"spacing_row": 1, "spacing_col": 1})
    raw = bytearray(path.read_bytes())
    raw[8] = 99
    path.write_bytes(bytes(raw))
    with pytest.raises(UnsupportedVersionError):
        read_container(path)


def test_container_truncated_payload(tmp_path):
    path = tmp_path / "t.sflk"
    write_container(path, "image", np.ones((8, 8)), {"spacing_row": 1, "spacing_col": 1})
    raw = path.read_bytes()
    path.write_bytes(raw[: len(raw) - 10])
    with pytest.raises(TruncatedPayloadError):
        read_container(path)


def test_image_helpers_roundtrip(tmp_path):
    img = Image(size=6, pixel_spacing=0.5, data=np.arange(36, dtype=float).reshape(6, 6), unit="HU")
    path = tmp_path / "img.sflk"
    save_image(path, img)
    back = load_image(path)
    assert back.unit == "HU"
    assert back.pixel_spacing == 0.5
    assert np.array_equal(back.data, img.data)


def test_sinogram_helpers_roundtrip(tmp_path):
    geom = ScanGeometry(n_views=6, n_dets=4, det_spacing=1.5, pixel_spacing=1.0, image_size=32)
    sino = Sinogram(geometry=geom, data=np.arange(24, dtype=float).reshape(6, 4))
    path = tmp_path / "s.sflk"
    save_sinogram(path, sino)
    back = load_sinogram(path, image_size=32, pixel_spacing=1.0)
    assert back.geometry.n_views == 6
    assert back.geometry.det_spacing == 1.5
    assert np.array_equal(back.data, sino.data)


def test_load_image_rejects_wrong_kind(tmp_path):
    geom = ScanGeometry(n_views=6, n_dets=4, det_spacing=1.5, pixel_spacing=1.0, image_size=32)
    path = tmp_path / "s.sflk"
    save_sinogram(path, Sinogram(geometry=geom, data=np.zeros((6, 4))))
    with pytest.raises(ContainerError):
        load_image(path)
