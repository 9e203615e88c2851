import numpy as np
import pytest

from earthmatch.errors import DomainError, EstimationError
from earthmatch.geo import Footprint, TileGeom
from earthmatch.raster import (
    NEIGHBOR_KEYS,
    build_mosaic,
    load_image,
    resize_square,
    save_image,
    to_gray,
    warp_perspective,
)
from earthmatch.synth import generate_texture


def brute_force_bilinear(img, x, y):
    """Independent reference sampler: clamped bilinear at one point."""
    h, w = img.shape[:2]
    x = min(max(x, 0.0), w - 1.0)
    y = min(max(y, 0.0), h - 1.0)
    x0, y0 = int(np.floor(x)), int(np.floor(y))
    x1, y1 = min(x0 + 1, w - 1), min(y0 + 1, h - 1)
    fx, fy = x - x0, y - y0
    top = img[y0, x0] * (1 - fx) + img[y0, x1] * fx
    bot = img[y1, x0] * (1 - fx) + img[y1, x1] * fx
    return top * (1 - fy) + bot * fy


def test_resize_identity():
    img = generate_texture(128, seed=1)
    out = resize_square(img, 128)
    assert np.array_equal(out, img)


def test_resize_constant():
    img = np.full((2, 2), 0.25)
    out = resize_square(img, 4)
    assert out.shape == (4, 4)
    assert np.allclose(out, 0.25, atol=1e-15)


def test_resize_matches_brute_force():
    img = np.linspace(0.0, 1.0, 8).reshape(2, 4)  # 4x2 horizontal ramp
    out = resize_square(img, 2)
    for i in range(2):
        for j in range(2):
            x = (j + 0.5) * (4 / 2) - 0.5
            y = (i + 0.5) * (2 / 2) - 0.5
            assert out[i, j] == pytest.approx(brute_force_bilinear(img, x, y), abs=1e-12)


def test_resize_rejects_bad_side():
    with pytest.raises(DomainError):
        resize_square(np.zeros((4, 4)), 0)


def test_warp_identity_exact():
    img = generate_texture(64, seed=2)
    out = warp_perspective(img, np.eye(3), (64, 64))
    assert np.array_equal(out, img)
    # cropping and padding through dst_size
    out = warp_perspective(img, np.eye(3), (32, 80))
    assert np.array_equal(out[:64, :32], img[:, :32])
    assert np.all(out[64:, :] == 0.0)


def test_warp_translation_matches_reference():
    img = np.tile(np.linspace(0.0, 1.0, 16), (16, 1))
    h = np.array([[1.0, 0.0, 1.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]])  # dst x = src x + 1
    out = warp_perspective(img, h, (16, 16))
    assert np.allclose(out[:, 1:], img[:, :-1], atol=1e-12)
    assert np.all(out[:, 0] == 0.0)  # nothing maps into the first column


def test_warp_rotation_90_permutes_pixels():
    img = np.arange(9, dtype=float).reshape(3, 3) / 9.0
    c = 1.0  # rotation about the center pixel
    h = np.array([[0.0, -1.0, 2 * c], [1.0, 0.0, 0.0], [0.0, 0.0, 1.0]])
    # dst = R90 (src - c) + c with R90 = [[0,-1],[1,0]]
    h = np.array([
        [0.0, -1.0, c + c],
        [1.0, 0.0, c - c],
        [0.0, 0.0, 1.0],
    ])
    out = warp_perspective(img, h, (3, 3))
    expected = np.empty_like(img)
    for sy in range(3):
        for sx in range(3):
            dx = -(sy - 1) + 1
            dy = (sx - 1) + 1
            expected[dy, dx] = img[sy, sx]
    assert np.allclose(out, expected, atol=1e-12)


def test_warp_rejects_singular():
    with pytest.raises(EstimationError):
        warp_perspective(np.zeros((8, 8)), np.zeros((3, 3)), (8, 8))


def test_warp_composition_smooth_image():
    ys, xs = np.mgrid[0:96, 0:96].astype(float)
    # band-limited content: long-wavelength sinusoids keep the double
    # interpolation error under one gray level
    img = 0.5 + 0.22 * np.sin(2 * np.pi * xs / 40.0) * np.cos(2 * np.pi * ys / 36.0) \
        + 0.15 * np.sin(2 * np.pi * (xs + ys) / 48.0)
    img = np.clip(img, 0.0, 1.0)
    h1 = np.array([[1.02, 0.03, 2.0], [-0.02, 0.99, -1.5], [1e-5, -1e-5, 1.0]])
    h2 = np.array([[0.98, -0.04, 1.0], [0.03, 1.01, 2.0], [-1e-5, 1e-5, 1.0]])
    once = warp_perspective(img, h2 @ h1, (96, 96))
    twice = warp_perspective(warp_perspective(img, h1, (96, 96)), h2, (96, 96))
    # compare away from fill boundaries: double interpolation tolerance is
    # one gray level per pixel
    inner = (slice(8, 88), slice(8, 88))
    assert np.max(np.abs(once[inner] - twice[inner])) <= 1.0 / 255.0


def test_warp_respects_extrema():
    img = 0.2 + 0.6 * generate_texture(64, seed=3)
    h = np.array([[1.1, 0.05, -3.0], [0.02, 0.93, 4.0], [1e-4, 0.0, 1.0]])
    out = warp_perspective(img, h, (64, 64))
    assert out.max() <= img.max() + 1e-12
    assert out.min() >= 0.0  # black fill may undercut the input minimum
    assert out.max() <= 1.0


def tile_geom(side=64):
    fp = Footprint.from_mercator_rect(0.40, 0.30, 0.42, 0.32)
    return TileGeom(fp, width_px=side, height_px=side)


def test_build_mosaic_full_grid():
    center = generate_texture(64, seed=4)
    neighbors = {k: generate_texture(64, seed=10 + i) for i, k in enumerate(NEIGHBOR_KEYS)}
    mosaic = build_mosaic(center, tile_geom(64), neighbors)
    assert mosaic.image.shape == (192, 192)
    assert np.array_equal(mosaic.image[64:128, 64:128], center)  # center block bit-identical
    assert mosaic.center_offset == (64, 64)
    assert np.array_equal(mosaic.image[0:64, 0:64], neighbors["NW"])
    assert np.array_equal(mosaic.image[128:192, 64:128], neighbors["S"])


def test_build_mosaic_missing_neighbors_black():
    center = generate_texture(64, seed=6)
    mosaic = build_mosaic(center, tile_geom(), {})
    assert np.array_equal(mosaic.image[64:128, 64:128], center)
    border = mosaic.image.copy()
    border[64:128, 64:128] = 0.0
    assert np.all(border == 0.0)


def test_build_mosaic_geometry_extends_one_extent():
    center = generate_texture(64, seed=7)
    geom = tile_geom()
    mosaic = build_mosaic(center, geom, {})
    x0, y0, x1, y1 = geom.mercator_rect()
    mx0, my0, mx1, my1 = mosaic.geom.mercator_rect()
    dx, dy = x1 - x0, y1 - y0
    assert mx0 == pytest.approx(x0 - dx, abs=1e-9)
    assert my0 == pytest.approx(y0 - dy, abs=1e-9)
    assert mx1 == pytest.approx(x1 + dx, abs=1e-9)
    assert my1 == pytest.approx(y1 + dy, abs=1e-9)
    # checked against the pixel mapping of the mosaic geometry
    from earthmatch.geo import pixel_to_mercator

    got = pixel_to_mercator(mosaic.geom, np.array([[0.0, 0.0], [192.0, 192.0]]))
    assert np.allclose(got[0], [x0 - dx, y0 - dy], atol=1e-12)
    assert np.allclose(got[1], [x1 + dx, y1 + dy], atol=1e-12)


def test_build_mosaic_rejects_mismatched_neighbor():
    center = generate_texture(64, seed=8)
    with pytest.raises(DomainError):
        build_mosaic(center, tile_geom(), {"N": np.zeros((16, 16))})


def test_png_roundtrip(tmp_path):
    img = generate_texture(64, seed=9)
    path = tmp_path / "t.png"
    save_image(path, img)
    back = to_gray(load_image(path))
    assert back.shape == (64, 64)
    assert np.max(np.abs(back - img)) <= 1.0 / 255.0 + 1e-9  # 8-bit quantization


def test_to_gray_luma():
    rgb = np.zeros((2, 2, 3))
    rgb[..., 0] = 1.0
    assert np.allclose(to_gray(rgb), 0.299)
