import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from shortcut_shield import rng
from shortcut_shield.core import Image
from shortcut_shield.errors import ConfigError, ParameterError, ShapeError
from shortcut_shield.glyphs import GlyphSource
from shortcut_shield.shortcuts import (
    BrightnessMask, PixelMask, ShortcutParams, WatermarkStamp, apply_brightness_modulation,
    apply_pixel_pattern, apply_watermark, brightness_mask_from_squares, class_masks,
    default_square_side, generate_brightness_mask, generate_pixel_mask, layout_digits,
    protect_dataset, render_class_watermark,
)

from conftest import random_dataset, random_image
from oracles import (brightness_field_loop, brightness_loop, pixel_pattern_loop,
                     watermark_loop)

CIFAR = (32, 32, 3)
GLYPHS = GlyphSource.builtin()


# -- pixel pattern ------------------------------------------------------------

def test_pixel_mask_is_binary_and_deterministic():
    a = generate_pixel_mask(3, CIFAR, 0.1, 0.2, seed=9)
    b = generate_pixel_mask(3, CIFAR, 0.1, 0.2, seed=9)
    assert set(np.unique(a.data)) <= {0.0, 1.0}
    assert np.array_equal(a.data, b.data)
    assert a.data.shape == (3, 32, 32)


def test_pixel_mask_follows_gaussian_stream():
    mask = generate_pixel_mask(2, (4, 3, 3), 0.4, 0.2, seed=1)
    p = rng.child(1, 2)
    draws = [p.next_gaussian(0.4, 0.2) for _ in range(36)]
    assert mask.data.reshape(-1).tolist() == [1.0 if d > 0.5 else 0.0 for d in draws]


@pytest.mark.parametrize("mu, fill", [(-10.0, 0.0), (10.0, 1.0)])
def test_pixel_mask_extremes(mu, fill):
    assert np.all(generate_pixel_mask(0, CIFAR, mu, 0.2, seed=4).data == fill)


def test_pixel_mask_density_near_expectation():
    expected = 3072 * 0.5 * math.erfc((0.5 - 0.01) / 0.2 / math.sqrt(2))
    assert expected == pytest.approx(21.94, abs=0.01)
    counts = [generate_pixel_mask(k, CIFAR, 0.01, 0.2, seed=s).data.sum()
              for s in range(20) for k in range(10)]
    assert abs(np.mean(counts) - expected) < 1.5


def test_pixel_mask_rejects_bad_sigma():
    with pytest.raises(ParameterError):
        generate_pixel_mask(0, CIFAR, 0.0, 0.0, seed=0)


def test_apply_pixel_pattern_examples():
    img = random_image(1, CIFAR)
    zero = PixelMask(np.zeros((3, 32, 32)), 0)
    assert apply_pixel_pattern(img, zero) == img
    data = np.full((3, 32, 32), 0.3)
    one = np.zeros((3, 32, 32))
    one[1, 5, 7] = 1.0
    out = apply_pixel_pattern(Image(data), PixelMask(one, 0)).data.copy()
    assert out[1, 5, 7] == 1.0
    out[1, 5, 7] = 0.3
    assert np.all(out == 0.3)


def test_apply_pixel_pattern_shape_mismatch():
    with pytest.raises(ShapeError):
        apply_pixel_pattern(random_image(0, (4, 4, 3)), PixelMask(np.zeros((3, 5, 4)), 0))


@pytest.mark.parametrize("seed", range(5))
def test_apply_pixel_pattern_matches_loop(seed):
    img = random_image(seed, (9, 7, 3))
    mask = generate_pixel_mask(seed, (9, 7, 3), 0.3, 0.2, seed=seed)
    assert np.array_equal(apply_pixel_pattern(img, mask).data,
                          pixel_pattern_loop(img.data, mask.data))


def test_pixel_mask_at_one_percent_rarely_alters_more_than_two_percent():
    over = sum(generate_pixel_mask(k, CIFAR, 0.01, 0.2, seed=s).data.mean() > 0.02
               for s in range(100) for k in range(10))
    assert over <= 1


# -- watermark ----------------------------------------------------------------

def test_watermark_zero_is_single_centered_digit():
    stamp = render_class_watermark(0, CIFAR, GLYPHS, rng.new(5))
    plane = stamp.data[0]
    assert set(np.unique(stamp.data)) <= {0.0, 1.0}
    assert np.array_equal(stamp.data[0], stamp.data[2])
    rows = np.flatnonzero(plane.any(axis=1))
    cols = np.flatnonzero(plane.any(axis=0))
    assert plane.sum() > 20
    # the ink sits around the image center
    assert abs((rows[0] + rows[-1]) / 2 - 15.5) < 5
    assert abs((cols[0] + cols[-1]) / 2 - 15.5) < 3


def test_watermark_replay_is_identical():
    a = render_class_watermark(7, CIFAR, GLYPHS, rng.child(3, 17))
    b = render_class_watermark(7, CIFAR, GLYPHS, rng.child(3, 17))
    assert np.array_equal(a.data, b.data)


def test_watermark_three_digits_fit():
    stamp = render_class_watermark(263, (32, 32, 3), GLYPHS, rng.new(1))
    assert stamp.data.shape == (3, 32, 32)
    big = render_class_watermark(263, (224, 224, 3), GLYPHS, rng.new(1))
    cols = np.flatnonzero(big.data[0].any(axis=0))
    assert cols[-1] - cols[0] + 1 <= 224
    # three separated ink groups along the row
    ink = big.data[0].any(axis=0).astype(int)
    assert np.sum(np.diff(ink) == 1) + ink[0] >= 3


def test_watermark_263_exports_as_ppm(tmp_path):
    from shortcut_shield.dataio import read_ppm, write_ppm
    img = Image(np.full((3, 224, 224), 0.2))
    stamp = render_class_watermark(263, (224, 224, 3), GLYPHS, rng.new(4))
    marked = apply_watermark(img, stamp, 0.5)
    write_ppm(marked, tmp_path / "wm.ppm")
    back = read_ppm(tmp_path / "wm.ppm")
    assert back.shape == (224, 224, 3)
    values = set(np.unique(np.round(back.data * 255)).tolist())
    assert values == {51.0, 153.0}  # 0.2 background, 0.5 * 0.2 + 0.5 on the stroke


def test_layout_geometry_single_full_glyph():
    glyph = np.ones((28, 10), dtype=bool)
    plane = layout_digits([glyph], (32, 32, 1))
    rows = np.flatnonzero(plane.any(axis=1))
    cols = np.flatnonzero(plane.any(axis=0))
    assert rows.size == 28 and cols.size == 10
    assert rows[0] == 2 and cols[0] == 11


def test_layout_shrinks_wide_blocks():
    glyphs = [np.ones((28, 20), dtype=bool)] * 3
    plane = layout_digits(glyphs, (32, 32, 1))
    assert plane.any(axis=0).sum() <= 32


def test_watermark_needs_every_digit():
    partial = GlyphSource({d: [np.ones((28, 28))] for d in range(9)})
    with pytest.raises(ConfigError):
        render_class_watermark(1, CIFAR, partial, rng.new(0))


def test_watermark_samples_exemplars_uniformly():
    two = GlyphSource({d: [np.zeros((28, 28)), np.ones((28, 28))] for d in range(10)})
    picks = [render_class_watermark(4, (8, 8, 1), two, rng.child(0, i)).data.sum() > 0
             for i in range(2000)]
    assert 0.45 < np.mean(picks) < 0.55


def test_apply_watermark_examples():
    img = random_image(2, CIFAR)
    stamp = render_class_watermark(5, CIFAR, GLYPHS, rng.new(2))
    assert apply_watermark(img, stamp, 0.0) == img
    full = apply_watermark(img, stamp, 1.0).data
    assert np.all(full[stamp.data == 1] == 1.0)
    one = WatermarkStamp(np.ones((1, 1, 1)), 0)
    assert apply_watermark(Image(np.full((1, 1, 1), 0.4)), one, 0.5).data[0, 0, 0] == pytest.approx(0.7)


@pytest.mark.parametrize("alpha", [-0.1, 1.5])
def test_apply_watermark_bad_alpha(alpha):
    with pytest.raises(ParameterError):
        apply_watermark(random_image(0, (2, 2, 1)), WatermarkStamp(np.zeros((1, 2, 2)), 0), alpha)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 999), st.one_of(st.just(0.0), st.floats(0.01, 1.0)),
       st.integers(0, 2**32))
def test_apply_watermark_matches_loop_and_support(k, alpha, seed):
    shape = (12, 10, 3)
    img = Image(np.minimum(np.random.default_rng(seed).random((3, 10, 12)) ** 0.3, 0.99))
    stamp = render_class_watermark(k, shape, GLYPHS, rng.new(seed))
    out = apply_watermark(img, stamp, alpha).data
    assert np.array_equal(out, watermark_loop(img.data, stamp.data, alpha))
    changed = out != img.data
    assert np.array_equal(changed, (stamp.data == 1) & (alpha > 0) & (img.data < 1))


# -- brightness ---------------------------------------------------------------

def test_brightness_gamma_one_is_all_ones():
    mask = generate_brightness_mask(2, CIFAR, 1.0, 50, 8, seed=3)
    assert np.all(mask.data == 1.0)


def _first_darken_seed():
    for s in range(100):
        p = rng.child(s, 0)
        p.next_unit(), p.next_unit()
        if p.next_unit() < 0.5:
            return s


def test_brightness_single_darken_step():
    seed = _first_darken_seed()
    p = rng.child(seed, 0)
    cx, cy = math.floor(p.next_unit() * 32), math.floor(p.next_unit() * 32)
    mask = generate_brightness_mask(0, CIFAR, 0.9, 1, 8, seed=seed).data
    expected = np.ones((3, 32, 32))
    for r in range(32):
        for q in range(32):
            if cx - 4 <= q < cx + 4 and cy - 4 <= r < cy + 4:
                expected[:, r, q] = 0.9
    assert np.array_equal(mask, expected)


def test_brightness_overlapping_brighten_squares():
    field = brightness_mask_from_squares((16, 16, 1), [(5, 5, False), (7, 7, False)], 0.9, 4)
    assert field[0, 6, 6] == pytest.approx(1.21)
    assert field[0, 3, 3] == pytest.approx(1.1)
    assert field[0, 15, 15] == 1.0


def test_brightness_squares_crop_at_border():
    field = brightness_mask_from_squares((8, 8, 1), [(0, 7, True)], 0.5, 4)
    assert np.count_nonzero(field != 1.0) == 2 * 3


@settings(max_examples=25, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 9), st.integers(0, 7), st.booleans()), max_size=6),
       st.floats(0.5, 1.0), st.integers(1, 6))
def test_brightness_field_matches_loop(squares, gamma, side):
    shape = (10, 8, 2)
    assert np.array_equal(brightness_mask_from_squares(shape, squares, gamma, side),
                          brightness_field_loop(shape, squares, gamma, side))


def test_brightness_entries_positive_and_channel_constant():
    mask = generate_brightness_mask(4, CIFAR, 0.7, 32, 8, seed=1).data
    assert np.all(mask > 0)
    assert np.array_equal(mask[0], mask[1]) and np.array_equal(mask[1], mask[2])


def test_apply_brightness_examples():
    img = random_image(0, (4, 4, 1))
    assert apply_brightness_modulation(img, BrightnessMask(np.ones((1, 4, 4)), 0)) == img
    half = Image(np.full((1, 1, 1), 0.5))
    assert apply_brightness_modulation(half, BrightnessMask(np.full((1, 1, 1), 0.9), 0)).data[0, 0, 0] == 0.45
    bright = Image(np.full((1, 1, 1), 0.9))
    assert apply_brightness_modulation(bright, BrightnessMask(np.full((1, 1, 1), 1.21), 0)).data[0, 0, 0] == 1.0


@pytest.mark.parametrize("seed", range(5))
def test_apply_brightness_matches_loop(seed):
    img = random_image(seed, (9, 9, 3))
    mask = generate_brightness_mask(seed, (9, 9, 3), 0.6, 10, 3, seed=seed)
    product = mask.data * img.data
    assert np.array_equal(product, brightness_loop(img.data, mask.data, clamp=False))
    assert np.array_equal(apply_brightness_modulation(img, mask).data,
                          brightness_loop(img.data, mask.data))


def test_default_square_side():
    assert default_square_side((32, 32, 3)) == 8
    assert default_square_side((224, 224, 3)) == 56


# -- whole dataset ------------------------------------------------------------

def test_params_validation():
    for bad in [dict(method="blur"), dict(alpha=1.2), dict(gamma=0.4), dict(sigma=0.0),
                dict(iterations=0), dict(square_side=0)]:
        with pytest.raises(ParameterError):
            ShortcutParams(**bad).validate()


@pytest.mark.parametrize("method", ["pixel", "watermark", "brightness"])
def test_protect_preserves_labels_and_is_deterministic(method):
    ds = random_dataset(3, n=15, k=4, shape=(16, 16, 3))
    params = ShortcutParams(method=method, mu=0.3, seed=8)
    a = protect_dataset(ds, params, GLYPHS)
    b = protect_dataset(ds, params, GLYPHS, workers=4)
    assert a.labels == ds.labels and len(a) == len(ds)
    assert a == b


def test_protect_pixel_huge_negative_mu_is_identity():
    ds = random_dataset(1)
    assert protect_dataset(ds, ShortcutParams(method="pixel", mu=-10.0, seed=1)) == ds


def test_protect_pixel_class_consistency():
    ds = random_dataset(5, n=20, k=2, shape=(16, 16, 3))
    out = protect_dataset(ds, ShortcutParams(method="pixel", mu=0.3, seed=2))
    saturated = [set(np.flatnonzero((o.data == 1.0) & (i.data < 1.0)).tolist())
                 for o, i in zip(out.images, ds.images)]
    assert saturated[0] == saturated[2] == saturated[4]
    assert saturated[1] == saturated[3]
    assert saturated[0] != saturated[1]


def test_class_masks_independent_of_generation_order():
    params = ShortcutParams(method="brightness", gamma=0.8, seed=6)
    masks = class_masks(params, (16, 16, 3), 5)
    alone = generate_brightness_mask(3, (16, 16, 3), 0.8, 32, 4, seed=6)
    assert np.array_equal(masks[3].data, alone.data)
    distinct = {masks[k].data.tobytes() for k in range(5)}
    assert len(distinct) == 5


def test_worker_count_does_not_change_output(monkeypatch):
    ds = random_dataset(9, n=30, k=3, shape=(8, 8, 3))
    params = ShortcutParams(method="watermark", alpha=0.4, seed=3)
    monkeypatch.setenv("SHIELD_THREADS", "1")
    one = protect_dataset(ds, params, GLYPHS)
    monkeypatch.setenv("SHIELD_THREADS", "6")
    many = protect_dataset(ds, params, GLYPHS)
    assert one == many
