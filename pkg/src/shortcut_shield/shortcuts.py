"""Class-conditional dataset modifications ("adversarial shortcuts").

Three methods, each tying an easy-to-fit pattern to the label:

* ``pixel``      - a fixed sparse set of saturated entries per class
* ``watermark``  - the class index drawn in digit glyphs, blended per image
* ``brightness`` - a fixed multiplicative field of darkened/brightened squares

Per-class masks come from ``child(seed, k)``; per-image watermark stamps from
``child(seed, K + index)``.  Draw order inside each generator is fixed, so the
masks are stable test vectors.
"""
from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass

import numpy as np

from . import rng as _rng
from .core import X_MAX, Image, LabeledDataset, clamp01
from .errors import ConfigError, ParameterError, ShapeError
from .glyphs import GlyphSource

METHODS = ("pixel", "watermark", "brightness")

# watermark geometry: digit height is DIGIT_HEIGHT_NUM/DIGIT_HEIGHT_DEN of the image
DIGIT_HEIGHT_NUM = 28
DIGIT_HEIGHT_DEN = 32
DIGIT_GAP = 1
GLYPH_THRESHOLD = 0.5
PIXEL_THRESHOLD = 0.5


@dataclass(frozen=True)
class PixelMask:
    data: np.ndarray  # (c, h, w) of 0.0/1.0
    label: int


@dataclass(frozen=True)
class BrightnessMask:
    data: np.ndarray  # (c, h, w), positive factors
    label: int


@dataclass(frozen=True)
class WatermarkStamp:
    data: np.ndarray  # (c, h, w) of 0.0/1.0, equal across channels
    label: int


@dataclass
class ShortcutParams:
    method: str = "pixel"
    mu: float = 0.01
    sigma: float = 0.2
    alpha: float = 0.5
    gamma: float = 0.9
    iterations: int = 32
    square_side: int | None = None
    seed: int = 0

    def validate(self):
        if self.method not in METHODS:
            raise ParameterError(f"unknown method {self.method!r}; choose from {METHODS}")
        if not 0.0 <= self.alpha <= 1.0:
            raise ParameterError(f"alpha must be in [0, 1], got {self.alpha}")
        if not 0.5 <= self.gamma <= 1.0:
            raise ParameterError(f"gamma must be in [0.5, 1], got {self.gamma}")
        if not self.sigma > 0:
            raise ParameterError(f"sigma must be > 0, got {self.sigma}")
        if self.iterations < 1:
            raise ParameterError(f"iterations must be >= 1, got {self.iterations}")
        if self.square_side is not None and self.square_side < 1:
            raise ParameterError(f"square side must be >= 1, got {self.square_side}")
        return self

    def side_for(self, shape) -> int:
        return self.square_side or default_square_side(shape)

    def to_dict(self) -> dict:
        return asdict(self)


def default_square_side(shape) -> int:
    return math.ceil(shape[0] / 4)


def _check_shape(img: Image, mask_data: np.ndarray):
    if img.data.shape != mask_data.shape:
        raise ShapeError(f"image {img.data.shape} vs mask {mask_data.shape}")


# -- sparse pixel pattern ----------------------------------------------------

def generate_pixel_mask(k: int, shape, mu: float, sigma: float, seed: int) -> PixelMask:
    if not sigma > 0:
        raise ParameterError(f"sigma must be > 0, got {sigma}")
    w, h, c = shape
    delta = _rng.child(seed, k).gaussians(w * h * c, mu, sigma)
    data = (delta > PIXEL_THRESHOLD).astype(np.float64).reshape(c, h, w)
    return PixelMask(data, k)


def apply_pixel_pattern(img: Image, mask: PixelMask) -> Image:
    _check_shape(img, mask.data)
    d = mask.data
    return Image((1.0 - d) * img.data + d * X_MAX)


# -- visible watermark -------------------------------------------------------

def _resize_nearest(arr: np.ndarray, new_h: int, new_w: int) -> np.ndarray:
    h, w = arr.shape
    rows = np.minimum((np.arange(new_h) * h) // new_h, h - 1)
    cols = np.minimum((np.arange(new_w) * w) // new_w, w - 1)
    return arr[np.ix_(rows, cols)]


def _trim_columns(glyph: np.ndarray) -> np.ndarray:
    cols = np.flatnonzero(glyph.any(axis=0))
    if cols.size == 0:
        return glyph
    return glyph[:, cols[0]:cols[-1] + 1]


def layout_digits(glyphs: list, shape) -> np.ndarray:
    """Place binary glyphs side by side, centered, into an (h, w) 0/1 plane.

    Glyphs are trimmed to their inked columns and scaled to the digit height;
    if the row (with its 1-pixel gaps) is wider than the image, every glyph is
    shrunk by the same factor until it fits.  Gaps are inserted after scaling
    so they always survive.
    """
    w, h, _ = shape
    trimmed = [_trim_columns(g) for g in glyphs]
    gaps = DIGIT_GAP * (len(trimmed) - 1)
    target_h = max(1, min(h, (DIGIT_HEIGHT_NUM * h) // DIGIT_HEIGHT_DEN))
    scale = target_h / trimmed[0].shape[0]
    natural = sum(g.shape[1] for g in trimmed) * scale
    if natural + gaps > w:
        scale *= max(w - gaps, len(trimmed)) / natural
    new_h = max(1, min(target_h, int(round(trimmed[0].shape[0] * scale))))
    pieces = [_resize_nearest(g, new_h, max(1, int(g.shape[1] * scale))) for g in trimmed]

    plane = np.zeros((h, w), dtype=bool)
    block_w = sum(p.shape[1] for p in pieces) + gaps
    left = max(0, (w - block_w) // 2)
    top = (h - new_h) // 2
    for p in pieces:
        pw = min(p.shape[1], w - left)
        if pw <= 0:
            break
        plane[top:top + new_h, left:left + pw] = p[:, :pw]
        left += p.shape[1] + DIGIT_GAP
    return plane


def render_class_watermark(k: int, shape, glyphs: GlyphSource,
                           prng: _rng.Prng) -> WatermarkStamp:
    glyphs.validate()
    w, h, c = shape
    chosen = []
    for ch in str(int(k)):
        d = int(ch)
        g = glyphs.get(d, prng.below(glyphs.count(d)))
        chosen.append(g > GLYPH_THRESHOLD)
    plane = layout_digits(chosen, shape).astype(np.float64)
    return WatermarkStamp(np.repeat(plane[None], c, axis=0), int(k))


def apply_watermark(img: Image, stamp: WatermarkStamp, alpha: float) -> Image:
    if not 0.0 <= alpha <= 1.0:
        raise ParameterError(f"alpha must be in [0, 1], got {alpha}")
    _check_shape(img, stamp.data)
    m, x = stamp.data, img.data
    return Image(alpha * m + (1.0 - alpha) * m * x + (1.0 - m) * x)


# -- brightness modulation ---------------------------------------------------

def square_bounds(center: int, side: int, limit: int) -> tuple:
    """Half-open [lo, hi) range of a side-length window centered at ``center``, cropped."""
    lo = center - side // 2
    return max(0, lo), min(limit, lo + side)


def brightness_mask_from_squares(shape, squares, gamma: float, side: int) -> np.ndarray:
    """Multiply out ``squares`` = [(cx, cy, darken), ...] on an all-ones field."""
    w, h, c = shape
    field = np.ones((h, w))
    darken_f, brighten_f = gamma, 2.0 - gamma
    for cx, cy, darken in squares:
        x0, x1 = square_bounds(cx, side, w)
        y0, y1 = square_bounds(cy, side, h)
        field[y0:y1, x0:x1] *= darken_f if darken else brighten_f
    return np.repeat(field[None], c, axis=0)


def sample_squares(prng: _rng.Prng, shape, iterations: int) -> list:
    w, h, _ = shape
    squares = []
    for _ in range(iterations):
        cx = int(prng.next_unit() * w)
        cy = int(prng.next_unit() * h)
        darken = prng.next_unit() < 0.5
        squares.append((cx, cy, darken))
    return squares


def generate_brightness_mask(k: int, shape, gamma: float, iterations: int,
                             square_side: int, seed: int) -> BrightnessMask:
    if not 0.5 <= gamma <= 1.0:
        raise ParameterError(f"gamma must be in [0.5, 1], got {gamma}")
    if iterations < 1:
        raise ParameterError(f"iterations must be >= 1, got {iterations}")
    squares = sample_squares(_rng.child(seed, k), shape, iterations)
    return BrightnessMask(brightness_mask_from_squares(shape, squares, gamma, square_side), k)


def apply_brightness_modulation(img: Image, mask: BrightnessMask) -> Image:
    _check_shape(img, mask.data)
    return clamp01(mask.data * img.data)


# -- whole dataset -----------------------------------------------------------

def worker_count(default: int = 1) -> int:
    raw = os.environ.get("SHIELD_THREADS")
    if not raw:
        return default
    try:
        return max(1, int(raw))
    except ValueError:
        raise ConfigError(f"SHIELD_THREADS must be an integer, got {raw!r}") from None


def class_masks(params: ShortcutParams, shape, num_classes: int) -> dict:
    """Per-class masks for the pixel and brightness methods."""
    if params.method == "pixel":
        return {k: generate_pixel_mask(k, shape, params.mu, params.sigma, params.seed)
                for k in range(num_classes)}
    if params.method == "brightness":
        side = params.side_for(shape)
        return {k: generate_brightness_mask(k, shape, params.gamma, params.iterations,
                                            side, params.seed)
                for k in range(num_classes)}
    raise ParameterError(f"method {params.method!r} has no per-class mask")


def protect_dataset(ds: LabeledDataset, params: ShortcutParams,
                    glyphs: GlyphSource | None = None,
                    workers: int | None = None) -> LabeledDataset:
    params.validate()
    if ds.shape is None:
        raise ShapeError("dataset has no shape")
    K = ds.num_classes
    if params.method == "watermark":
        glyphs = glyphs or GlyphSource.builtin()
        glyphs.validate()

        def one(i):
            prng = _rng.child(params.seed, K + i)
            stamp = render_class_watermark(ds.labels[i], ds.shape, glyphs, prng)
            return apply_watermark(ds.images[i], stamp, params.alpha)
    else:
        masks = class_masks(params, ds.shape, K)
        applier = apply_pixel_pattern if params.method == "pixel" else apply_brightness_modulation

        def one(i):
            return applier(ds.images[i], masks[ds.labels[i]])

    n = len(ds)
    workers = workers or worker_count()
    if workers > 1 and n > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            images = list(pool.map(one, range(n)))
    else:
        images = [one(i) for i in range(n)]
    return LabeledDataset(images, list(ds.labels), K, ds.shape)
