"""Adversary-side countermeasures: additive Gaussian noise and aggressive
train-time augmentation (crop, flip, affine, color jitter).

Each random op has a deterministic twin taking explicit parameters
(``crop``, ``flip``, ``affine_transform``, ``adjust_color``) so tests can force
a particular draw.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from . import rng as _rng
from .core import Image, LabeledDataset, clamp01
from .errors import ParameterError

# ITU-R 601 luma weights, as used by common grayscale conversions
LUMA = np.array([0.299, 0.587, 0.114])


@dataclass
class AugmentationConfig:
    crop_size: int | None = 28
    translate_frac: float = 0.1
    rotate_deg_max: float = 30.0
    brightness_delta: float = 0.8
    contrast_range: tuple = (0.9, 1.08)
    flip_prob: float = 0.5
    noise_sigma: float = 0.0

    @classmethod
    def neutral(cls) -> "AugmentationConfig":
        return cls(crop_size=None, translate_frac=0.0, rotate_deg_max=0.0,
                   brightness_delta=0.0, contrast_range=(1.0, 1.0), flip_prob=0.0,
                   noise_sigma=0.0)

    def validate(self, shape=None):
        lo, hi = self.contrast_range
        if lo > hi or lo < 0:
            raise ParameterError(f"bad contrast range {self.contrast_range}")
        if not 0.0 <= self.flip_prob <= 1.0:
            raise ParameterError(f"flip probability must be in [0, 1], got {self.flip_prob}")
        if self.noise_sigma < 0:
            raise ParameterError(f"noise sigma must be >= 0, got {self.noise_sigma}")
        if not 0.0 <= self.brightness_delta <= 1.0:
            raise ParameterError(f"brightness delta must be in [0, 1], got {self.brightness_delta}")
        if self.translate_frac < 0 or self.rotate_deg_max < 0:
            raise ParameterError("translation and rotation bounds must be >= 0")
        if self.crop_size is not None:
            if self.crop_size < 1:
                raise ParameterError(f"crop size must be >= 1, got {self.crop_size}")
            if shape is not None and self.crop_size > min(shape[0], shape[1]):
                raise ParameterError(f"crop {self.crop_size} larger than image {shape[:2]}")
        return self

    def output_shape(self, shape):
        w, h, c = shape
        if self.crop_size is None:
            return (w, h, c)
        return (self.crop_size, self.crop_size, c)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["contrast_range"] = list(self.contrast_range)
        return d


# -- noise -------------------------------------------------------------------

def gaussian_noise(img: Image, sigma: float, prng: _rng.Prng) -> Image:
    if sigma < 0:
        raise ParameterError(f"sigma must be >= 0, got {sigma}")
    if sigma == 0:
        return img
    noise = prng.gaussians(img.data.size, 0.0, sigma).reshape(img.data.shape)
    return clamp01(img.data + noise)


def noise_dataset(ds: LabeledDataset, sigma: float, seed: int) -> LabeledDataset:
    """Noise applied once to every image, image i using ``child(seed, i)``."""
    images = [gaussian_noise(img, sigma, _rng.child(seed, i)) for i, img in enumerate(ds.images)]
    return LabeledDataset(images, list(ds.labels), ds.num_classes, ds.shape)


# -- crop / flip -------------------------------------------------------------

def crop(img: Image, left: int, top: int, size: int) -> Image:
    return Image(img.data[:, top:top + size, left:left + size].copy())


def random_crop(img: Image, crop_size: int, prng: _rng.Prng) -> Image:
    if crop_size > min(img.width, img.height) or crop_size < 1:
        raise ParameterError(f"crop {crop_size} does not fit {img.width}x{img.height}")
    left = prng.below(img.width - crop_size + 1)
    top = prng.below(img.height - crop_size + 1)
    return crop(img, left, top, crop_size)


def center_crop(img: Image, crop_size: int) -> Image:
    return crop(img, (img.width - crop_size) // 2, (img.height - crop_size) // 2, crop_size)


def flip(img: Image) -> Image:
    return Image(img.data[:, :, ::-1].copy())


def horizontal_flip(img: Image, prob: float, prng: _rng.Prng) -> Image:
    if not 0.0 <= prob <= 1.0:
        raise ParameterError(f"flip probability must be in [0, 1], got {prob}")
    # one draw per call regardless of prob keeps stream positions fixed
    return flip(img) if prng.next_unit() < prob else img


# -- affine ------------------------------------------------------------------

def affine_transform(img: Image, angle_deg: float, tx: float, ty: float) -> Image:
    """Rotate by ``angle_deg`` about the center, then translate by (tx, ty) pixels.

    Output pixels are inverse-mapped into the source and sampled bilinearly;
    anything falling outside the source reads as 0.
    """
    c, h, w = img.data.shape
    theta = math.radians(angle_deg)
    cos_t, sin_t = math.cos(theta), math.sin(theta)
    cx, cy = (w - 1) / 2.0, (h - 1) / 2.0
    ys, xs = np.mgrid[0:h, 0:w].astype(np.float64)
    dx, dy = xs - tx - cx, ys - ty - cy
    sx = cos_t * dx + sin_t * dy + cx
    sy = -sin_t * dx + cos_t * dy + cy

    x0 = np.floor(sx).astype(np.int64)
    y0 = np.floor(sy).astype(np.int64)
    fx, fy = sx - x0, sy - y0
    padded = np.zeros((c, h + 2, w + 2))
    padded[:, 1:-1, 1:-1] = img.data

    def tap(yy, xx):
        # indices past the one-pixel zero border land on the border
        return padded[:, np.clip(yy, -1, h) + 1, np.clip(xx, -1, w) + 1]

    out = ((1 - fy) * ((1 - fx) * tap(y0, x0) + fx * tap(y0, x0 + 1))
           + fy * ((1 - fx) * tap(y0 + 1, x0) + fx * tap(y0 + 1, x0 + 1)))
    return clamp01(out)


def random_affine(img: Image, translate_frac: float, rotate_deg_max: float,
                  prng: _rng.Prng) -> Image:
    angle = (2.0 * prng.next_unit() - 1.0) * rotate_deg_max
    tx = (2.0 * prng.next_unit() - 1.0) * translate_frac * img.width
    ty = (2.0 * prng.next_unit() - 1.0) * translate_frac * img.height
    if angle == 0.0 and tx == 0.0 and ty == 0.0:
        return img
    return affine_transform(img, angle, tx, ty)


# -- color jitter ------------------------------------------------------------

def grayscale_mean(data: np.ndarray) -> float:
    if data.shape[0] == 1:
        return float(data.mean())
    return float(np.tensordot(LUMA, data, axes=(0, 0)).mean())


def adjust_color(img: Image, brightness: float, contrast: float) -> Image:
    scaled = brightness * img.data
    mean = grayscale_mean(scaled)
    # algebraically mean + contrast*(scaled - mean); this form is exact at contrast 1
    return clamp01(contrast * scaled + (1.0 - contrast) * mean)


def color_jitter(img: Image, brightness_delta: float, contrast_range, prng: _rng.Prng) -> Image:
    lo, hi = contrast_range
    fb = 1.0 + brightness_delta * (2.0 * prng.next_unit() - 1.0)
    fc = lo + (hi - lo) * prng.next_unit()
    return adjust_color(img, fb, fc)


# -- pipeline ----------------------------------------------------------------

def augmentation_pipeline(img: Image, cfg: AugmentationConfig, prng: _rng.Prng) -> Image:
    """crop -> flip -> affine -> jitter (-> noise); a fresh draw for every stage."""
    if cfg.crop_size is not None:
        img = random_crop(img, cfg.crop_size, prng)
    img = horizontal_flip(img, cfg.flip_prob, prng)
    img = random_affine(img, cfg.translate_frac, cfg.rotate_deg_max, prng)
    img = color_jitter(img, cfg.brightness_delta, cfg.contrast_range, prng)
    if cfg.noise_sigma > 0:
        img = gaussian_noise(img, cfg.noise_sigma, prng)
    return img


def augment_dataset(ds: LabeledDataset, cfg: AugmentationConfig, seed: int) -> LabeledDataset:
    cfg.validate(ds.shape)
    images = [augmentation_pipeline(img, cfg, _rng.child(seed, i)) for i, img in enumerate(ds.images)]
    return LabeledDataset(images, list(ds.labels), ds.num_classes, cfg.output_shape(ds.shape))
