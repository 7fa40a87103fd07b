"""Digit exemplars used to draw class-index watermarks.

Real MNIST digits are preferred (see ``GlyphSource.from_mnist``).  When no
MNIST files are at hand a procedural set of hand-drawn-looking digits is
rendered from stroke skeletons with per-exemplar jitter, so watermarking
still works offline.
"""
from __future__ import annotations

import math

import numpy as np

from . import rng as _rng
from .errors import ConfigError

SIDE = 28

# Stroke skeletons on a unit box, (x, y) with y pointing down.


def _arc(cx, cy, rx, ry, a0, a1, n=24):
    ts = np.linspace(math.radians(a0), math.radians(a1), n)
    return [(cx + rx * math.cos(t), cy + ry * math.sin(t)) for t in ts]


_SKELETONS = {
    0: [_arc(0.5, 0.5, 0.28, 0.4, 0, 360, 40)],
    1: [[(0.38, 0.22), (0.55, 0.1), (0.55, 0.9)]],
    2: [_arc(0.5, 0.32, 0.25, 0.22, 190, 360) + [(0.68, 0.5), (0.25, 0.9), (0.78, 0.9)]],
    3: [_arc(0.48, 0.3, 0.24, 0.2, 200, 450), _arc(0.48, 0.7, 0.27, 0.2, 270, 520)],
    4: [[(0.62, 0.9), (0.62, 0.1), (0.2, 0.65), (0.8, 0.65)]],
    5: [[(0.75, 0.1), (0.3, 0.1), (0.27, 0.45)] + _arc(0.48, 0.65, 0.27, 0.25, 230, 500)],
    6: [[(0.65, 0.1), (0.33, 0.5)] + _arc(0.5, 0.68, 0.23, 0.22, 180, 540)],
    7: [[(0.22, 0.12), (0.78, 0.12), (0.42, 0.9)]],
    8: [_arc(0.5, 0.3, 0.2, 0.19, 0, 360, 32), _arc(0.5, 0.7, 0.25, 0.21, 0, 360, 32)],
    9: [_arc(0.5, 0.32, 0.23, 0.22, 0, 360, 32), [(0.73, 0.32), (0.62, 0.9)]],
}


def _segment_distance(px, py, a, b):
    ax, ay = a
    bx, by = b
    dx, dy = bx - ax, by - ay
    denom = dx * dx + dy * dy
    if denom == 0:
        return np.hypot(px - ax, py - ay)
    t = np.clip(((px - ax) * dx + (py - ay) * dy) / denom, 0.0, 1.0)
    return np.hypot(px - (ax + t * dx), py - (ay + t * dy))


def render_digit(digit: int, prng: _rng.Prng) -> np.ndarray:
    """One 28x28 exemplar in [0, 1] with random slant, scale, shift and stroke width."""
    slant = (prng.next_unit() - 0.5) * 0.5
    scale = 0.85 + 0.2 * prng.next_unit()
    ox = (prng.next_unit() - 0.5) * 0.12
    oy = (prng.next_unit() - 0.5) * 0.08
    width = 1.1 + 1.0 * prng.next_unit()

    ys, xs = np.mgrid[0:SIDE, 0:SIDE].astype(np.float64) + 0.5
    dist = np.full((SIDE, SIDE), np.inf)
    # digit occupies the central 20x20 box, as MNIST digits do
    for stroke in _SKELETONS[digit]:
        pts = []
        for x, y in stroke:
            x = 0.5 + (x - 0.5) * scale + slant * (0.5 - y) + ox
            y = 0.5 + (y - 0.5) * scale + oy
            pts.append((4 + 20 * x, 4 + 20 * y))
        for a, b in zip(pts[:-1], pts[1:]):
            dist = np.minimum(dist, _segment_distance(xs, ys, a, b))
    return np.clip(width + 0.5 - dist, 0.0, 1.0)


class GlyphSource:
    """Exemplars per decimal digit, each a (28, 28) array in [0, 1]."""

    def __init__(self, exemplars: dict):
        self.exemplars = {int(d): [np.asarray(g, dtype=np.float64) for g in gs]
                          for d, gs in exemplars.items()}

    def validate(self):
        missing = [d for d in range(10) if not self.exemplars.get(d)]
        if missing:
            raise ConfigError(f"glyph source has no exemplars for digits {missing}")

    def count(self, digit: int) -> int:
        return len(self.exemplars.get(digit, ()))

    def get(self, digit: int, index: int) -> np.ndarray:
        return self.exemplars[digit][index]

    @classmethod
    def from_mnist(cls, images, labels, per_digit: int | None = None) -> "GlyphSource":
        """Group MNIST images (Image objects or 28x28 arrays) by label."""
        groups = {d: [] for d in range(10)}
        for img, y in zip(images, labels):
            arr = img.data[0] if hasattr(img, "data") else np.asarray(img)
            if per_digit is None or len(groups[int(y)]) < per_digit:
                groups[int(y)].append(arr)
        return cls(groups)

    @classmethod
    def builtin(cls, per_digit: int = 16, seed: int = 0x6D6E697374) -> "GlyphSource":
        groups = {}
        for d in range(10):
            prng = _rng.child(seed, d)
            groups[d] = [render_digit(d, prng) for _ in range(per_digit)]
        return cls(groups)
