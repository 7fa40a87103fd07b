"""Naive per-pixel loops evaluating the three modification formulas directly.

Kept deliberately separate from the vectorized implementations they check.
"""
import numpy as np


def pixel_pattern_loop(x, mask, x_max=1.0):
    c, h, w = x.shape
    out = np.empty_like(x)
    for ch in range(c):
        for r in range(h):
            for q in range(w):
                d = float(mask[ch, r, q])
                out[ch, r, q] = (1.0 - d) * float(x[ch, r, q]) + d * x_max
    return out


def watermark_loop(x, m, alpha):
    c, h, w = x.shape
    out = np.empty_like(x)
    for ch in range(c):
        for r in range(h):
            for q in range(w):
                mm, xx = float(m[ch, r, q]), float(x[ch, r, q])
                out[ch, r, q] = alpha * mm + (1.0 - alpha) * mm * xx + (1.0 - mm) * xx
    return out


def brightness_loop(x, b, clamp=True):
    c, h, w = x.shape
    out = np.empty_like(x)
    for ch in range(c):
        for r in range(h):
            for q in range(w):
                v = float(b[ch, r, q]) * float(x[ch, r, q])
                if clamp:
                    v = min(1.0, max(0.0, v))
                out[ch, r, q] = v
    return out


def brightness_field_loop(shape, squares, gamma, side):
    """Entry-by-entry product of the factors of every square covering it."""
    w, h, c = shape
    out = np.ones((c, h, w))
    for ch in range(c):
        for r in range(h):
            for q in range(w):
                f = 1.0
                for cx, cy, darken in squares:
                    lo_x, lo_y = cx - side // 2, cy - side // 2
                    if lo_x <= q < lo_x + side and lo_y <= r < lo_y + side:
                        f *= gamma if darken else 2.0 - gamma
                out[ch, r, q] = f
    return out
