"""Image and dataset containers plus the 8-bit quantization rules.

Pixels are stored channel-planar, i.e. an array of shape (channels, height,
width) whose row-major flattening is exactly the CIFAR-10 record layout.
Intensities live in [0, 1]; the brightest representable value is 1.0.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ShapeError

X_MAX = 1.0

Shape = tuple  # (width, height, channels)


@dataclass(frozen=True)
class Image:
    data: np.ndarray  # (channels, height, width), float64

    def __post_init__(self):
        arr = np.asarray(self.data, dtype=np.float64)
        if arr.ndim != 3 or arr.shape[0] not in (1, 3):
            raise ShapeError(f"expected (c, h, w) with c in (1, 3), got {arr.shape}")
        if arr.size and (arr.min() < 0.0 or arr.max() > 1.0 or np.isnan(arr).any()):
            raise ShapeError("intensities must lie in [0, 1]")
        arr.flags.writeable = False
        object.__setattr__(self, "data", arr)

    @classmethod
    def from_array(cls, arr) -> "Image":
        """Wrap an array, clamping it into range first."""
        return cls(np.clip(np.asarray(arr, dtype=np.float64), 0.0, 1.0))

    @property
    def channels(self) -> int:
        return self.data.shape[0]

    @property
    def height(self) -> int:
        return self.data.shape[1]

    @property
    def width(self) -> int:
        return self.data.shape[2]

    @property
    def shape(self) -> Shape:
        return (self.width, self.height, self.channels)

    def flat(self) -> np.ndarray:
        return self.data.reshape(-1)

    def __eq__(self, other):
        if not isinstance(other, Image):
            return NotImplemented
        return self.data.shape == other.data.shape and np.array_equal(self.data, other.data)

    __hash__ = None


@dataclass
class LabeledDataset:
    images: list
    labels: list
    num_classes: int
    shape: Shape = field(default=None)

    def __post_init__(self):
        if len(self.images) != len(self.labels):
            raise ShapeError(
                f"{len(self.images)} images but {len(self.labels)} labels")
        self.labels = [int(y) for y in self.labels]
        for y in self.labels:
            if not 0 <= y < self.num_classes:
                raise ShapeError(f"label {y} outside 0..{self.num_classes - 1}")
        shapes = {img.shape for img in self.images}
        if len(shapes) > 1:
            raise ShapeError(f"mixed image shapes: {sorted(shapes)}")
        if shapes:
            (only,) = shapes
            if self.shape is not None and tuple(self.shape) != only:
                raise ShapeError(f"declared shape {self.shape} but images are {only}")
            self.shape = only
        elif self.shape is not None:
            self.shape = tuple(self.shape)

    def __len__(self):
        return len(self.images)

    def as_matrix(self) -> np.ndarray:
        """(n, w*h*c) float64 matrix of flattened planar images."""
        if not self.images:
            w, h, c = self.shape or (0, 0, 0)
            return np.zeros((0, w * h * c))
        return np.stack([img.flat() for img in self.images])

    def label_array(self) -> np.ndarray:
        return np.asarray(self.labels, dtype=np.int64)

    def __eq__(self, other):
        if not isinstance(other, LabeledDataset):
            return NotImplemented
        return (self.num_classes == other.num_classes
                and self.labels == other.labels
                and len(self.images) == len(other.images)
                and all(a == b for a, b in zip(self.images, other.images)))

    __hash__ = None


def clamp01(img) -> Image:
    data = img.data if isinstance(img, Image) else np.asarray(img, dtype=np.float64)
    return Image(np.minimum(1.0, np.maximum(0.0, data)))


def quantize(img: Image) -> bytes:
    # floor(v*255 + 0.5) is round-half-up; np.round would round half to even
    q = np.floor(img.data * 255.0 + 0.5)
    return q.astype(np.uint8).tobytes()


def dequantize(raw, shape: Shape) -> Image:
    w, h, c = shape
    buf = np.frombuffer(bytes(raw), dtype=np.uint8)
    if buf.size != w * h * c:
        raise ShapeError(f"{buf.size} bytes cannot fill a {w}x{h}x{c} image")
    return Image(buf.reshape(c, h, w).astype(np.float64) / 255.0)
