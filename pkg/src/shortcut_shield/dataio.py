"""Readers and writers for CIFAR-10 binary, MNIST IDX and binary PPM/PGM,
plus release manifests and the synthetic stand-in dataset.

All readers validate fully before building anything and raise FormatError on
malformed input, so a bad file never yields a partial dataset.
"""
from __future__ import annotations

import json
import os
import struct
import tempfile
from dataclasses import asdict, dataclass, field

import numpy as np

from . import rng as _rng
from .core import Image, LabeledDataset, dequantize, quantize
from .errors import FormatError, ParameterError, ShapeError

CIFAR_SHAPE = (32, 32, 3)
CIFAR_RECORD = 1 + 32 * 32 * 3
CIFAR_CLASSES = 10

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801

MANIFEST_VERSION = 1

_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3


def fnv1a64(data: bytes) -> int:
    h = _FNV_OFFSET
    for b in data:
        h = ((h ^ b) * _FNV_PRIME) & 0xFFFFFFFFFFFFFFFF
    return h


def atomic_write(path, payload: bytes):
    """Write via a temp file in the same directory, then rename over ``path``."""
    path = os.fspath(path)
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(payload)
        umask = os.umask(0)
        os.umask(umask)
        os.chmod(tmp, 0o666 & ~umask)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _read(path) -> bytes:
    with open(path, "rb") as f:
        return f.read()


# -- label + pixels records (CIFAR-10 binary layout) ---------------------------

def decode_records(raw: bytes, shape=CIFAR_SHAPE, num_classes: int = CIFAR_CLASSES) -> LabeledDataset:
    w, h, c = shape
    rec = 1 + w * h * c
    if len(raw) % rec:
        raise FormatError(f"{len(raw)} bytes is not a whole number of {rec}-byte records")
    n = len(raw) // rec
    table = np.frombuffer(raw, dtype=np.uint8).reshape(n, rec)
    labels = table[:, 0].astype(np.int64)
    if n and labels.max() >= num_classes:
        bad = int(np.flatnonzero(labels >= num_classes)[0])
        raise FormatError(f"record {bad}: label {labels[bad]} >= {num_classes}")
    pixels = table[:, 1:].reshape(n, c, h, w).astype(np.float64) / 255.0
    images = [Image(p) for p in pixels]
    return LabeledDataset(images, labels.tolist(), num_classes, shape)


def encode_records(ds: LabeledDataset) -> bytes:
    if ds.num_classes > 256:
        raise FormatError(f"{ds.num_classes} classes do not fit a one-byte label")
    return b"".join(bytes([y]) + quantize(img) for img, y in zip(ds.images, ds.labels))


def read_records(path, shape=CIFAR_SHAPE, num_classes: int = CIFAR_CLASSES) -> LabeledDataset:
    return decode_records(_read(path), shape, num_classes)


def write_records(ds: LabeledDataset, path):
    atomic_write(path, encode_records(ds))


def read_cifar10_bin(path) -> LabeledDataset:
    return read_records(path, CIFAR_SHAPE, CIFAR_CLASSES)


def write_cifar10_bin(ds: LabeledDataset, path):
    if ds.shape is not None and tuple(ds.shape) != CIFAR_SHAPE:
        raise FormatError(f"CIFAR-10 records hold 32x32x3 images, got {ds.shape}")
    write_records(ds, path)


# -- MNIST IDX -----------------------------------------------------------------

def _idx_header(raw: bytes, magic: int, ndims: int, what: str):
    need = 4 * (1 + ndims)
    if len(raw) < need:
        raise FormatError(f"{what}: truncated header ({len(raw)} bytes)")
    fields = struct.unpack(f">{1 + ndims}I", raw[:need])
    if fields[0] != magic:
        raise FormatError(f"{what}: bad magic 0x{fields[0]:08x}, expected 0x{magic:08x}")
    return fields[1:], raw[need:]


def read_mnist_idx_images(path) -> list:
    (n, rows, cols), body = _idx_header(_read(path), IDX_IMAGES_MAGIC, 3, "IDX images")
    if len(body) != n * rows * cols:
        raise FormatError(f"IDX images: expected {n * rows * cols} payload bytes, got {len(body)}")
    arr = np.frombuffer(body, dtype=np.uint8).reshape(n, 1, rows, cols).astype(np.float64) / 255.0
    return [Image(a) for a in arr]


def read_mnist_idx_labels(path) -> list:
    (n,), body = _idx_header(_read(path), IDX_LABELS_MAGIC, 1, "IDX labels")
    if len(body) != n:
        raise FormatError(f"IDX labels: expected {n} payload bytes, got {len(body)}")
    return list(body)


def read_mnist(images_path, labels_path):
    images = read_mnist_idx_images(images_path)
    labels = read_mnist_idx_labels(labels_path)
    if len(images) != len(labels):
        raise FormatError(f"{len(images)} MNIST images but {len(labels)} labels")
    return images, labels


def encode_idx_images(images) -> bytes:
    if not images:
        return struct.pack(">4I", IDX_IMAGES_MAGIC, 0, 28, 28)
    rows, cols = images[0].height, images[0].width
    return struct.pack(">4I", IDX_IMAGES_MAGIC, len(images), rows, cols) + b"".join(
        quantize(img) for img in images)


def encode_idx_labels(labels) -> bytes:
    return struct.pack(">2I", IDX_LABELS_MAGIC, len(labels)) + bytes(int(y) for y in labels)


def write_mnist_idx_images(images, path):
    atomic_write(path, encode_idx_images(images))


def write_mnist_idx_labels(labels, path):
    atomic_write(path, encode_idx_labels(labels))


# -- PPM / PGM -----------------------------------------------------------------

def decode_pnm(raw: bytes) -> Image:
    magic = raw[:2]
    if magic not in (b"P5", b"P6"):
        raise FormatError(f"not a binary PGM/PPM (magic {magic!r})")
    channels = 3 if magic == b"P6" else 1
    pos, tokens = 2, []
    while len(tokens) < 3:
        if pos >= len(raw):
            raise FormatError("truncated PNM header")
        ch = raw[pos:pos + 1]
        if ch == b"#":
            end = raw.find(b"\n", pos)
            pos = len(raw) if end < 0 else end + 1
        elif ch.isspace():
            pos += 1
        else:
            start = pos
            while pos < len(raw) and not raw[pos:pos + 1].isspace() and raw[pos:pos + 1] != b"#":
                pos += 1
            tok = raw[start:pos]
            if not tok.isdigit():
                raise FormatError(f"bad PNM header token {tok!r}")
            tokens.append(int(tok))
    if pos >= len(raw) or not raw[pos:pos + 1].isspace():
        raise FormatError("PNM header must end with one whitespace byte")
    pos += 1
    width, height, maxval = tokens
    if maxval != 255:
        raise FormatError(f"only maxval 255 is supported, got {maxval}")
    body = raw[pos:]
    if len(body) != width * height * channels:
        raise FormatError(f"PNM payload is {len(body)} bytes, expected {width * height * channels}")
    interleaved = np.frombuffer(body, dtype=np.uint8).reshape(height, width, channels)
    return Image(interleaved.transpose(2, 0, 1).astype(np.float64) / 255.0)


def encode_pnm(img: Image) -> bytes:
    magic = b"P6" if img.channels == 3 else b"P5"
    planar = np.frombuffer(quantize(img), dtype=np.uint8).reshape(img.data.shape)
    header = magic + f"\n{img.width} {img.height}\n255\n".encode("ascii")
    return header + planar.transpose(1, 2, 0).tobytes()


def read_ppm(path) -> Image:
    return decode_pnm(_read(path))


def write_ppm(img: Image, path):
    atomic_write(path, encode_pnm(img))


# -- manifests -----------------------------------------------------------------

@dataclass
class DatasetManifest:
    method: str
    params: dict
    checksum: str
    shape: list
    classes: int
    seed: int
    version: int = MANIFEST_VERSION
    extra: dict = field(default_factory=dict)

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "DatasetManifest":
        try:
            d = json.loads(text)
            m = cls(**d)
        except (ValueError, TypeError) as e:
            raise FormatError(f"bad manifest: {e}") from None
        if m.version != MANIFEST_VERSION:
            raise FormatError(f"unsupported manifest version {m.version}")
        m.shape = list(m.shape)
        return m

    def save(self, path):
        atomic_write(path, self.to_json().encode("utf-8"))

    @classmethod
    def load(cls, path) -> "DatasetManifest":
        with open(path, encoding="utf-8") as f:
            return cls.from_json(f.read())


def checksum_hex(data: bytes) -> str:
    return f"0x{fnv1a64(data):016x}"


# -- synthetic task ------------------------------------------------------------

BLOCK = 8


@dataclass
class SyntheticSpec:
    num_classes: int = 10
    n_per_class: int = 100
    shape: tuple = CIFAR_SHAPE
    signal_strength: float = 1.0
    noise_sigma: float = 0.0
    seed: int = 0
    val_per_class: int | None = None

    def validate(self):
        if self.num_classes < 2:
            raise ParameterError("need at least two classes")
        if not 0.0 <= self.signal_strength <= 1.0:
            raise ParameterError(f"signal strength must be in [0, 1], got {self.signal_strength}")
        if self.noise_sigma < 0:
            raise ParameterError("noise sigma must be >= 0")
        w, h, _ = self.shape
        if w < BLOCK or h < BLOCK:
            raise ShapeError(f"images must be at least {BLOCK}x{BLOCK}")
        return self


def class_prototypes(spec: SyntheticSpec) -> list:
    """(left, top, color) per class.

    Blocks sit on the 8-pixel grid; class k redraws from its own stream until it
    finds a cell no lower class holds (overlap is allowed only once every cell
    is taken).  Each channel of the color is 0 or 1, so every class differs
    from the mid-gray background by the same amount.
    """
    w, h, c = spec.shape
    cols, rows = w // BLOCK, h // BLOCK
    used = set()
    protos = []
    for k in range(spec.num_classes):
        prng = _rng.child(spec.seed, k)
        while True:
            cell = (prng.below(cols), prng.below(rows))
            if cell not in used or len(used) >= cols * rows:
                break
        used.add(cell)
        color = np.floor(prng.units(c) * 2.0)
        protos.append((cell[0] * BLOCK, cell[1] * BLOCK, color))
    return protos


def synthetic_image(proto, spec: SyntheticSpec, prng: _rng.Prng) -> Image:
    """Uniform-noise texture with the class block blended in at ``signal_strength``."""
    w, h, c = spec.shape
    left, top, color = proto
    x = prng.units(w * h * c).reshape(c, h, w)
    s = spec.signal_strength
    region = x[:, top:top + BLOCK, left:left + BLOCK]
    x[:, top:top + BLOCK, left:left + BLOCK] = (1.0 - s) * region + s * color[:, None, None]
    if spec.noise_sigma > 0:
        x = x + prng.gaussians(x.size, 0.0, spec.noise_sigma).reshape(x.shape)
    return Image.from_array(x)


def generate_synthetic_dataset(spec: SyntheticSpec):
    spec.validate()
    K = spec.num_classes
    protos = class_prototypes(spec)
    n_train = K * spec.n_per_class
    n_val = K * (spec.val_per_class if spec.val_per_class is not None else spec.n_per_class)

    def build(n, tag0):
        labels = [i % K for i in range(n)]
        images = [synthetic_image(protos[y], spec, _rng.child(spec.seed, tag0 + i))
                  for i, y in enumerate(labels)]
        return LabeledDataset(images, labels, K, tuple(spec.shape))

    return build(n_train, K), build(n_val, K + n_train)
