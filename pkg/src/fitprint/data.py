"""Datasets: a seeded synthetic image task plus CSV and PGM/PPM ingestion."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np


class DatasetError(ValueError):
    pass


@dataclass
class Dataset:
    images: np.ndarray  # (N, C, H, W) float64 in [0, 1]
    labels: np.ndarray  # (N,) int64
    num_classes: int
    split: str = "train"

    def __post_init__(self):
        self.images = np.asarray(self.images, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.images.ndim != 4 or len(self.images) != len(self.labels):
            raise DatasetError(f"images {self.images.shape} and labels {self.labels.shape} do not line up")
        if self.images.size and (self.images.min() < 0 or self.images.max() > 1):
            raise DatasetError("pixel values must lie in [0, 1]")
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= self.num_classes):
            raise DatasetError(f"labels must lie in [0, {self.num_classes})")

    def __len__(self) -> int:
        return len(self.labels)

    @property
    def image_shape(self) -> tuple[int, int, int]:
        return tuple(self.images.shape[1:])

    def subset(self, idx, split: str | None = None) -> "Dataset":
        return Dataset(self.images[idx], self.labels[idx], self.num_classes, split or self.split)


def class_patterns(num_classes: int, image_shape, pattern_seed: int, blobs: int = 3) -> np.ndarray:
    """One prototype image per class: a sum of a few Gaussian blobs."""
    c, h, w = image_shape
    rng = np.random.default_rng(pattern_seed)
    yy, xx = np.mgrid[0:h, 0:w]
    protos = np.zeros((num_classes, c, h, w))
    for k in range(num_classes):
        for ch in range(c):
            for _ in range(blobs):
                cy, cx = rng.uniform(0.15, 0.85) * h, rng.uniform(0.15, 0.85) * w
                sy, sx = rng.uniform(0.06, 0.16) * h, rng.uniform(0.06, 0.16) * w
                amp = rng.uniform(0.5, 1.0)
                protos[k, ch] += amp * np.exp(-((yy - cy) ** 2 / (2 * sy ** 2) + (xx - cx) ** 2 / (2 * sx ** 2)))
    return np.clip(protos, 0.0, 1.0)


def synth_dataset(num_classes: int, per_class: int, image_shape=(1, 28, 28), seed: int = 0,
                  pattern_seed: int = 1234, noise: float = 0.5, max_shift: int = 3,
                  split: str = "train") -> Dataset:
    """Class-conditioned blob patterns with random shifts, contrast jitter and pixel noise.

    ``pattern_seed`` fixes the task (class prototypes); ``seed`` draws the samples.
    """
    if num_classes < 2:
        raise DatasetError("synth_dataset needs num_classes >= 2")
    protos = class_patterns(num_classes, image_shape, pattern_seed)
    rng = np.random.default_rng(seed)
    n = num_classes * per_class
    labels = np.repeat(np.arange(num_classes), per_class)
    images = np.empty((n,) + tuple(image_shape))
    for i, y in enumerate(labels):
        dy, dx = rng.integers(-max_shift, max_shift + 1, size=2)
        img = np.roll(protos[y], (dy, dx), axis=(1, 2))
        img = img * rng.uniform(0.7, 1.1) + rng.normal(0.0, noise, size=img.shape)
        images[i] = np.clip(img, 0.0, 1.0)
    order = rng.permutation(n)
    return Dataset(images[order], labels[order], num_classes, split)


def public_images(n: int, image_shape=(1, 28, 28), seed: int = 0, noise: float = 0.1) -> np.ndarray:
    """Unlabeled generic images: 1-5 random Gaussian blobs plus pixel noise.

    Plays the part of a public natural-image pool, unrelated to any task's
    class prototypes.
    """
    c, h, w = image_shape
    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:h, 0:w]
    out = np.empty((n, c, h, w))
    for i in range(n):
        img = np.zeros((c, h, w))
        for ch in range(c):
            for _ in range(int(rng.integers(1, 6))):
                cy, cx = rng.uniform(0.0, 1.0) * h, rng.uniform(0.0, 1.0) * w
                sy, sx = rng.uniform(0.04, 0.25) * h, rng.uniform(0.04, 0.25) * w
                img[ch] += rng.uniform(0.2, 1.0) * np.exp(-((yy - cy) ** 2 / (2 * sy ** 2) + (xx - cx) ** 2 / (2 * sx ** 2)))
        out[i] = np.clip(img + rng.normal(0.0, noise, img.shape), 0.0, 1.0)
    return out


def train_test(num_classes: int, per_class: int, test_per_class: int, image_shape=(1, 28, 28),
               seed: int = 0, pattern_seed: int = 1234) -> tuple[Dataset, Dataset]:
    train = synth_dataset(num_classes, per_class, image_shape, seed, pattern_seed, split="train")
    test = synth_dataset(num_classes, test_per_class, image_shape, seed + 100_003, pattern_seed, split="test")
    return train, test


# ----------------------------------------------------------------- CSV pixels


def export_csv(data: Dataset, path) -> None:
    """Write ``label,p0,p1,...`` rows with full-precision real pixels."""
    flat = data.images.reshape(len(data), -1)
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["label"] + [f"p{i}" for i in range(flat.shape[1])])
        for y, row in zip(data.labels, flat):
            wr.writerow([int(y)] + [repr(float(v)) for v in row])


def _read_csv(path, image_shape) -> tuple[np.ndarray, list]:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise DatasetError(f"{path}: no samples found")
    header, body = rows[0], rows[1:]
    if not header or header[0].strip() != "label":
        raise DatasetError(f"{path}: header must start with 'label'")
    if not body:
        raise DatasetError(f"{path}: no samples found")
    npix = len(header) - 1
    if image_shape is None:
        side = int(round(npix ** 0.5))
        if side * side != npix:
            raise DatasetError(f"{path}: {npix} pixels is not square; pass image_shape")
        image_shape = (1, side, side)
    if int(np.prod(image_shape)) != npix:
        raise DatasetError(f"{path}: {npix} pixels do not fit image shape {tuple(image_shape)}")
    pix = np.empty((len(body), npix))
    labels = []
    integer_scale = True
    for r, row in enumerate(body, start=2):
        if len(row) != npix + 1:
            raise DatasetError(f"{path}: row {r} has {len(row)} fields, expected {npix + 1}")
        labels.append(row[0].strip())
        try:
            vals = [float(v) for v in row[1:]]
        except ValueError:
            raise DatasetError(f"{path}: row {r} has a non-numeric pixel") from None
        pix[r - 2] = vals
        if any(not v.strip().lstrip("+").isdigit() for v in row[1:]):
            integer_scale = False
    if integer_scale and pix.max() > 1:
        bad = np.argwhere(pix > 255)
        if bad.size:
            raise DatasetError(f"{path}: row {bad[0][0] + 2} pixel p{bad[0][1]} = {pix[tuple(bad[0])]:g} out of range 0-255")
        pix = pix / 255.0
    else:
        bad = np.argwhere((pix < 0) | (pix > 1))
        if bad.size:
            raise DatasetError(f"{path}: row {bad[0][0] + 2} pixel p{bad[0][1]} = {pix[tuple(bad[0])]:g} out of range")
    return pix.reshape((len(body),) + tuple(image_shape)), labels


# --------------------------------------------------------------- PGM / PPM


def read_pnm(path) -> np.ndarray:
    """Binary PGM (P5) or PPM (P6), returned as (C, H, W) in [0, 1]."""
    raw = Path(path).read_bytes()
    tokens: list[bytes] = []
    pos = 0
    while len(tokens) < 4:
        while pos < len(raw) and raw[pos:pos + 1].isspace():
            pos += 1
        if raw[pos:pos + 1] == b"#":
            while pos < len(raw) and raw[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(raw) and not raw[pos:pos + 1].isspace():
            pos += 1
        if start == pos:
            raise DatasetError(f"{path}: truncated PNM header")
        tokens.append(raw[start:pos])
    pos += 1
    magic = tokens[0]
    if magic not in (b"P5", b"P6"):
        raise DatasetError(f"{path}: unsupported image format {magic!r} (need binary PGM P5 or PPM P6)")
    try:
        w, h, maxval = (int(t) for t in tokens[1:])
    except ValueError:
        raise DatasetError(f"{path}: malformed PNM header") from None
    if not 0 < maxval < 65536:
        raise DatasetError(f"{path}: bad maxval {maxval}")
    c = 1 if magic == b"P5" else 3
    dtype = np.uint8 if maxval < 256 else np.dtype(">u2")
    count = w * h * c
    body = raw[pos:pos + count * np.dtype(dtype).itemsize]
    if len(body) < count * np.dtype(dtype).itemsize:
        raise DatasetError(f"{path}: truncated pixel data")
    arr = np.frombuffer(body, dtype=dtype).astype(np.float64).reshape(h, w, c) / maxval
    return arr.transpose(2, 0, 1)


def write_pnm(path, image: np.ndarray) -> None:
    image = np.asarray(image)
    c, h, w = image.shape
    magic = {1: b"P5", 3: b"P6"}[c]
    data = np.round(np.clip(image, 0, 1) * 255).astype(np.uint8).transpose(1, 2, 0).tobytes()
    Path(path).write_bytes(magic + f"\n{w} {h}\n255\n".encode() + data)


def _read_image_dir(path) -> tuple[np.ndarray, list]:
    root = Path(path)
    if not root.is_dir():
        raise DatasetError(f"{path}: not a directory")
    images, labels = [], []
    for cls in sorted(p for p in root.iterdir() if p.is_dir()):
        for f in sorted(cls.iterdir()):
            if f.suffix.lower() not in (".pgm", ".ppm", ".pnm"):
                continue
            images.append(read_pnm(f))
            labels.append(cls.name)
    if not images:
        raise DatasetError(f"{path}: no samples found")
    shape = images[0].shape
    for img, lab, in zip(images, labels):
        if img.shape != shape:
            raise DatasetError(f"{path}: image in class {lab!r} has shape {img.shape}, expected {shape}")
    return np.stack(images), labels


def ingest_dataset(path, format: str = "csv-pixels", image_shape=None, split: str = "train") -> Dataset:
    """Load a dataset; labels are remapped to 0..num_classes-1 in sorted order."""
    if format == "csv-pixels":
        images, raw_labels = _read_csv(path, image_shape)
    elif format == "image-directory":
        images, raw_labels = _read_image_dir(path)
    else:
        raise DatasetError(f"unknown dataset format {format!r}")
    keys = sorted(set(raw_labels), key=lambda s: (not s.lstrip("-").isdigit(), int(s) if s.lstrip("-").isdigit() else 0, s))
    index = {k: i for i, k in enumerate(keys)}
    labels = np.array([index[k] for k in raw_labels])
    return Dataset(images, labels, max(len(keys), 1), split)
