"""Dataset ingestion, synthesis, splits and augmentation.

The on-disk format is the CIFAR-10 binary layout, bit-exact: each record is
1 label byte followed by 3072 pixel bytes (1024 R, then G, then B, row-major
32x32 within each channel). Synthetic datasets are quantized to the same
byte grid at generation time, so write-then-read round-trips exactly.
"""

import warnings
from dataclasses import dataclass, field

import numpy as np

from .rng import Rng

IMAGE_SHAPE = (3, 32, 32)
RECORD_BYTES = 1 + 3 * 32 * 32


@dataclass
class Dataset:
    images: np.ndarray  # (N, 3, 32, 32) float32, in [0,1] until normalized
    labels: np.ndarray  # (N,) int64, each < num_classes
    num_classes: int

    def __len__(self):
        return len(self.labels)

    def subset(self, idx):
        return Dataset(self.images[idx], self.labels[idx], self.num_classes)


@dataclass
class SemiSplit:
    labeled_indices: np.ndarray
    unlabeled_indices: np.ndarray
    seed: int


@dataclass
class PerturbConfig:
    translate_max_px: int = 2
    flip_horizontal: bool = True
    input_noise_std: float = 0.15
    dropout_rate: float = 0.5

    def __post_init__(self):
        if self.translate_max_px < 0:
            raise ValueError("translate_max_px must be >= 0")
        if self.input_noise_std < 0:
            raise ValueError("input_noise_std must be >= 0")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ValueError("dropout_rate must be in [0,1)")

    def is_identity(self):
        return (
            self.translate_max_px == 0
            and not self.flip_horizontal
            and self.input_noise_std == 0.0
        )


@dataclass
class NormStats:
    mean: np.ndarray  # (3,)
    std: np.ndarray   # (3,)


def read_cifar10_bin(path, num_classes=10):
    """Decode a CIFAR-10 binary batch file into a Dataset (pixels / 255)."""
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) % RECORD_BYTES != 0:
        raise ValueError(
            f"{path}: truncated file, {len(raw)} bytes is not a multiple of "
            f"{RECORD_BYTES} (offset of partial record: {len(raw) - len(raw) % RECORD_BYTES})"
        )
    n = len(raw) // RECORD_BYTES
    if n == 0:
        return Dataset(np.zeros((0,) + IMAGE_SHAPE, np.float32), np.zeros(0, np.int64), num_classes)
    buf = np.frombuffer(raw, dtype=np.uint8).reshape(n, RECORD_BYTES)
    labels = buf[:, 0].astype(np.int64)
    bad = np.nonzero(labels >= num_classes)[0]
    if bad.size:
        off = int(bad[0]) * RECORD_BYTES
        raise ValueError(
            f"{path}: label byte {int(labels[bad[0]])} out of range at byte offset {off}"
        )
    images = buf[:, 1:].reshape(n, 3, 32, 32).astype(np.float32) / 255.0
    return Dataset(images, labels, num_classes)


def write_cifar10_bin(path, dataset):
    """Serialize a Dataset to the CIFAR-10 binary layout (pixels * 255, rounded)."""
    n = len(dataset)
    buf = np.empty((n, RECORD_BYTES), dtype=np.uint8)
    buf[:, 0] = dataset.labels.astype(np.uint8)
    pixels = np.clip(np.rint(dataset.images * 255.0), 0, 255).astype(np.uint8)
    buf[:, 1:] = pixels.reshape(n, -1)
    with open(path, "wb") as fh:
        fh.write(buf.tobytes())


def _class_template(c, classes, rng):
    """Oriented grating in a class-specific color direction, values in [0,1]."""
    theta = np.pi * c / classes
    freq = 2.0 + (c % 3)
    yy, xx = np.mgrid[0:32, 0:32].astype(np.float64)
    phase = 2.0 * np.pi * freq * (xx * np.cos(theta) + yy * np.sin(theta)) / 32.0
    grating = np.sin(phase)
    tint = rng.standard_normal(3)
    tint /= np.linalg.norm(tint)
    return 0.5 + 0.22 * grating[None, :, :] * tint[:, None, None]


def synth_dataset(
    classes,
    per_class,
    seed,
    jitter_px=0,
    amplitude_jitter=0.0,
    noise_std=0.05,
):
    """Synthetic 32x32 dataset: one spatial pattern per class plus noise.

    At the default difficulty (no jitter) a nearest-centroid classifier on
    raw pixels exceeds 90% accuracy; the jitter/amplitude knobs make the
    task hard enough that a CNN has something to learn. Deterministic per
    seed; pixel values are quantized to the CIFAR byte grid so serializing
    and re-reading is lossless.
    """
    if classes < 2:
        raise ValueError("synth_dataset needs classes >= 2")
    root = Rng(seed)
    templates = [_class_template(c, classes, root.child(1, c)) for c in range(classes)]
    n = classes * per_class
    images = np.empty((n, 3, 32, 32), dtype=np.float64)
    labels = np.repeat(np.arange(classes), per_class).astype(np.int64)
    draw = root.child(2)
    for i, c in enumerate(labels):
        img = templates[c]
        if jitter_px > 0:
            dx, dy = draw.integers(-jitter_px, jitter_px + 1, size=2)
            img = np.roll(img, (int(dy), int(dx)), axis=(1, 2))
        if amplitude_jitter > 0:
            amp = 1.0 + amplitude_jitter * (2.0 * draw.random() - 1.0)
            img = 0.5 + (img - 0.5) * amp
        img = img + draw.normal(0.0, noise_std, size=IMAGE_SHAPE)
        images[i] = img
    images = np.clip(images, 0.0, 1.0)
    images = np.rint(images * 255.0) / 255.0
    order = root.child(3).permutation(n)
    return Dataset(images[order].astype(np.float32), labels[order], classes)


def split_semi(dataset, num_labeled, seed):
    """Class-balanced labeled subset of size `num_labeled`; rest unlabeled."""
    n = len(dataset)
    if num_labeled > n:
        raise ValueError(f"cannot label {num_labeled} of {n} samples")
    k = dataset.num_classes
    base, rem = divmod(num_labeled, k)
    rng = Rng(seed).child(10)
    labeled = []
    for c in range(k):
        budget = base + (1 if c < rem else 0)
        pool = np.nonzero(dataset.labels == c)[0]
        if budget > pool.size:
            raise ValueError(
                f"class {c} has {pool.size} samples, cannot draw {budget} labeled"
            )
        picked = rng.permutation(pool)[:budget]
        labeled.append(picked)
    labeled = np.sort(np.concatenate(labeled)) if labeled else np.zeros(0, np.int64)
    mask = np.ones(n, dtype=bool)
    mask[labeled] = False
    return SemiSplit(labeled.astype(np.int64), np.nonzero(mask)[0].astype(np.int64), seed)


def translate_image(image, dx, dy):
    """Shift (C,H,W) content by dx columns and dy rows, zero-filling."""
    c, h, w = image.shape
    out = np.zeros_like(image)
    if abs(dx) >= w or abs(dy) >= h:
        return out
    src_y = slice(max(0, -dy), h - max(0, dy))
    dst_y = slice(max(0, dy), h - max(0, -dy))
    src_x = slice(max(0, -dx), w - max(0, dx))
    dst_x = slice(max(0, dx), w - max(0, -dx))
    out[:, dst_y, dst_x] = image[:, src_y, src_x]
    return out


def augment(image, cfg, rng):
    """Random translate (zero fill), optional horizontal flip, Gaussian noise."""
    return augment_batch(image[None], cfg, rng)[0]


def augment_batch(images, cfg, rng):
    """Vectorized `augment` over (N,C,H,W); one independent draw per image."""
    out = np.array(images, copy=True)
    n = out.shape[0]
    t = cfg.translate_max_px
    if t > 0:
        shifts = rng.integers(-t, t + 1, size=(n, 2))
        for i in range(n):
            dx, dy = int(shifts[i, 0]), int(shifts[i, 1])
            if dx or dy:
                out[i] = translate_image(out[i], dx, dy)
    if cfg.flip_horizontal:
        flips = rng.random(n) < 0.5
        out[flips] = out[flips][..., ::-1]
    if cfg.input_noise_std > 0:
        out += rng.normal(0.0, cfg.input_noise_std, size=out.shape).astype(out.dtype)
    return out


def normalize(dataset):
    """Per-channel standardization; returns the new dataset and the statistics."""
    if len(dataset) == 0:
        raise ValueError("cannot normalize an empty dataset")
    mean = dataset.images.mean(axis=(0, 2, 3))
    std = dataset.images.std(axis=(0, 2, 3))
    low = std < 1e-6
    if low.any():
        warnings.warn(f"zero-variance channels {np.nonzero(low)[0].tolist()}; std clamped")
        std = np.where(low, 1e-6, std)
    stats = NormStats(mean.astype(np.float32), std.astype(np.float32))
    return apply_norm(dataset, stats), stats


def apply_norm(dataset, stats):
    """Standardize with previously computed (training-set) statistics."""
    images = (dataset.images - stats.mean[None, :, None, None]) / stats.std[None, :, None, None]
    return Dataset(images.astype(np.float32), dataset.labels, dataset.num_classes)
