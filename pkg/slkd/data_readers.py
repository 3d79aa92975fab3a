# -*- coding: utf-8 -*-
"""Dataset ingestion, augmentation and deterministic batching.

Every reader returns a ``Dataset`` whose images are float32 arrays of
shape (n, channels, height, width) scaled to [0, 1] by dividing the raw
bytes by 255 (no mean/std normalization), and whose labels are int64
class ids.
"""

import logging
import struct
from collections import namedtuple
from dataclasses import dataclass
from typing import Optional

import numpy as np
from sklearn.datasets import make_blobs

from slkd.label_transformers import add_label_noise

logger = logging.getLogger(__name__)

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801
CIFAR_PIXELS = 3 * 32 * 32
SPLITS = ("train", "test")

DataSplits = namedtuple("DataSplits", ["train", "test"])


class DatasetFormatError(ValueError):
    """A binary dataset file that does not match its declared layout."""


@dataclass
class Dataset:
    images: np.ndarray
    labels: np.ndarray
    class_count: int
    split: str = "train"

    def __post_init__(self):
        self.images = np.asarray(self.images, dtype=np.float32)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.images.ndim != 4:
            raise ValueError("images must be (n, channels, h, w), got %r" % (self.images.shape,))
        if self.labels.shape != (self.images.shape[0],):
            raise ValueError("%d labels for %d images" % (self.labels.shape[0], self.images.shape[0]))
        if self.class_count < 1:
            raise ValueError("class_count must be positive")
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= self.class_count):
            raise ValueError("labels must lie in [0, %d)" % self.class_count)
        if self.split not in SPLITS:
            raise ValueError("split must be one of %s, got %r" % (", ".join(SPLITS), self.split))

    def __len__(self):
        return self.labels.shape[0]

    @property
    def per_class_counts(self):
        return np.bincount(self.labels, minlength=self.class_count)

    def subset(self, indices):
        indices = np.asarray(indices, dtype=np.int64)
        return Dataset(self.images[indices], self.labels[indices], self.class_count, self.split)

    def with_labels(self, labels):
        return Dataset(self.images, labels, self.class_count, self.split)


def _read_bytes(path):
    with open(path, "rb") as f:
        return f.read()


def _parse_idx(data, magic, ndims, what):
    header = 4 + 4 * ndims
    if len(data) < 4:
        raise DatasetFormatError("%s: truncated header (%d bytes)" % (what, len(data)))
    found, = struct.unpack(">I", data[:4])
    if found != magic:
        raise DatasetFormatError("%s: bad magic 0x%08x (expected 0x%08x)" % (what, found, magic))
    if len(data) < header:
        raise DatasetFormatError("%s: truncated header (%d bytes, need %d)" % (what, len(data), header))
    dims = struct.unpack(">%dI" % ndims, data[4:header])
    size = int(np.prod(dims))
    payload = len(data) - header
    if payload < size:
        raise DatasetFormatError("%s: truncated payload (%d bytes, header declares %d)"
                                 % (what, payload, size))
    if payload > size:
        raise DatasetFormatError("%s: %d trailing bytes after payload" % (what, payload - size))
    return np.frombuffer(data, dtype=np.uint8, count=size, offset=header).reshape(dims)


def load_idx(images_path, labels_path, class_count=None, split="train"):
    """Read an IDX image file (magic 0x803, n x rows x cols bytes) and an
    IDX label file (magic 0x801, n bytes), both big-endian.

    Parameters
    ----------
    images_path, labels_path : str
    class_count : int or None
        Defaults to the largest label + 1.
    split : str (default: "train")

    Returns
    -------
    Dataset
        Images shaped (n, 1, rows, cols).
    """
    images = _parse_idx(_read_bytes(images_path), IDX_IMAGES_MAGIC, 3, images_path)
    labels = _parse_idx(_read_bytes(labels_path), IDX_LABELS_MAGIC, 1, labels_path)
    if images.shape[0] != labels.shape[0]:
        raise DatasetFormatError("count mismatch: %d images in %s, %d labels in %s"
                                 % (images.shape[0], images_path, labels.shape[0], labels_path))
    if class_count is None:
        class_count = int(labels.max()) + 1 if labels.size else 1
    logger.info("Loaded %d IDX images (%dx%d) from %s", images.shape[0],
                images.shape[1], images.shape[2], images_path)
    return Dataset(images[:, None, :, :] / np.float32(255), labels, class_count, split)


def encode_idx(images_u8, labels):
    """IDX bytes for (n, rows, cols) uint8 images and (n,) uint8 labels."""
    images_u8 = np.asarray(images_u8, dtype=np.uint8)
    labels = np.asarray(labels, dtype=np.uint8)
    image_bytes = struct.pack(">4I", IDX_IMAGES_MAGIC, *images_u8.shape) + images_u8.tobytes()
    label_bytes = struct.pack(">2I", IDX_LABELS_MAGIC, labels.shape[0]) + labels.tobytes()
    return image_bytes, label_bytes


def write_idx(dataset, images_path, labels_path):
    """Write a single-channel dataset as an IDX pair."""
    if dataset.images.shape[1] != 1:
        raise ValueError("IDX holds single-channel images, dataset has %d channels"
                         % dataset.images.shape[1])
    pixels = np.rint(dataset.images[:, 0] * 255).astype(np.uint8)
    image_bytes, label_bytes = encode_idx(pixels, dataset.labels)
    with open(images_path, "wb") as f:
        f.write(image_bytes)
    with open(labels_path, "wb") as f:
        f.write(label_bytes)


def load_cifar_binary(paths, label_bytes=1, class_count=None, split="train"):
    """Read CIFAR binary batches.

    Each record is ``label_bytes`` label bytes followed by 1024 red,
    1024 green and 1024 blue bytes of a 32x32 image. ``label_bytes=1`` is
    the CIFAR-10 layout; ``label_bytes=2`` is CIFAR-100 (coarse, fine),
    of which the fine label is used.

    Parameters
    ----------
    paths : str or list of str
        Files are concatenated in the given order.
    """
    if isinstance(paths, str):
        paths = [paths]
    if label_bytes not in (1, 2):
        raise ValueError("label_bytes must be 1 or 2, got %r" % (label_bytes,))
    record = label_bytes + CIFAR_PIXELS
    images, labels = [], []
    for path in paths:
        data = _read_bytes(path)
        if not data:
            raise DatasetFormatError("%s: empty dataset (zero-length file)" % path)
        if len(data) % record:
            raise DatasetFormatError("%s: record length: %d bytes is not a multiple of %d"
                                     % (path, len(data), record))
        rows = np.frombuffer(data, dtype=np.uint8).reshape(-1, record)
        labels.append(rows[:, label_bytes - 1])
        images.append(rows[:, label_bytes:].reshape(-1, 3, 32, 32))
    if class_count is None:
        class_count = 10 if label_bytes == 1 else 100
    images = np.concatenate(images, axis=0)
    logger.info("Loaded %d CIFAR records from %d file(s)", images.shape[0], len(paths))
    return Dataset(images / np.float32(255), np.concatenate(labels), class_count, split)


def encode_cifar_records(images_u8, labels, coarse_labels=None):
    """CIFAR binary bytes for (n, 3, 32, 32) uint8 images.

    With ``coarse_labels`` the two-byte CIFAR-100 layout is produced."""
    images_u8 = np.asarray(images_u8, dtype=np.uint8).reshape(-1, CIFAR_PIXELS)
    columns = [np.asarray(labels, dtype=np.uint8)[:, None]]
    if coarse_labels is not None:
        columns.insert(0, np.asarray(coarse_labels, dtype=np.uint8)[:, None])
    return np.concatenate(columns + [images_u8], axis=1).tobytes()


def synth_blobs(class_count, per_class, dims, spread, seed, split="train"):
    """Seeded Gaussian clusters, one per class.

    Class centers are drawn uniformly in [0.25, 0.75]^dims from ``seed``
    alone, so the train and test splits share them; the samples of each
    split come from their own stream. Points are clipped to [0, 1].
    Smaller ``spread`` means better separated, easier classes.

    Returns
    -------
    Dataset
        Images shaped (class_count * per_class, 1, 1, dims), exactly
        ``per_class`` samples of every class.
    """
    if min(class_count, per_class, dims) < 1:
        raise ValueError("class_count, per_class and dims must be positive")
    if spread < 0:
        raise ValueError("spread must be >= 0, got %r" % (spread,))
    centers = np.random.default_rng([seed, 0]).uniform(0.25, 0.75, size=(class_count, dims))
    split_seed = np.random.SeedSequence([seed, 1 + SPLITS.index(split)]).generate_state(1)[0]
    x, y = make_blobs(n_samples=[per_class] * class_count, n_features=dims, centers=centers,
                      cluster_std=spread, shuffle=True, random_state=int(split_seed))
    x = np.clip(x, 0.0, 1.0).astype(np.float32)
    return Dataset(x.reshape(-1, 1, 1, dims), y, class_count, split)


@dataclass(frozen=True)
class AugmentPolicy:
    """``pad``: zero-pad then random-crop back to size (None = off).
    ``hflip``: per-image horizontal flip probability (None = off)."""

    pad: Optional[int] = None
    hflip: Optional[float] = None
    seed: int = 0

    def __post_init__(self):
        if self.pad is not None and self.pad < 0:
            raise ValueError("augment pad must be >= 0, got %r" % (self.pad,))
        if self.hflip is not None and not 0 <= self.hflip <= 1:
            raise ValueError("augment hflip probability must be in [0, 1], got %r" % (self.hflip,))

    @property
    def is_identity(self):
        return not self.pad and not self.hflip


def augment(batch, policy, epoch=0, batch_index=0):
    """Pad-and-crop then flip a batch of images.

    Crop offsets (drawn first, one (dy, dx) pair per image in
    [0, 2*pad]) and flip decisions (drawn second) come from a generator
    seeded with ``(policy.seed, epoch, batch_index)``.
    """
    images = np.asarray(batch)
    if images.ndim != 4:
        raise ValueError("augment expects (n, c, h, w) images, got %r" % (images.shape,))
    n, _, h, w = images.shape
    pad = policy.pad or 0
    if pad > h or pad > w:
        raise ValueError("augment pad %d larger than image extent %dx%d" % (pad, h, w))
    rng = np.random.default_rng([policy.seed, epoch, batch_index])
    out = images
    if pad:
        offsets = rng.integers(0, 2 * pad + 1, size=(n, 2))
        padded = np.pad(images, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
        out = np.stack([padded[k, :, dy:dy + h, dx:dx + w] for k, (dy, dx) in enumerate(offsets)])
    if policy.hflip is not None:
        flips = rng.random(n) < policy.hflip
        if flips.any():
            out = out.copy()
            out[flips] = out[flips][..., ::-1]
    return out


@dataclass(frozen=True)
class BatchPlan:
    batch_size: int
    order: np.ndarray
    epoch_seed: int

    def __len__(self):
        return -(-len(self.order) // self.batch_size)

    def batches(self):
        for start in range(0, len(self.order), self.batch_size):
            yield self.order[start:start + self.batch_size]


def make_batches(active_indices, batch_size, epoch_seed):
    """Seeded shuffle of the active indices cut into mini-batches; the
    last batch may be short. The order depends only on the index set and
    the seed, not on the order the indices were given in."""
    active = np.sort(np.asarray(active_indices, dtype=np.int64))
    if active.size == 0:
        raise ValueError("cannot batch an empty active index set")
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1, got %r" % (batch_size,))
    order = np.random.default_rng(epoch_seed).permutation(active)
    return BatchPlan(int(batch_size), order, epoch_seed)


def load_splits(data, seed):
    """Train/test ``DataSplits`` described by a ``config.DataConfig``."""
    if data.kind == "blobs":
        train = synth_blobs(data.class_count, data.per_class, data.dims, data.spread, seed, "train")
        test = synth_blobs(data.class_count, data.test_per_class, data.dims, data.spread, seed, "test")
    elif data.kind == "idx":
        train = load_idx(data.train_images, data.train_labels, data.class_count, "train")
        test = load_idx(data.test_images, data.test_labels, train.class_count, "test")
    elif data.kind == "cifar":
        train = load_cifar_binary(data.train_files, data.label_bytes, data.class_count, "train")
        test = load_cifar_binary(data.test_files, data.label_bytes, train.class_count, "test")
    else:
        raise ValueError("unknown data kind %r" % (data.kind,))
    if data.label_noise:
        noisy, flipped = add_label_noise(train.labels, train.class_count, data.label_noise, seed)
        logger.info("Label noise: reassigned %d of %d training labels", flipped.size, len(train))
        train = train.with_labels(noisy)
    return DataSplits(train, test)
