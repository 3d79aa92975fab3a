# -*- coding: utf-8 -*-

import numpy as np


def one_hot(labels, class_count):
    """(n,) integer class ids -> (n, class_count) float64 one-hot rows."""
    labels = np.asarray(labels, dtype=np.int64)
    if labels.size and (labels.min() < 0 or labels.max() >= class_count):
        raise ValueError("labels must lie in [0, %d)" % class_count)
    out = np.zeros((labels.shape[0], class_count), dtype=np.float64)
    out[np.arange(labels.shape[0]), labels] = 1.0
    return out


def add_label_noise(labels, class_count, fraction, seed):
    """Reassign a seeded ``fraction`` of the labels to a different class.

    Exactly ``round(fraction * n)`` samples are corrupted; each gets a
    class drawn uniformly from the other ``class_count - 1`` classes.

    Returns
    -------
    (np.ndarray, np.ndarray)
        The noisy labels and the sorted indices that were changed.
    """
    if not 0 <= fraction <= 1:
        raise ValueError("label noise fraction must be in [0, 1], got %r" % (fraction,))
    labels = np.asarray(labels, dtype=np.int64).copy()
    if class_count < 2 or fraction == 0:
        return labels, np.zeros(0, dtype=np.int64)
    rng = np.random.default_rng([seed, 0x6E6F])
    count = int(round(fraction * labels.shape[0]))
    flipped = np.sort(rng.choice(labels.shape[0], size=count, replace=False))
    shift = rng.integers(1, class_count, size=count)
    labels[flipped] = (labels[flipped] + shift) % class_count
    return labels, flipped
