# -*- coding: utf-8 -*-

import hashlib
import json
import os
import tempfile

import numpy as np
from tqdm import tqdm


def sha256_hex(data):
    """Hex SHA-256 of bytes (or of UTF-8 text)."""
    if isinstance(data, str):
        data = data.encode("utf-8")
    return hashlib.sha256(data).hexdigest()


def canonical_json(obj):
    """Key-sorted, whitespace-free JSON, so equal objects give equal bytes."""
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=True)


def atomic_write_bytes(path, data):
    """Write to a temporary file in the target directory, then rename over
    ``path``; readers never see a partial file."""
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=".tmp-", dir=directory)
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_text(path, text):
    atomic_write_bytes(path, text.encode("utf-8"))


def median(values):
    """Median of a non-empty sequence (mean of the two middle elements
    for even lengths)."""
    values = list(values)
    if not values:
        raise ValueError("median of an empty sequence")
    return float(np.median(np.asarray(values, dtype=np.float64)))


def progress(iterable, enabled=False, **kwargs):
    """Wrap ``iterable`` in a tqdm bar on stderr when ``enabled``."""
    return tqdm(iterable, disable=not enabled, leave=False, **kwargs)
