"""Input checks shared by the estimator and the command line."""
from __future__ import annotations

from typing import List, Sequence, Union

import numpy as np

from .errors import DataError

ImageBatch = Union[np.ndarray, Sequence[np.ndarray]]


def check_image(img, name: str = "image") -> np.ndarray:
    """Return ``img`` as a contiguous float32 3 x H x W array in [0, 1]."""
    arr = np.asarray(img)
    if arr.ndim != 3 or arr.shape[0] != 3:
        raise DataError(f"{name}: expected shape 3 x H x W, got {arr.shape}")
    if not np.issubdtype(arr.dtype, np.number):
        raise DataError(f"{name}: expected numeric data, got {arr.dtype}")
    arr = np.ascontiguousarray(arr, dtype=np.float32)
    if not np.all(np.isfinite(arr)):
        raise DataError(f"{name}: contains NaN or Inf")
    if arr.size and (arr.min() < 0.0 or arr.max() > 1.0):
        raise DataError(f"{name}: values must lie in [0, 1], got [{arr.min():.4g}, {arr.max():.4g}]")
    return arr


def check_images(X: ImageBatch, name: str = "X") -> List[np.ndarray]:
    """Accept an N x 3 x H x W array or a sequence of 3 x H x W arrays."""
    if isinstance(X, np.ndarray) and X.ndim == 4:
        items = list(X)
    elif isinstance(X, np.ndarray) and X.ndim == 3:
        raise DataError(f"{name}: got a single image; wrap it in a list or add a batch axis")
    else:
        items = list(X)
    if not items:
        raise DataError(f"{name}: no images")
    return [check_image(x, f"{name}[{i}]") for i, x in enumerate(items)]


def check_pairs(X: ImageBatch, y: ImageBatch):
    xs, ys = check_images(X, "X"), check_images(y, "y")
    if len(xs) != len(ys):
        raise DataError(f"X has {len(xs)} images but y has {len(ys)}")
    for i, (a, b) in enumerate(zip(xs, ys)):
        if a.shape != b.shape:
            raise DataError(f"pair {i}: X {a.shape} and y {b.shape} differ in size")
    return xs, ys
