"""PNG read/write for channel-first float images."""
from __future__ import annotations

import os
from typing import Tuple

import cv2
import numpy as np

from .color import dequantize, quantize
from .errors import DataError


def read_png(path, bits: int | None = None) -> Tuple[np.ndarray, int]:
    """Decode an RGB PNG to a 3 x H x W float32 array in [0, 1] plus its bit depth.

    With ``bits`` given, any other depth is a :class:`DataError`.
    """
    path = os.fspath(path)
    if not os.path.isfile(path):
        raise DataError(f"{path}: no such file")
    raw = cv2.imread(path, cv2.IMREAD_UNCHANGED)
    if raw is None:
        raise DataError(f"{path}: not a readable PNG")
    if raw.ndim != 3 or raw.shape[2] != 3:
        raise DataError(f"{path}: expected 3-channel RGB, got shape {raw.shape}")
    if raw.dtype == np.uint8:
        depth = 8
    elif raw.dtype == np.uint16:
        depth = 16
    else:
        raise DataError(f"{path}: unsupported sample type {raw.dtype}")
    if bits is not None and depth != bits:
        raise DataError(f"{path}: expected {bits}-bit samples, got {depth}-bit")
    rgb = np.ascontiguousarray(raw[:, :, ::-1].transpose(2, 0, 1))
    return dequantize(rgb, depth), depth


def write_png(path, img: np.ndarray, bits: int) -> None:
    """Quantise a 3 x H x W image in [0, 1] and write it as an 8- or 16-bit RGB PNG."""
    img = np.asarray(img)
    if img.ndim != 3 or img.shape[0] != 3:
        raise ValueError(f"expected 3 x H x W, got {img.shape}")
    q = quantize(img, bits)
    bgr = np.ascontiguousarray(q[::-1].transpose(1, 2, 0))
    if not cv2.imwrite(os.fspath(path), bgr):
        raise DataError(f"{path}: could not write PNG")
