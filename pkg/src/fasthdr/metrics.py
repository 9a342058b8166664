"""Image quality metrics for PQ-encoded BT.2020 images and the report they are collected in.

PSNR, SSIM and SR-SIM compare the encoded [0, 1] values directly; the
colour difference decodes PQ to linear light first.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from typing import List, Optional, Tuple

import cv2
import numpy as np
from scipy import ndimage

from . import color

PSNR_CAP = 99.0

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_C1 = 0.01 ** 2
SSIM_C2 = 0.03 ** 2

# spectral-residual similarity, constants rescaled to the [0, 1] domain
SRSIM_C1 = 0.40
SRSIM_C2 = 225.0 / 255.0 ** 2
SRSIM_ALPHA = 0.5
SRSIM_SALIENCY_SIDE = 64
SRSIM_MEAN_SIZE = 3
SRSIM_BLUR_SIGMA = 3.8
SRSIM_BLUR_SIZE = 11
SRSIM_MIN_SIDE = 16
SCHARR = np.array([[3.0, 0.0, -3.0], [10.0, 0.0, -10.0], [3.0, 0.0, -3.0]]) / 16.0

_EPS = np.finfo(np.float64).eps


def _pair(a, b) -> Tuple[np.ndarray, np.ndarray]:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"images differ in shape: {a.shape} vs {b.shape}")
    if not (np.all(np.isfinite(a)) and np.all(np.isfinite(b))):
        raise ValueError("images hold non-finite values")
    return a, b


def _gray(img: np.ndarray) -> np.ndarray:
    if img.ndim == 2:
        return img
    if img.ndim == 3 and img.shape[0] == 3:
        return color.luma(img)
    raise ValueError(f"expected H x W or 3 x H x W, got {img.shape}")


def psnr_detail(a, b, peak: float = 1.0) -> Tuple[float, bool]:
    """(PSNR in dB, identical flag). Identical images report ``PSNR_CAP``."""
    a, b = _pair(a, b)
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return PSNR_CAP, True
    return min(PSNR_CAP, 10.0 * math.log10(peak * peak / mse)), False


def psnr(a, b, peak: float = 1.0) -> float:
    return psnr_detail(a, b, peak)[0]


def gaussian_kernel(size: int, sigma: float) -> np.ndarray:
    r = (size - 1) / 2.0
    x = np.arange(size) - r
    k = np.exp(-(x ** 2) / (2.0 * sigma ** 2))
    return k / k.sum()


def _filter_valid(img: np.ndarray, k: np.ndarray) -> np.ndarray:
    r = len(k) // 2
    out = ndimage.correlate1d(img, k, axis=0, mode="nearest")
    out = ndimage.correlate1d(out, k, axis=1, mode="nearest")
    return out[r:img.shape[0] - r, r:img.shape[1] - r]


def ssim_map(a, b) -> np.ndarray:
    a, b = _pair(a, b)
    x, y = _gray(a), _gray(b)
    if min(x.shape) < SSIM_WINDOW:
        raise ValueError(f"SSIM needs at least {SSIM_WINDOW}x{SSIM_WINDOW} pixels, got {x.shape}")
    k = gaussian_kernel(SSIM_WINDOW, SSIM_SIGMA)
    mx, my = _filter_valid(x, k), _filter_valid(y, k)
    sxx = _filter_valid(x * x, k) - mx * mx
    syy = _filter_valid(y * y, k) - my * my
    sxy = _filter_valid(x * y, k) - mx * my
    num = (2 * mx * my + SSIM_C1) * (2 * sxy + SSIM_C2)
    den = (mx * mx + my * my + SSIM_C1) * (sxx + syy + SSIM_C2)
    return num / den


def ssim(a, b) -> float:
    """Mean local SSIM of BT.2020 luma with an 11x11 Gaussian window (valid region only)."""
    a, b = _pair(a, b)
    if np.array_equal(a, b):
        return 1.0
    return float(np.mean(ssim_map(a, b)))


def _resize(img: np.ndarray, h: int, w: int, interpolation=cv2.INTER_LINEAR) -> np.ndarray:
    return cv2.resize(img, (w, h), interpolation=interpolation)


def spectral_saliency(y: np.ndarray) -> np.ndarray:
    """Spectral-residual saliency of a 2-D image, in [0, 1] and at the input size."""
    y = np.asarray(y, dtype=np.float64)
    h, w = y.shape
    scale = min(h, w) / SRSIM_SALIENCY_SIDE
    small = y
    if scale > 1.0:
        small = _resize(y, max(1, round(h / scale)), max(1, round(w / scale)), cv2.INTER_AREA)
    if np.ptp(small) <= _EPS:
        # no spectral structure at all: every location is equally salient
        return np.ones((h, w))
    sh, sw = small.shape
    padded = np.zeros((sh + sh % 2, sw + sw % 2))
    padded[:sh, :sw] = small
    spectrum = np.fft.rfft2(padded)
    log_amp = np.log(np.abs(spectrum) + _EPS)
    residual = log_amp - ndimage.uniform_filter(log_amp, SRSIM_MEAN_SIZE, mode="nearest")
    sal = np.fft.irfft2(np.exp(residual + 1j * np.angle(spectrum)), s=padded.shape) ** 2
    k = gaussian_kernel(SRSIM_BLUR_SIZE, SRSIM_BLUR_SIGMA)
    sal = ndimage.correlate1d(sal, k, axis=0, mode="nearest")
    sal = ndimage.correlate1d(sal, k, axis=1, mode="nearest")[:sh, :sw]
    lo, hi = sal.min(), sal.max()
    sal = np.ones_like(sal) if hi - lo <= _EPS * max(1.0, abs(hi)) else (sal - lo) / (hi - lo)
    if sal.shape != (h, w):
        sal = _resize(sal, h, w)
    return sal


def gradient_magnitude(y: np.ndarray) -> np.ndarray:
    y = np.asarray(y, dtype=np.float64)
    gx = ndimage.correlate(y, SCHARR, mode="nearest")
    gy = ndimage.correlate(y, SCHARR.T, mode="nearest")
    return np.sqrt(gx * gx + gy * gy)


def srsim(a, b) -> float:
    """Spectral-residual similarity of BT.2020 luma; 1.0 for identical inputs."""
    a, b = _pair(a, b)
    x, y = _gray(a), _gray(b)
    if min(x.shape) < SRSIM_MIN_SIDE:
        raise ValueError(f"SR-SIM needs at least {SRSIM_MIN_SIDE}x{SRSIM_MIN_SIDE} pixels, got {x.shape}")
    s1, s2 = spectral_saliency(x), spectral_saliency(y)
    g1, g2 = gradient_magnitude(x), gradient_magnitude(y)
    s_vs = (2 * s1 * s2 + SRSIM_C1) / (s1 * s1 + s2 * s2 + SRSIM_C1)
    s_g = (2 * g1 * g2 + SRSIM_C2) / (g1 * g1 + g2 * g2 + SRSIM_C2)
    weight = np.maximum(s1, s2)
    return float(np.sum(s_vs * s_g ** SRSIM_ALPHA * weight) / np.sum(weight))


def delta_e_itp_map(a, b) -> np.ndarray:
    a, b = _pair(a, b)
    if a.shape[0] != 3:
        raise ValueError(f"colour difference needs 3 x H x W images, got {a.shape}")
    ia = color.rgb2020_to_ictcp(color.pq_eotf(a))
    ib = color.rgb2020_to_ictcp(color.pq_eotf(b))
    return color.DELTA_E_ITP_SCALE * np.sqrt(np.sum((ia - ib) ** 2, axis=0))


def delta_e_itp(a, b) -> float:
    """Mean per-pixel colour difference of two PQ-encoded BT.2020 images."""
    return float(np.mean(delta_e_itp_map(a, b)))


@dataclass
class ImageScores:
    name: str
    psnr: float
    ssim: float
    srsim: float
    delta_e_itp: float
    identical: bool = False


def score_pair(name: str, pred, ref) -> ImageScores:
    p, identical = psnr_detail(pred, ref)
    return ImageScores(name, p, ssim(pred, ref), srsim(pred, ref), delta_e_itp(pred, ref), identical)


@dataclass
class MetricReport:
    images: List[ImageScores] = field(default_factory=list)
    macs: Optional[int] = None
    params: Optional[int] = None
    time_s: Optional[float] = None

    def add(self, scores: ImageScores):
        self.images.append(scores)

    def means(self) -> dict:
        if not self.images:
            return {}
        keys = ("psnr", "ssim", "srsim", "delta_e_itp")
        return {k: float(np.mean([getattr(s, k) for s in self.images])) for k in keys}

    def to_text(self) -> str:
        lines = [f"{'name':<32} {'PSNR':>8} {'SSIM':>8} {'SR-SIM':>8} {'dE_ITP':>8}"]
        for s in self.images:
            flag = " (identical)" if s.identical else ""
            lines.append(f"{s.name:<32} {s.psnr:8.3f} {s.ssim:8.5f} {s.srsim:8.5f} {s.delta_e_itp:8.4f}{flag}")
        m = self.means()
        if m:
            lines.append(f"{'mean':<32} {m['psnr']:8.3f} {m['ssim']:8.5f} {m['srsim']:8.5f} {m['delta_e_itp']:8.4f}")
        for key in ("macs", "params", "time_s"):
            value = getattr(self, key)
            if value is not None:
                lines.append(f"{key}: {value}")
        return "\n".join(lines) + "\n"

    def to_dict(self) -> dict:
        return {"images": [asdict(s) for s in self.images],
                "aggregate": {"count": len(self.images), **self.means(),
                              "macs": self.macs, "params": self.params, "time_s": self.time_s}}

    def write(self, path_text, path_json):
        with open(path_text, "w", encoding="utf-8") as f:
            f.write(self.to_text())
        with open(path_json, "w", encoding="utf-8") as f:
            json.dump(self.to_dict(), f, indent=2)
