"""Paired SDR/HDR images: synthetic generation, directory loading and training batches."""
from __future__ import annotations

import os
import warnings
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np

from . import color
from .errors import DataError
from .imageio import read_png, write_png
from .model import condition_input

SDR_CLIP_PERCENTILE = 99.0


@dataclass
class PairedSample:
    sdr: np.ndarray  # 3 x H x W, BT.709 gamma-encoded
    hdr: np.ndarray  # 3 x H x W, BT.2020 PQ-encoded
    name: str = ""

    def __post_init__(self):
        self.sdr = color.ImagePlanar(self.sdr, color.SDR).data
        self.hdr = color.ImagePlanar(self.hdr, color.HDR).data
        if self.sdr.shape != self.hdr.shape:
            raise DataError(f"{self.name or 'pair'}: SDR {self.sdr.shape} and HDR {self.hdr.shape} differ in size")


def _smoothstep(t):
    t = np.clip(t, 0.0, 1.0)
    return t * t * (3.0 - 2.0 * t)


def synth_scene(rng: np.random.Generator, height: int, width: int) -> np.ndarray:
    """Linear BT.2020 radiance (1.0 = 10000 nits): a lit gradient, soft disks and specular spots."""
    yy, xx = np.mgrid[0:height, 0:width].astype(np.float64)
    yy /= max(height - 1, 1)
    xx /= max(width - 1, 1)

    def hue():
        c = rng.uniform(0.15, 1.0, 3)
        return c / c.max()

    theta = rng.uniform(0, 2 * np.pi)
    ramp = 0.5 + 0.5 * (np.cos(theta) * (xx - 0.5) + np.sin(theta) * (yy - 0.5)) * 1.4
    level = rng.uniform(5e-4, 3e-3)  # 5 - 30 nits
    scene = level * (0.3 + np.clip(ramp, 0.0, 1.0))[None] * hue()[:, None, None]

    for _ in range(rng.integers(3, 7)):
        cy, cx = rng.uniform(0, 1, 2)
        r = rng.uniform(0.08, 0.3)
        d = np.hypot(yy - cy, xx - cx) / r
        mask = 1.0 - _smoothstep((d - 0.8) / 0.4)
        scene = scene * (1 - mask) + mask * rng.uniform(1e-3, 2e-2) * hue()[:, None, None]

    for _ in range(rng.integers(1, 4)):
        cy, cx = rng.uniform(0.1, 0.9, 2)
        s = rng.uniform(0.02, 0.05)
        spot = np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (2 * s * s))
        tint = 0.85 + 0.15 * hue()
        scene = scene + rng.uniform(0.03, 0.1) * spot[None] * tint[:, None, None]
    return np.clip(scene, 0.0, 1.0)


def degrade(scene: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """(SDR, HDR) renderings of a linear BT.2020 scene, both quantised and back in [0, 1].

    HDR: PQ encode, 16-bit. SDR: expose so the 99th-percentile luminance is
    white, convert to BT.709 (clamping), gamma encode, 8-bit.
    """
    hdr = color.dequantize(color.quantize(color.pq_oetf(scene), 16), 16)
    white = float(np.percentile(color.luma(scene), SDR_CLIP_PERCENTILE))
    lin709 = color.gamut_2020_to_709(scene / max(white, 1e-12))
    sdr = color.dequantize(color.quantize(color.gamma709_encode(lin709), 8), 8)
    return sdr, hdr


def synth_pair(seed: int, height: int, width: int) -> PairedSample:
    rng = np.random.default_rng(seed)
    sdr, hdr = degrade(synth_scene(rng, height, width))
    return PairedSample(sdr, hdr, f"synth_{seed:05d}")


def synth_dataset(count: int, size: int, seed: int = 0) -> List[PairedSample]:
    return [synth_pair(seed * 1_000_003 + i, size, size) for i in range(count)]


def write_dataset(samples: Sequence[PairedSample], root) -> None:
    os.makedirs(os.path.join(root, "sdr"), exist_ok=True)
    os.makedirs(os.path.join(root, "hdr"), exist_ok=True)
    for s in samples:
        write_png(os.path.join(root, "sdr", s.name + ".png"), s.sdr, 8)
        write_png(os.path.join(root, "hdr", s.name + ".png"), s.hdr, 16)


def load_pairs(root) -> List[PairedSample]:
    """Read ``root/sdr/*.png`` (8-bit) and the same file names under ``root/hdr`` (16-bit)."""
    sdr_dir, hdr_dir = os.path.join(root, "sdr"), os.path.join(root, "hdr")
    for d in (sdr_dir, hdr_dir):
        if not os.path.isdir(d):
            raise DataError(f"{d}: missing directory")
    names = sorted(f for f in os.listdir(sdr_dir) if f.lower().endswith(".png"))
    if not names:
        raise DataError(f"{sdr_dir}: no PNG files")
    hdr_names = {f for f in os.listdir(hdr_dir) if f.lower().endswith(".png")}
    missing = [n for n in names if n not in hdr_names]
    if missing:
        raise DataError(f"{hdr_dir}: no HDR counterpart for {', '.join(missing[:5])}")
    out = []
    for n in names:
        sdr, _ = read_png(os.path.join(sdr_dir, n), bits=8)
        hdr, _ = read_png(os.path.join(hdr_dir, n), bits=16)
        out.append(PairedSample(sdr, hdr, os.path.splitext(n)[0]))
    return out


@dataclass
class PairedDataset:
    samples: List[PairedSample]
    cond_downscale: int = 4
    _cond: List[np.ndarray] = field(default_factory=list, repr=False)

    def __post_init__(self):
        if not self.samples:
            raise DataError("empty dataset")
        self._cond = [condition_input(s.sdr, self.cond_downscale) for s in self.samples]

    def __len__(self):
        return len(self.samples)

    def condition(self, i: int) -> np.ndarray:
        return self._cond[i]


def _pad_to(img: np.ndarray, crop: int) -> np.ndarray:
    h, w = img.shape[1:]
    return np.pad(img, ((0, 0), (0, max(0, crop - h)), (0, max(0, crop - w))), mode="edge")


def make_batch(dataset: PairedDataset, batch: int, crop: int, rng: np.random.Generator):
    """(SDR crops N x 3 x crop x crop, condition inputs, HDR crops) with SDR/HDR crops co-located.

    Condition inputs are stacked into one array when they share a size and
    returned as a list otherwise.
    """
    if batch < 1:
        raise ValueError(f"batch must be >= 1, got {batch}")
    idx = rng.integers(0, len(dataset), size=batch)
    sdr_out = np.empty((batch, 3, crop, crop), np.float32)
    hdr_out = np.empty_like(sdr_out)
    conds = []
    for k, i in enumerate(idx):
        s = dataset.samples[i]
        sdr, hdr = s.sdr, s.hdr
        h, w = sdr.shape[1:]
        if h < crop or w < crop:
            warnings.warn(f"{s.name}: {h}x{w} is smaller than crop {crop}; replicating edges", stacklevel=2)
            sdr, hdr = _pad_to(sdr, crop), _pad_to(hdr, crop)
            h, w = sdr.shape[1:]
        y = int(rng.integers(0, h - crop + 1))
        x = int(rng.integers(0, w - crop + 1))
        sdr_out[k] = sdr[:, y:y + crop, x:x + crop]
        hdr_out[k] = hdr[:, y:y + crop, x:x + crop]
        conds.append(dataset.condition(int(i)))
    if len({c.shape for c in conds}) == 1:
        conds = np.stack(conds)
    return sdr_out, conds, hdr_out
