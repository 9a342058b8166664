"""The full SDR -> HDR pipeline, its configuration, and tiled inference."""
from __future__ import annotations

import os
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, fields
from typing import Dict, List, Optional, Sequence, Union

import cv2
import numpy as np

from . import ops
from .auct import AUCT, AuctConfig
from .autograd import Tensor, as_tensor, no_grad
from .le import LE_RECEPTIVE_RADIUS, LE_STRIDE, LeConfig, LENet
from .nn import Module

STAGES = ("auct", "full")
# pixels per block when the 1x1 network runs over a whole image
BASE_BLOCK_PIXELS = 1 << 13


@dataclass(frozen=True)
class ModelConfig:
    auct: AuctConfig = field(default_factory=AuctConfig)
    le: LeConfig = field(default_factory=LeConfig)
    use_le: bool = True

    def to_dict(self) -> Dict[str, object]:
        """Flat ``section.key -> value`` view."""
        out: Dict[str, object] = {"use_le": self.use_le}
        out.update({f"auct.{k}": v for k, v in self.auct.to_dict().items()})
        out.update({f"le.{k}": v for k, v in self.le.to_dict().items()})
        return out

    @classmethod
    def from_dict(cls, flat: Dict[str, object]) -> "ModelConfig":
        sections = {"auct": {}, "le": {}}
        use_le = True
        known = {"auct": {f.name: f.type for f in fields(AuctConfig)},
                 "le": {f.name: f.type for f in fields(LeConfig)}}
        for key, value in flat.items():
            if key == "use_le":
                use_le = _coerce(value, "bool")
                continue
            section, _, name = key.partition(".")
            if section not in known or name not in known[section]:
                raise KeyError(f"unknown model config key {key!r}")
            sections[section][name] = _coerce(value, known[section][name])
        return cls(AuctConfig(**sections["auct"]), LeConfig(**sections["le"]), use_le)


def _coerce(value, type_name):
    type_name = getattr(type_name, "__name__", type_name)
    if type_name == "bool":
        if isinstance(value, str):
            if value.lower() in ("1", "true", "yes", "on"):
                return True
            if value.lower() in ("0", "false", "no", "off"):
                return False
            raise ValueError(f"not a boolean: {value!r}")
        return bool(value)
    if type_name == "int":
        return int(value)
    if type_name == "float":
        return float(value)
    return value


class Pipeline(Module):
    """AUCT followed (optionally) by LE. Outputs are unclamped; clamp at the API boundary."""

    def __init__(self, cfg: ModelConfig = ModelConfig()):
        super().__init__()
        self.cfg = cfg
        self.auct = self.add_module("auct", AUCT(cfg.auct))
        self.le = self.add_module("le", LENet(cfg.le)) if cfg.use_le else None

    def condition(self, cond_input: Union[Tensor, np.ndarray, Sequence], dropout_seed: Optional[int] = None):
        """Condition vectors for a batch; a list of differently sized inputs is handled one by one."""
        if isinstance(cond_input, (list, tuple)):
            shapes = {tuple(np.shape(getattr(c, "data", c))) for c in cond_input}
            if len(shapes) == 1:
                cond_input = np.stack([getattr(c, "data", c) for c in cond_input])
            else:
                vs = [self.auct.condition(as_tensor(np.asarray(getattr(c, "data", c))[None]),
                                          None if dropout_seed is None else dropout_seed + i)
                      for i, c in enumerate(cond_input)]
                return ops.concat(vs, axis=0)
        return self.auct.condition(as_tensor(cond_input), dropout_seed)

    def __call__(self, m_s, cond_input, stage: str = "full", dropout_seed: Optional[int] = None) -> Tensor:
        if stage not in STAGES:
            raise ValueError(f"stage must be one of {STAGES}, got {stage!r}")
        v = self.condition(cond_input, dropout_seed)
        y = self.auct.base(as_tensor(m_s), self.auct.modulation(v))
        if stage == "full" and self.le is not None:
            y = self.le(y)
        return y


def build_model(cfg: ModelConfig = ModelConfig(), seed: int = 0) -> Pipeline:
    model = Pipeline(cfg)
    model.reset_parameters(seed)
    return model


def condition_input(img: np.ndarray, factor: int = 4) -> np.ndarray:
    """Bilinear downscale of a 3 x H x W image by ``factor`` (each side at least 1)."""
    img = np.asarray(img, dtype=np.float32)
    h, w = img.shape[-2:]
    size = (max(1, w // factor), max(1, h // factor))
    return resize_bilinear(img, size[1], size[0])


def resize_bilinear(img: np.ndarray, height: int, width: int) -> np.ndarray:
    """Half-pixel-centred bilinear resize of a C x H x W array."""
    img = np.asarray(img)
    hwc = np.ascontiguousarray(np.moveaxis(img, 0, -1))
    out = cv2.resize(hwc, (width, height), interpolation=cv2.INTER_LINEAR)
    if out.ndim == 2:
        out = out[..., None]
    return np.ascontiguousarray(np.moveaxis(out, -1, 0))


def default_threads() -> int:
    env = os.environ.get("FASTHDR_THREADS")
    if env:
        try:
            n = int(env)
        except ValueError:
            raise ValueError(f"FASTHDR_THREADS must be a positive integer, got {env!r}") from None
        if n < 1:
            raise ValueError(f"FASTHDR_THREADS must be a positive integer, got {env!r}")
        return n
    return os.cpu_count() or 1


def _tiles(h: int, w: int, tile: int):
    for y in range(0, h, tile):
        for x in range(0, w, tile):
            yield y, x, min(y + tile, h), min(x + tile, w)


def _run(jobs, workers: int):
    # more threads than cores only adds switching and cache pressure
    workers = min(workers, os.cpu_count() or 1, len(jobs))
    if workers <= 1:
        for job in jobs:
            job()
        return
    def guarded(job):
        # grad mode is thread-local; workers must not record graphs
        with no_grad():
            job()

    with ThreadPoolExecutor(max_workers=workers) as pool:
        for f in [pool.submit(guarded, job) for job in jobs]:
            f.result()


def _base_region(model: Pipeline, gfm, img: np.ndarray, out: np.ndarray, y0, x0, y1, x1):
    region = Tensor(np.ascontiguousarray(img[:, y0:y1, x0:x1]))
    out[:, y0:y1, x0:x1] = model.auct.base(region, gfm).data


def predict_image(model: Pipeline, sdr: np.ndarray, stage: str = "full", tile: Optional[int] = None,
                  halo: Optional[int] = None, workers: Optional[int] = None,
                  cond: Optional[np.ndarray] = None, clamp: bool = True) -> np.ndarray:
    """Run the pipeline on one 3 x H x W image in [0, 1] without recording a graph.

    With ``tile`` set, the 1x1 network runs per tile with no overlap and LE
    runs per tile with a ``halo`` border (default: receptive radius rounded up
    to a multiple of 4). Tile and halo are rounded up to multiples of 4 so
    every tile sits on the encoder's stride grid.
    """
    if stage not in STAGES:
        raise ValueError(f"stage must be one of {STAGES}, got {stage!r}")
    sdr = np.ascontiguousarray(sdr, dtype=np.float32)
    if sdr.ndim != 3 or sdr.shape[0] != 3:
        raise ops.ShapeError(f"expected a 3 x H x W image, got {sdr.shape}")
    workers = default_threads() if workers is None else max(1, int(workers))
    run_le = stage == "full" and model.le is not None
    h, w = sdr.shape[1:]
    if run_le and (h < LE_STRIDE or w < LE_STRIDE):
        raise ops.ShapeError(f"local enhancement needs an image of at least {LE_STRIDE}x{LE_STRIDE}, got {h}x{w}")
    if tile is not None:
        if tile < 1:
            raise ValueError(f"tile must be positive, got {tile}")
        tile = -(-tile // LE_STRIDE) * LE_STRIDE
    was_training = model.training
    model.eval()
    try:
        with no_grad():
            if cond is None:
                cond = condition_input(sdr, model.cfg.auct.cond_downscale)
            gfm = model.auct.modulation(model.auct.condition(Tensor(cond)))
            mid = np.empty_like(sdr)
            if tile is None:
                rows = max(1, BASE_BLOCK_PIXELS // w)
                jobs = [lambda y=y: _base_region(model, gfm, sdr, mid, y, 0, min(y + rows, h), w)
                        for y in range(0, h, rows)]
                _run(jobs, 1)
            else:
                jobs = [lambda t=t: _base_region(model, gfm, sdr, mid, *t) for t in _tiles(h, w, tile)]
                _run(jobs, workers)
            out = _le_image(model, mid, tile, halo, workers) if run_le else mid
    finally:
        model.train(was_training)
    return np.clip(out, 0.0, 1.0) if clamp else out


def _le_image(model: Pipeline, mid: np.ndarray, tile: Optional[int], halo: Optional[int], workers: int):
    h, w = mid.shape[1:]
    ph, pw = -h % LE_STRIDE, -w % LE_STRIDE
    padded = np.pad(mid, ((0, 0), (0, ph), (0, pw)), mode="edge") if (ph or pw) else mid
    if tile is None:
        return model.le.core(Tensor(padded)).data[:, :h, :w]
    if halo is None:
        halo = LE_RECEPTIVE_RADIUS
    if halo < LE_RECEPTIVE_RADIUS:
        warnings.warn(f"halo {halo} is below the receptive radius {LE_RECEPTIVE_RADIUS}; tiles will not match "
                      "untiled output", stacklevel=3)
    halo = -(-halo // LE_STRIDE) * LE_STRIDE
    hp, wp = padded.shape[1:]
    out = np.empty_like(padded)

    def job(y0, x0, y1, x1):
        ry0, rx0 = max(0, y0 - halo), max(0, x0 - halo)
        ry1, rx1 = min(hp, y1 + halo), min(wp, x1 + halo)
        res = model.le.core(Tensor(np.ascontiguousarray(padded[:, ry0:ry1, rx0:rx1]))).data
        out[:, y0:y1, x0:x1] = res[:, y0 - ry0:y1 - ry0, x0 - rx0:x1 - rx0]

    _run([lambda t=t: job(*t) for t in _tiles(hp, wp, tile)], workers)
    return out[:, :h, :w]
