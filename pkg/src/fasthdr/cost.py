"""Analytic multiply-accumulate counts, parameter counts and wall-clock benchmarking."""
from __future__ import annotations

import statistics
import time
from dataclasses import dataclass
from typing import List, NamedTuple, Optional

import numpy as np

from .le import LE_STRIDE
from .model import ModelConfig, Pipeline, predict_image
from .nn import Module


class LayerCost(NamedTuple):
    name: str
    cout: int
    cin: int
    k: int
    h_out: int
    w_out: int

    @property
    def macs(self) -> int:
        return self.cout * self.cin * self.k * self.k * self.h_out * self.w_out


def _half(n: int) -> int:
    return (n + 1) // 2


def layer_costs(cfg: ModelConfig, height: int, width: int, stage: str = "full") -> List[LayerCost]:
    """Every convolution the pipeline runs on a ``height`` x ``width`` image, with its output size."""
    a = cfg.auct
    out: List[LayerCost] = []
    chans = a.layer_channels
    for i in range(len(chans) - 1):
        out.append(LayerCost(f"auct.base.conv{i}", chans[i + 1], chans[i], 1, height, width))

    h, w = max(1, height // a.cond_downscale), max(1, width // a.cond_downscale)
    cc = a.cond_channels
    ch, cw = h, w
    for i in range(a.n_blocks):
        out.append(LayerCost(f"auct.cond.pool_path{i}.conv", cc, 3 if i == 0 else cc, 1, ch, cw))
        ch, cw = _half(ch), _half(cw)
    fh, fw = h, w
    for i in range(a.n_blocks):
        fh, fw = _half(fh), _half(fw)
        out.append(LayerCost(f"auct.cond.conv_path{i}.conv", cc, 3 if i == 0 else cc, 3, fh, fw))
    out.append(LayerCost("auct.cond.fuse_in", a.cond_vector_dim, 2 * cc, 1, ch, cw))
    out.append(LayerCost("auct.cond.fuse_out", a.cond_vector_dim, a.cond_vector_dim, 1, ch, cw))
    for i, c in enumerate(chans[1:]):
        out.append(LayerCost(f"auct.heads.scale{i}", c, a.cond_vector_dim, 1, 1, 1))
        out.append(LayerCost(f"auct.heads.shift{i}", c, a.cond_vector_dim, 1, 1, 1))

    if stage == "full" and cfg.use_le:
        c = cfg.le.width
        hp, wp = -(-height // LE_STRIDE) * LE_STRIDE, -(-width // LE_STRIDE) * LE_STRIDE
        s1, s2, s4 = (hp, wp), (hp // 2, wp // 2), (hp // 4, wp // 4)
        table = [
            ("head", c, 3, s1), ("enc1", 2 * c, c, s2), ("enc2", 4 * c, 2 * c, s4), ("mid", 4 * c, 4 * c, s4),
            ("up2", 2 * c, 4 * c, s2), ("dec2", 2 * c, 4 * c, s2), ("up1", c, 2 * c, s1), ("dec1", c, 2 * c, s1),
            ("tail", 3, c, s1),
            ("cond.stage1", c, 3, s1), ("cond.stage2", 2 * c, c, s2), ("cond.stage3", 4 * c, 2 * c, s4),
            ("cond.head1.m", c, c, s1), ("cond.head1.n", c, c, s1),
            ("cond.head2.m", 2 * c, 2 * c, s2), ("cond.head2.n", 2 * c, 2 * c, s2),
            ("cond.head3.m", 4 * c, 4 * c, s4), ("cond.head3.n", 4 * c, 4 * c, s4),
        ]
        out.extend(LayerCost(f"le.{name}", co, ci, 3, *size) for name, co, ci, size in table)
    return out


def count_macs(cfg: ModelConfig, height: int, width: int, stage: str = "full") -> int:
    return sum(layer.macs for layer in layer_costs(cfg, height, width, stage))


def count_params(model: Module) -> int:
    return model.num_parameters()


@dataclass
class BenchResult:
    height: int
    width: int
    runs: int
    times: List[float]
    tile: Optional[int]
    workers: int

    @property
    def median(self) -> float:
        return statistics.median(self.times)


def bench_inference(model: Pipeline, height: int, width: int, runs: int = 3, tile: Optional[int] = None,
                    halo: Optional[int] = None, workers: int = 1, warmup: int = 2, seed: int = 0,
                    stage: str = "full") -> BenchResult:
    """Median wall-clock of ``runs`` forward passes on a random image after ``warmup`` passes."""
    if runs < 1:
        raise ValueError(f"runs must be >= 1, got {runs}")
    img = np.random.default_rng(seed).random((3, height, width), dtype=np.float32)
    for _ in range(warmup):
        predict_image(model, img, stage=stage, tile=tile, halo=halo, workers=workers)
    times = []
    for _ in range(runs):
        t0 = time.perf_counter()
        predict_image(model, img, stage=stage, tile=tile, halo=halo, workers=workers)
        times.append(time.perf_counter() - t0)
    return BenchResult(height, width, runs, times, tile, workers)
