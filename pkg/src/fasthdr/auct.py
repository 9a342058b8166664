"""Global colour transform: a per-pixel 1x1 network modulated by an image-level condition vector."""
from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import List, Optional, Tuple

import numpy as np

from . import ops
from .autograd import Tensor, as_tensor
from .init import init_param
from .nn import Conv1x1, Conv3x3, Module


@dataclass(frozen=True)
class AuctConfig:
    n_layers: int = 3
    base_channels: int = 128
    n_blocks: int = 4
    cond_channels: int = 32
    cond_vector_dim: int = 128
    cond_downscale: int = 4
    gf_radius: int = 4
    gf_eps: float = 1e-2
    dropout: float = 0.2

    def __post_init__(self):
        for name in ("n_layers", "base_channels", "n_blocks", "cond_channels", "cond_vector_dim",
                     "cond_downscale", "gf_radius"):
            if getattr(self, name) < 1:
                raise ValueError(f"AuctConfig.{name} must be positive, got {getattr(self, name)}")
        if self.n_layers < 2:
            raise ValueError(f"AuctConfig.n_layers must be >= 2, got {self.n_layers}")
        if self.gf_eps <= 0:
            raise ValueError("AuctConfig.gf_eps must be positive")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("AuctConfig.dropout must lie in [0, 1)")

    @property
    def layer_channels(self) -> List[int]:
        return [3] + [self.base_channels] * (self.n_layers - 1) + [3]

    @property
    def min_condition_size(self) -> int:
        return max(2 ** self.n_blocks, self.gf_radius + 1)

    def to_dict(self) -> dict:
        return asdict(self)


def guided_filter(p, radius: int = 4, eps: float = 1e-2, guide=None) -> Tensor:
    """Edge-preserving smoothing of ``p`` by local linear models of ``guide`` (``p`` itself by default).

    Box means use replicate edges. A single-channel guide is shared by all
    channels of ``p``; otherwise each channel is guided by its own counterpart.
    """
    p = as_tensor(p)
    guide = p if guide is None else as_tensor(guide)
    h, w = p.shape[-2:]
    if radius >= min(h, w):
        raise ops.ShapeError(f"guided filter radius {radius} needs an image larger than {radius}, got {h}x{w}")
    box = lambda t: ops.box_filter(t, radius)  # noqa: E731
    mean_i = box(guide)
    mean_p = box(p)
    var_i = ops.sub(box(ops.mul(guide, guide)), ops.mul(mean_i, mean_i))
    cov_ip = ops.sub(box(ops.mul(guide, p)), ops.mul(mean_i, mean_p))
    a = ops.div(cov_ip, ops.add(var_i, eps))
    b = ops.sub(mean_p, ops.mul(a, mean_i))
    return ops.add(ops.mul(box(a), guide), box(b))


def _channel_view(t: Tensor, ndim: int) -> Tensor:
    c = t.shape[0]
    return ops.reshape(t, (c, 1, 1) if ndim == 3 else (1, c, 1, 1))


def csnorm(x, gate_logits, gamma, beta) -> Tensor:
    """Gated instance norm: ``g * (gamma * IN(x) + beta) + (1 - g) * x`` with ``g = sigmoid(gate_logits)``."""
    x = as_tensor(x)
    g = _channel_view(ops.sigmoid(gate_logits), x.ndim)
    normed = ops.affine(ops.instance_norm(x), _channel_view(gamma, x.ndim), _channel_view(beta, x.ndim))
    return ops.add(x, ops.mul(g, ops.sub(normed, x)))


class CSNorm(Module):
    def __init__(self, channels: int):
        super().__init__()
        self.gate = self.add_param("gate", (channels,), "zeros")
        self.gamma = self.add_param("gamma", (channels,), "ones")
        self.beta = self.add_param("beta", (channels,), "zeros")

    def __call__(self, x):
        return csnorm(x, self.gate, self.gamma, self.beta)


class PoolNormBlock(Module):
    """1x1 conv, 2x2 average pool, leaky ReLU, channel-selective norm."""

    def __init__(self, cin: int, cout: int):
        super().__init__()
        self.conv = self.add_module("conv", Conv1x1(cin, cout))
        self.norm = self.add_module("norm", CSNorm(cout))

    def __call__(self, x):
        return self.norm(ops.lrelu(ops.avgpool2(self.conv(x))))


class StridedConvBlock(Module):
    """Strided 3x3 conv, leaky ReLU, batch norm."""

    def __init__(self, cin: int, cout: int):
        super().__init__()
        self.conv = self.add_module("conv", Conv3x3(cin, cout, stride=2))
        self.gamma = self.add_param("bn_gamma", (cout,), "ones")
        self.beta = self.add_param("bn_beta", (cout,), "zeros")
        self.stats = ops.RunningStats(cout)
        self.add_buffer("bn_mean", self.stats.mean)
        self.add_buffer("bn_var", self.stats.var)

    def reset_buffers(self):
        self.stats.mean[:] = 0.0
        self.stats.var[:] = 1.0

    def __call__(self, x):
        y = ops.lrelu(self.conv(x))
        squeeze = y.ndim == 3
        if squeeze:
            y = ops.reshape(y, (1,) + y.shape)
        y = ops.batch_norm(y, self.gamma, self.beta, self.stats, self.training)
        return ops.reshape(y, y.shape[1:]) if squeeze else y


class ConditionNet(Module):
    """Low-resolution image -> condition vector (N x D x 1 x 1)."""

    def __init__(self, cfg: AuctConfig):
        super().__init__()
        self.cfg = cfg
        cc = cfg.cond_channels
        self.pool_path = [self.add_module(f"pool_path{i}", PoolNormBlock(3 if i == 0 else cc, cc)) for i in range(cfg.n_blocks)]
        self.conv_path = [self.add_module(f"conv_path{i}", StridedConvBlock(3 if i == 0 else cc, cc)) for i in range(cfg.n_blocks)]
        self.fuse_in = self.add_module("fuse_in", Conv1x1(2 * cc, cfg.cond_vector_dim))
        self.fuse_out = self.add_module("fuse_out", Conv1x1(cfg.cond_vector_dim, cfg.cond_vector_dim))

    def __call__(self, x_lr, dropout_seed: Optional[int] = None) -> Tensor:
        x_lr = as_tensor(x_lr)
        h, w = x_lr.shape[-2:]
        need = self.cfg.min_condition_size
        if min(h, w) < need:
            raise ops.ShapeError(f"condition input {h}x{w} too small; needs both sides >= {need}")
        base = guided_filter(x_lr, self.cfg.gf_radius, self.cfg.gf_eps)
        low, high = base, ops.sub(x_lr, base)
        for blk in self.pool_path:
            low = blk(low)
        for blk in self.conv_path:
            high = blk(high)
        y = self.fuse_in(ops.concat_channels(low, high))
        y = ops.dropout(y, self.cfg.dropout, self.training, dropout_seed)
        y = self.fuse_out(y)
        return ops.global_avg_pool(y, keepdims=True)


class GFMHeads(Module):
    """Per-layer linear heads V -> (scale, shift); zero weights give scale 1, shift 0."""

    def __init__(self, cfg: AuctConfig):
        super().__init__()
        d = cfg.cond_vector_dim
        self.scale = []
        self.shift = []
        for i, c in enumerate(cfg.layer_channels[1:]):
            self.scale.append(self.add_module(f"scale{i}", Conv1x1(d, c, "zeros", "zeros")))
            self.shift.append(self.add_module(f"shift{i}", Conv1x1(d, c, "zeros", "zeros")))

    def __call__(self, v) -> List[Tuple[Tensor, Tensor]]:
        return [(ops.add(s(v), 1.0), t(v)) for s, t in zip(self.scale, self.shift)]


def gfm_apply(x, scale, shift) -> Tensor:
    """Per-channel ``scale * x + shift`` broadcast over the spatial axes."""
    return ops.affine(x, scale, shift)


def _identity_rows(shape, seed):
    """Random hidden weights whose first three rows copy the three input channels."""
    w = init_param(shape, "fan_in_uniform", seed)
    w[:3] = 0.0
    w[:3, :3] = np.eye(3, dtype=np.float32)
    return w


def _identity_cols(shape, seed):
    w = np.zeros(shape, np.float32)
    w[:, :3] = np.eye(3, dtype=np.float32)
    return w


class BaseNet(Module):
    """Stack of 1x1 convs; each followed by GFM, with ReLU between layers."""

    def __init__(self, cfg: AuctConfig):
        super().__init__()
        chans = cfg.layer_channels
        n = len(chans) - 1
        self.convs = []
        for i in range(n):
            init = _identity_cols if i == n - 1 else _identity_rows
            self.convs.append(self.add_module(f"conv{i}", Conv1x1(chans[i], chans[i + 1], init)))

    def __call__(self, x, gfm: List[Tuple[Tensor, Tensor]]) -> Tensor:
        if len(gfm) != len(self.convs):
            raise ValueError(f"expected {len(self.convs)} GFM pairs, got {len(gfm)}")
        y = as_tensor(x)
        if y.shape[-3] != 3:
            raise ops.ShapeError(f"base network expects 3 input channels, got shape {y.shape}")
        last = len(self.convs) - 1
        for i, (conv, (scale, shift)) in enumerate(zip(self.convs, gfm)):
            if y.ndim == 3 and scale.ndim == 4:
                scale, shift = ops.reshape(scale, scale.shape[1:]), ops.reshape(shift, shift.shape[1:])
            y = gfm_apply(conv(y), scale, shift)
            if i != last:
                y = ops.relu(y)
        return y


class AUCT(Module):
    def __init__(self, cfg: AuctConfig = AuctConfig()):
        super().__init__()
        self.cfg = cfg
        self.base = self.add_module("base", BaseNet(cfg))
        self.cond = self.add_module("cond", ConditionNet(cfg))
        self.heads = self.add_module("heads", GFMHeads(cfg))

    def condition(self, cond_input, dropout_seed: Optional[int] = None) -> Tensor:
        return self.cond(cond_input, dropout_seed)

    def modulation(self, v) -> List[Tuple[Tensor, Tensor]]:
        return self.heads(v)

    def __call__(self, m_s, cond_input, dropout_seed: Optional[int] = None) -> Tensor:
        """``m_s`` at full (or crop) resolution; ``cond_input`` is the downscaled full image."""
        m_s, cond_input = as_tensor(m_s), as_tensor(cond_input)
        if m_s.ndim != cond_input.ndim:
            raise ops.ShapeError(f"image rank {m_s.ndim} and condition rank {cond_input.ndim} differ")
        return self.base(m_s, self.modulation(self.condition(cond_input, dropout_seed)))
