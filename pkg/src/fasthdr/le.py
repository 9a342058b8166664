"""Local enhancement: a three-level U-Net whose decoder features are modulated per pixel."""
from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import List, Tuple

from . import ops
from .autograd import Tensor, as_tensor
from .nn import Conv3x3, Module

# total downsampling of the encoder; inputs are padded to a multiple of this
LE_STRIDE = 4


@dataclass(frozen=True)
class LeConfig:
    width: int = 16
    levels: int = 3
    residual_output: bool = True

    def __post_init__(self):
        if self.levels != 3:
            raise ValueError(f"LeConfig.levels must be 3, got {self.levels}")
        if self.width < 8:
            raise ValueError(f"LeConfig.width must be >= 8, got {self.width}")

    def to_dict(self) -> dict:
        return asdict(self)


def sft_apply(x, m, n) -> Tensor:
    """Elementwise ``m * x + n``."""
    return ops.affine(x, m, n)


class SFTHead(Module):
    """Pair of 3x3 convs emitting (scale map, shift map); initialised to (1, 0)."""

    def __init__(self, channels: int):
        super().__init__()
        self.m = self.add_module("m", Conv3x3(channels, channels, 1, "zeros", "ones"))
        self.n = self.add_module("n", Conv3x3(channels, channels, 1, "zeros", "zeros"))

    def __call__(self, feat) -> Tuple[Tensor, Tensor]:
        return self.m(feat), self.n(feat)


class LEConditionBranch(Module):
    """Three conv stages at strides 1, 2, 4, each feeding an SFT head."""

    def __init__(self, width: int):
        super().__init__()
        c = width
        self.stage1 = self.add_module("stage1", Conv3x3(3, c, 1))
        self.stage2 = self.add_module("stage2", Conv3x3(c, 2 * c, 2))
        self.stage3 = self.add_module("stage3", Conv3x3(2 * c, 4 * c, 2))
        self.head1 = self.add_module("head1", SFTHead(c))
        self.head2 = self.add_module("head2", SFTHead(2 * c))
        self.head3 = self.add_module("head3", SFTHead(4 * c))

    def __call__(self, x) -> List[Tuple[Tensor, Tensor]]:
        """Maps ordered by stride: [(m1, n1) at 1, (m2, n2) at 2, (m3, n3) at 4]."""
        x = as_tensor(x)
        h, w = x.shape[-2:]
        if h < LE_STRIDE or w < LE_STRIDE:
            raise ops.ShapeError(f"local enhancement needs an image of at least {LE_STRIDE}x{LE_STRIDE}, got {h}x{w}")
        f1 = ops.lrelu(self.stage1(x))
        f2 = ops.lrelu(self.stage2(f1))
        f3 = ops.lrelu(self.stage3(f2))
        return [self.head1(f1), self.head2(f2), self.head3(f3)]


class LENet(Module):
    def __init__(self, cfg: LeConfig = LeConfig()):
        super().__init__()
        self.cfg = cfg
        c = cfg.width
        self.head = self.add_module("head", Conv3x3(3, c))
        self.enc1 = self.add_module("enc1", Conv3x3(c, 2 * c, 2))
        self.enc2 = self.add_module("enc2", Conv3x3(2 * c, 4 * c, 2))
        self.mid = self.add_module("mid", Conv3x3(4 * c, 4 * c))
        self.up2 = self.add_module("up2", Conv3x3(4 * c, 2 * c))
        self.dec2 = self.add_module("dec2", Conv3x3(4 * c, 2 * c))
        self.up1 = self.add_module("up1", Conv3x3(2 * c, c))
        self.dec1 = self.add_module("dec1", Conv3x3(2 * c, c))
        self.tail = self.add_module("tail", Conv3x3(c, 3, 1, "zeros", "zeros"))
        self.cond = self.add_module("cond", LEConditionBranch(c))

    def core(self, x) -> Tensor:
        """Network on an input whose extents are already multiples of 4."""
        x = as_tensor(x)
        h, w = x.shape[-2:]
        if h % LE_STRIDE or w % LE_STRIDE:
            raise ops.ShapeError(f"core expects extents divisible by {LE_STRIDE}, got {h}x{w}")
        (m1, n1), (m2, n2), (m3, n3) = self.cond(x)
        f0 = ops.check_finite(ops.lrelu(self.head(x)), "le.head")
        f1 = ops.lrelu(self.enc1(f0))
        f2 = ops.lrelu(self.enc2(f1))
        b = ops.check_finite(sft_apply(ops.lrelu(self.mid(f2)), m3, n3), "le.mid")
        d2 = self.up2(ops.upsample_nearest2(b))
        d2 = ops.lrelu(self.dec2(ops.concat_channels(d2, f1)))
        d2 = ops.check_finite(sft_apply(d2, m2, n2), "le.dec2")
        d1 = self.up1(ops.upsample_nearest2(d2))
        d1 = ops.lrelu(self.dec1(ops.concat_channels(d1, f0)))
        d1 = ops.check_finite(sft_apply(d1, m1, n1), "le.dec1")
        out = self.tail(d1)
        if self.cfg.residual_output:
            out = ops.add(x, out)
        return ops.check_finite(out, "le.tail")

    def __call__(self, m_auct) -> Tensor:
        """Pads bottom/right by replication to a multiple of 4, runs, crops back."""
        m_auct = as_tensor(m_auct)
        h, w = m_auct.shape[-2:]
        if h < LE_STRIDE or w < LE_STRIDE:
            raise ops.ShapeError(f"local enhancement needs an image of at least {LE_STRIDE}x{LE_STRIDE}, got {h}x{w}")
        ph, pw = -h % LE_STRIDE, -w % LE_STRIDE
        out = self.core(ops.pad_replicate(m_auct, ph, pw))
        return ops.crop(out, h, w) if (ph or pw) else out


def receptive_radius(cfg: LeConfig = LeConfig()) -> int:
    """Largest pixel offset through which an input can influence an output of :class:`LENet`.

    Tracks, for each feature map, the interval of input offsets (in full
    resolution pixels) that one of its cells depends on, anchored at the
    cell's top-left input pixel. A 3x3 conv at stride ``s`` widens by ``s``
    either side; a stride-2 conv from stride ``s`` likewise widens by ``s``;
    nearest upsampling from ``s`` to ``s/2`` reaches back ``s/2`` on the low side.
    """
    def conv(iv, s):
        return iv[0] - s, iv[1] + s

    def up(iv, s):
        return iv[0] - s // 2, iv[1]

    def union(a, b):
        return min(a[0], b[0]), max(a[1], b[1])

    x = (0, 0)
    c1 = conv(x, 1)
    c2 = conv(c1, 1)          # stride-2 conv reading stride-1 cells
    c3 = conv(c2, 2)
    sft3 = conv(c3, 4)
    sft2 = conv(c2, 2)
    sft1 = conv(c1, 1)
    f0 = conv(x, 1)
    f1 = conv(f0, 1)
    f2 = conv(f1, 2)
    b = union(conv(f2, 4), sft3)
    d2 = conv(up(b, 4), 2)
    d2 = union(conv(union(d2, f1), 2), sft2)
    d1 = conv(up(d2, 2), 1)
    d1 = union(conv(union(d1, f0), 1), sft1)
    out = conv(d1, 1)
    return max(-out[0], out[1])


LE_RECEPTIVE_RADIUS = 18
