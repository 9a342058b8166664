"""Differentiable primitives used by the AUCT and LE networks.

Image tensors are N x C x H x W; the spatial ops also accept a single
C x H x W image and return the same rank. Reductions that feed statistics
(mean, variance, losses) accumulate in float64 and store float32.

Every matrix product that mixes channels at a pixel goes through
:func:`_pixel_matmul`, which pads the pixel axis to a fixed multiple so that
the BLAS kernel path, and hence the rounding of each pixel, does not depend
on how many pixels are evaluated together.
"""
from __future__ import annotations

import functools
from typing import Optional, Tuple, Union

import numpy as np

from .autograd import Tensor, as_tensor, default_dtype, is_grad_enabled, make_output

Scalar = Union[int, float]

PIXEL_ALIGN = 64
# cap on the im2col buffer in no-grad mode; larger convolutions run in row blocks
COLS_BUDGET_BYTES = 4 * 2**20

LRELU_SLOPE = 0.1
BN_EPS = 1e-5
BN_MOMENTUM = 0.1
IN_EPS = 1e-5


class ShapeError(ValueError):
    pass


class NonFiniteError(FloatingPointError):
    pass


def _aligned(p: int) -> int:
    return -(-p // PIXEL_ALIGN) * PIXEL_ALIGN


def _pixel_matmul(w: np.ndarray, cols: np.ndarray, p: int) -> np.ndarray:
    """``w @ cols`` over the first ``p`` columns; ``cols`` already has aligned width."""
    return np.matmul(w, cols)[..., :p]


def _unbroadcast(g: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def _batched(fn):
    """Let a 4-D op also take a single C x H x W image."""

    @functools.wraps(fn)
    def wrapper(x, *args, **kwargs):
        x = as_tensor(x)
        if x.ndim == 3:
            out = fn(reshape(x, (1,) + x.shape), *args, **kwargs)
            return reshape(out, out.shape[1:])
        if x.ndim != 4:
            raise ShapeError(f"{fn.__name__}: expected C x H x W or N x C x H x W, got shape {x.shape}")
        return fn(x, *args, **kwargs)

    return wrapper


# -- shape plumbing ----------------------------------------------------------

def reshape(x: Tensor, shape) -> Tensor:
    x = as_tensor(x)
    src = x.shape
    out = x.data.reshape(shape)
    return make_output(out, "reshape", (x,), lambda g: (g.reshape(src),))


def crop(x: Tensor, height: int, width: int) -> Tensor:
    """Keep the top-left ``height`` x ``width`` window of the last two axes."""
    x = as_tensor(x)
    src = x.shape
    if height > src[-2] or width > src[-1]:
        raise ShapeError(f"crop to {height}x{width} larger than input {src[-2]}x{src[-1]}")
    out = x.data[..., :height, :width]

    def bwd(g):
        gx = np.zeros(src, g.dtype)
        gx[..., :height, :width] = g
        return (gx,)

    return make_output(out, "crop", (x,), bwd)


def pad_replicate(x: Tensor, pad_h: int, pad_w: int) -> Tensor:
    """Replicate the last row/column ``pad_h``/``pad_w`` times (bottom/right)."""
    x = as_tensor(x)
    if pad_h == 0 and pad_w == 0:
        return x
    h, w = x.shape[-2:]
    widths = [(0, 0)] * (x.ndim - 2) + [(0, pad_h), (0, pad_w)]
    out = np.pad(x.data, widths, mode="edge")

    def bwd(g):
        g = g.copy()
        if pad_h:
            g[..., h - 1, :] += g[..., h:, :].sum(axis=-2)
        g = g[..., :h, :]
        if pad_w:
            g[..., :, w - 1] += g[..., :, w:].sum(axis=-1)
        return (np.ascontiguousarray(g[..., :, :w]),)

    return make_output(out, "pad_replicate", (x,), bwd)


def concat_channels(a: Tensor, b: Tensor) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != b.ndim or a.ndim not in (3, 4):
        raise ShapeError(f"concat_channels: incompatible ranks {a.shape} and {b.shape}")
    axis = a.ndim - 3
    if a.shape[:axis] != b.shape[:axis] or a.shape[-2:] != b.shape[-2:]:
        raise ShapeError(f"concat_channels: spatial/batch extents differ: {a.shape} vs {b.shape}")
    ca = a.shape[axis]
    out = np.concatenate([a.data, b.data], axis=axis)

    def bwd(g):
        ga, gb = np.split(g, [ca], axis=axis)
        return np.ascontiguousarray(ga), np.ascontiguousarray(gb)

    return make_output(out, "concat", (a, b), bwd)


def concat(tensors, axis: int = 0) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    if not ts:
        raise ShapeError("concat needs at least one tensor")
    sizes = [t.shape[axis] for t in ts]
    out = np.concatenate([t.data for t in ts], axis=axis)

    def bwd(g):
        return [np.ascontiguousarray(p) for p in np.split(g, np.cumsum(sizes)[:-1], axis=axis)]

    return make_output(out, "concat", ts, bwd)


# -- elementwise -------------------------------------------------------------

def _operand(v):
    return v if isinstance(v, Tensor) else None


def add(a, b) -> Tensor:
    ta, tb = _operand(a), _operand(b)
    da = ta.data if ta is not None else np.float32(a)
    db = tb.data if tb is not None else np.float32(b)
    out = np.add(da, db)
    ins = tuple(t for t in (ta, tb) if t is not None)

    def bwd(g):
        res = []
        if ta is not None:
            res.append(_unbroadcast(g, ta.shape))
        if tb is not None:
            res.append(_unbroadcast(g, tb.shape))
        return res

    return make_output(out, "add", ins, bwd)


def sub(a, b) -> Tensor:
    ta, tb = _operand(a), _operand(b)
    da = ta.data if ta is not None else np.float32(a)
    db = tb.data if tb is not None else np.float32(b)
    out = np.subtract(da, db)
    ins = tuple(t for t in (ta, tb) if t is not None)

    def bwd(g):
        res = []
        if ta is not None:
            res.append(_unbroadcast(g, ta.shape))
        if tb is not None:
            res.append(-_unbroadcast(g, tb.shape))
        return res

    return make_output(out, "sub", ins, bwd)


def mul(a, b) -> Tensor:
    ta, tb = _operand(a), _operand(b)
    da = ta.data if ta is not None else np.float32(a)
    db = tb.data if tb is not None else np.float32(b)
    out = np.multiply(da, db)
    ins = tuple(t for t in (ta, tb) if t is not None)

    def bwd(g):
        res = []
        if ta is not None:
            res.append(_unbroadcast(g * db, ta.shape))
        if tb is not None:
            res.append(_unbroadcast(g * da, tb.shape))
        return res

    return make_output(out, "mul", ins, bwd)


def div(a, b) -> Tensor:
    ta, tb = _operand(a), _operand(b)
    da = ta.data if ta is not None else np.float32(a)
    db = tb.data if tb is not None else np.float32(b)
    out = np.divide(da, db)
    ins = tuple(t for t in (ta, tb) if t is not None)

    def bwd(g):
        res = []
        if ta is not None:
            res.append(_unbroadcast(g / db, ta.shape))
        if tb is not None:
            res.append(_unbroadcast(-g * out / db, tb.shape))
        return res

    return make_output(out, "div", ins, bwd)


def affine(x: Tensor, scale, shift) -> Tensor:
    """``x * scale + shift`` with numpy broadcasting; scale/shift may be tensors."""
    x = as_tensor(x)
    ts, tt = _operand(scale), _operand(shift)
    ds = ts.data if ts is not None else np.float32(scale)
    dt = tt.data if tt is not None else np.float32(shift)
    out = np.multiply(x.data, ds) + dt
    ins = (x,) + tuple(t for t in (ts, tt) if t is not None)

    def bwd(g):
        res = [_unbroadcast(g * ds, x.shape)]
        if ts is not None:
            res.append(_unbroadcast(g * x.data, ts.shape))
        if tt is not None:
            res.append(_unbroadcast(g, tt.shape))
        return res

    return make_output(out, "affine", ins, bwd)


def relu(x: Tensor) -> Tensor:
    x = as_tensor(x)
    out = np.maximum(x.data, 0)
    return make_output(out, "relu", (x,), lambda g: (g * (x.data > 0),))


def lrelu(x: Tensor, slope: float = LRELU_SLOPE) -> Tensor:
    if not 0.0 < slope < 1.0:
        raise ValueError(f"leaky slope must lie in (0, 1), got {slope}")
    x = as_tensor(x)
    pos = x.data >= 0
    out = np.where(pos, x.data, np.float32(slope) * x.data)
    return make_output(out, "lrelu", (x,), lambda g: (np.where(pos, g, np.float32(slope) * g),))


def sigmoid(x: Tensor) -> Tensor:
    x = as_tensor(x)
    d = x.data.astype(np.float64)
    out = np.empty_like(d)
    pos = d >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-d[pos]))
    e = np.exp(d[~pos])
    out[~pos] = e / (1.0 + e)
    out = out.astype(default_dtype())
    return make_output(out, "sigmoid", (x,), lambda g: (g * out * (1 - out),))


# -- reductions --------------------------------------------------------------

def sum(x: Tensor) -> Tensor:  # noqa: A001 - mirrors numpy naming
    x = as_tensor(x)
    out = np.array(x.data.sum(dtype=np.float64), default_dtype())
    return make_output(out, "sum", (x,), lambda g: (np.full(x.shape, g, g.dtype),))


def mean(x: Tensor) -> Tensor:
    x = as_tensor(x)
    out = np.array(x.data.mean(dtype=np.float64), default_dtype())
    n = x.size
    return make_output(out, "mean", (x,), lambda g: (np.full(x.shape, g / n, g.dtype),))


def l1_loss(pred: Tensor, target, weight: float = 1.0) -> Tensor:
    """``weight * mean(|pred - target|)``; the target never receives a gradient."""
    pred = as_tensor(pred)
    t = target.data if isinstance(target, Tensor) else np.asarray(target, np.float32)
    if pred.shape != t.shape:
        raise ShapeError(f"l1_loss: prediction {pred.shape} vs target {t.shape}")
    diff = pred.data - t
    val = weight * np.abs(diff, dtype=np.float64).mean()
    n = diff.size

    def bwd(g):
        return (np.sign(diff) * (g * weight / n),)

    return make_output(np.array(val, default_dtype()), "l1_loss", (pred,), bwd)


@_batched
def global_avg_pool(x: Tensor, keepdims: bool = False) -> Tensor:
    """Per-channel spatial mean: N x C x H x W -> N x C (or N x C x 1 x 1)."""
    n, c, h, w = x.shape
    out = x.data.mean(axis=(2, 3), dtype=np.float64).astype(default_dtype())
    if keepdims:
        out = out.reshape(n, c, 1, 1)

    def bwd(g):
        g = g.reshape(n, c, 1, 1) / (h * w)
        return (np.broadcast_to(g, x.shape).copy(),)

    return make_output(out, "global_avg_pool", (x,), bwd)


# -- convolutions ------------------------------------------------------------

def _check_param(p: Tensor, shape, what: str):
    if tuple(p.shape) != tuple(shape):
        raise ShapeError(f"{what}: expected shape {tuple(shape)}, got {tuple(p.shape)}")


@_batched
def conv1x1(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """Pointwise channel mixing: out[c] = b[c] + sum_k w[c, k] * x[k]."""
    n, cin, h, wd = x.shape
    if w.ndim != 2 or w.shape[1] != cin:
        raise ShapeError(f"conv1x1: weight {w.shape} does not accept {cin} input channels")
    cout = w.shape[0]
    _check_param(b, (cout,), "conv1x1 bias")
    p = h * wd
    q = _aligned(p)
    flat = x.data.reshape(n, cin, p)
    if q != p:
        cols = np.zeros((n, cin, q), flat.dtype)
        cols[:, :, :p] = flat
    else:
        cols = flat
    out = _pixel_matmul(w.data, cols, p)
    out = out + b.data[:, None]
    out = out.reshape(n, cout, h, wd)

    def bwd(g):
        g = g.reshape(n, cout, p)
        gw = np.zeros((cout, cin), g.dtype)
        for i in range(n):
            gw += g[i] @ flat[i].T
        gb = g.sum(axis=(0, 2), dtype=np.float64)
        gx = np.matmul(w.data.T, g).reshape(x.shape)
        return gx, gw, gb

    return make_output(out, "conv1x1", (x, w, b), bwd)


def _im2col3(xp: np.ndarray, stride: int, r0: int, r1: int, wo: int) -> Tuple[np.ndarray, int]:
    """Columns for output rows [r0, r1) of a 3x3 conv over the zero-padded input."""
    n, c = xp.shape[:2]
    rows = r1 - r0
    p = rows * wo
    q = _aligned(p)
    cols = np.empty((n, c, 9, q), xp.dtype)
    if q != p:
        cols[..., p:] = 0
    view = cols[..., :p].reshape(n, c, 9, rows, wo)
    s = stride
    for i in range(3):
        y0 = r0 * s + i
        for j in range(3):
            view[:, :, i * 3 + j] = xp[:, :, y0:y0 + s * (rows - 1) + 1:s, j:j + s * (wo - 1) + 1:s]
    return cols.reshape(n, c * 9, q), p


@_batched
def conv3x3(x: Tensor, w: Tensor, b: Tensor, stride: int = 1) -> Tensor:
    """3x3 cross-correlation with zero padding 1; stride 2 gives ceil(H/2) x ceil(W/2)."""
    if stride not in (1, 2):
        raise ValueError(f"conv3x3 stride must be 1 or 2, got {stride}")
    n, cin, h, wd = x.shape
    if w.ndim != 4 or w.shape[1:] != (cin, 3, 3):
        raise ShapeError(f"conv3x3: weight {w.shape} does not accept {cin} input channels")
    cout = w.shape[0]
    _check_param(b, (cout,), "conv3x3 bias")
    ho = (h - 1) // stride + 1
    wo = (wd - 1) // stride + 1
    xp = np.pad(x.data, ((0, 0), (0, 0), (1, 1), (1, 1)))
    w2 = w.data.reshape(cout, cin * 9)
    need_grad = is_grad_enabled() and (x.requires_grad or w.requires_grad or b.requires_grad)

    if need_grad or n * cin * 9 * _aligned(ho * wo) * 4 <= COLS_BUDGET_BYTES:
        cols, p = _im2col3(xp, stride, 0, ho, wo)
        out = _pixel_matmul(w2, cols, p)
        out = (out + b.data[:, None]).reshape(n, cout, ho, wo)
    else:
        cols = None
        out = np.empty((n, cout, ho, wo), np.result_type(xp, w2))
        per_row = n * cin * 9 * wo * 4
        block = max(1, COLS_BUDGET_BYTES // per_row)
        for r0 in range(0, ho, block):
            r1 = min(ho, r0 + block)
            c, p = _im2col3(xp, stride, r0, r1, wo)
            out[:, :, r0:r1] = (_pixel_matmul(w2, c, p) + b.data[:, None]).reshape(n, cout, r1 - r0, wo)

    def bwd(g):
        p = ho * wo
        g = g.reshape(n, cout, p)
        gw = np.zeros((cout, cin * 9), g.dtype)
        for i in range(n):
            gw += g[i] @ cols[i, :, :p].T
        gb = g.sum(axis=(0, 2), dtype=np.float64)
        dcols = np.matmul(w2.T, g).reshape(n, cin, 9, ho, wo)
        gxp = np.zeros_like(xp)
        s = stride
        for i in range(3):
            for j in range(3):
                gxp[:, :, i:i + s * (ho - 1) + 1:s, j:j + s * (wo - 1) + 1:s] += dcols[:, :, i * 3 + j]
        gx = np.ascontiguousarray(gxp[:, :, 1:-1, 1:-1])
        return gx, gw.reshape(w.shape), gb

    return make_output(out, "conv3x3", (x, w, b), bwd)


# -- resampling --------------------------------------------------------------

@_batched
def avgpool2(x: Tensor) -> Tensor:
    """2x2 mean, stride 2; an odd extent replicates its last row/column first."""
    n, c, h, w = x.shape
    if h < 2 or w < 2:
        raise ShapeError(f"avgpool2 needs spatial extent >= 2, got {h}x{w}")
    ph, pw = h % 2, w % 2
    xp = np.pad(x.data, ((0, 0), (0, 0), (0, ph), (0, pw)), mode="edge") if (ph or pw) else x.data
    h2, w2 = xp.shape[2] // 2, xp.shape[3] // 2
    out = (xp[:, :, 0::2, 0::2] + xp[:, :, 0::2, 1::2] + xp[:, :, 1::2, 0::2] + xp[:, :, 1::2, 1::2]) * np.float32(0.25)

    def bwd(g):
        gp = np.repeat(np.repeat(g * np.float32(0.25), 2, axis=2), 2, axis=3)
        if ph:
            gp[:, :, h - 1, :] += gp[:, :, h, :]
            gp = gp[:, :, :h, :]
        if pw:
            gp[:, :, :, w - 1] += gp[:, :, :, w]
            gp = gp[:, :, :, :w]
        return (np.ascontiguousarray(gp),)

    assert out.shape == (n, c, h2, w2)
    return make_output(out, "avgpool2", (x,), bwd)


def _window_sum(a: np.ndarray, r: int, axis: int) -> np.ndarray:
    """Sums of ``2r+1`` consecutive entries along ``axis`` ("valid" extent)."""
    c = np.cumsum(a, axis=axis, dtype=np.float64)
    c = np.concatenate([np.zeros_like(np.take(c, [0], axis=axis)), c], axis=axis)
    n = a.shape[axis] - 2 * r
    hi = np.take(c, np.arange(2 * r + 1, 2 * r + 1 + n), axis=axis)
    lo = np.take(c, np.arange(0, n), axis=axis)
    return hi - lo


@_batched
def box_filter(x: Tensor, radius: int) -> Tensor:
    """Mean over the (2r+1)^2 window around each pixel, edges replicated."""
    n, c, h, w = x.shape
    r = int(radius)
    if r < 1:
        raise ValueError(f"box_filter radius must be >= 1, got {radius}")
    if r >= min(h, w):
        raise ShapeError(f"box_filter radius {r} needs spatial extent > {r}, got {h}x{w}")
    k = (2 * r + 1) ** 2
    xp = np.pad(x.data, ((0, 0), (0, 0), (r, r), (r, r)), mode="edge")
    out = (_window_sum(_window_sum(xp, r, 2), r, 3) / k).astype(default_dtype())

    def bwd(g):
        # adjoint of the valid window sum is a full window sum of the zero-padded gradient
        gz = np.pad(g.astype(np.float64) / k, ((0, 0), (0, 0), (2 * r, 2 * r), (2 * r, 2 * r)))
        gp = _window_sum(_window_sum(gz, r, 2), r, 3)
        # fold the replicated border back onto the edge pixels
        gp[:, :, r, :] += gp[:, :, :r, :].sum(axis=2)
        gp[:, :, r + h - 1, :] += gp[:, :, r + h:, :].sum(axis=2)
        gp = gp[:, :, r:r + h, :]
        gp[:, :, :, r] += gp[:, :, :, :r].sum(axis=3)
        gp[:, :, :, r + w - 1] += gp[:, :, :, r + w:].sum(axis=3)
        return (gp[:, :, :, r:r + w].astype(g.dtype),)

    return make_output(out, "box_filter", (x,), bwd)


@_batched
def upsample_nearest2(x: Tensor) -> Tensor:
    n, c, h, w = x.shape
    out = np.repeat(np.repeat(x.data, 2, axis=2), 2, axis=3)
    return make_output(out, "upsample_nearest2", (x,),
                       lambda g: (g.reshape(n, c, h, 2, w, 2).sum(axis=(3, 5)),))


# -- normalisation and regularisation ----------------------------------------

def _norm_backward(g, xhat, invstd, axes):
    m = 1
    for a in axes:
        m *= g.shape[a]
    g64 = g.astype(np.float64)
    sg = g64.sum(axis=axes, keepdims=True)
    sgx = (g64 * xhat).sum(axis=axes, keepdims=True)
    return (invstd / m) * (m * g64 - sg - xhat * sgx)


@_batched
def instance_norm(x: Tensor, eps: float = IN_EPS) -> Tensor:
    """Per-sample, per-channel zero-mean unit-variance over H x W (no affine)."""
    d = x.data.astype(np.float64)
    mu = d.mean(axis=(2, 3), keepdims=True)
    var = ((d - mu) ** 2).mean(axis=(2, 3), keepdims=True)
    invstd = 1.0 / np.sqrt(var + eps)
    xhat = (d - mu) * invstd
    return make_output(xhat.astype(default_dtype()), "instance_norm", (x,),
                       lambda g: (_norm_backward(g, xhat, invstd, (2, 3)),))


class RunningStats:
    """Batch-norm running mean/variance (mean 0, variance 1 before any training step)."""

    def __init__(self, channels: int):
        self.mean = np.zeros(channels, np.float32)
        self.var = np.ones(channels, np.float32)

    def update(self, mean, var_unbiased, momentum):
        self.mean[:] = (1 - momentum) * self.mean + momentum * mean
        self.var[:] = (1 - momentum) * self.var + momentum * var_unbiased


def batch_norm(x: Tensor, gamma: Tensor, beta: Tensor, stats: RunningStats, training: bool,
               momentum: float = BN_MOMENTUM, eps: float = BN_EPS) -> Tensor:
    """Per-channel normalisation over N, H, W.

    Training mode normalises with the batch statistics and folds them into
    ``stats``; eval mode uses ``stats`` as they are.
    """
    x = as_tensor(x)
    if x.ndim != 4:
        raise ShapeError(f"batch_norm expects N x C x H x W, got {x.shape}")
    c = x.shape[1]
    _check_param(gamma, (c,), "batch_norm gamma")
    _check_param(beta, (c,), "batch_norm beta")
    d = x.data.astype(np.float64)
    g4 = gamma.data.reshape(1, c, 1, 1).astype(np.float64)
    b4 = beta.data.reshape(1, c, 1, 1).astype(np.float64)
    axes = (0, 2, 3)
    if training:
        mu = d.mean(axis=axes, keepdims=True)
        var = ((d - mu) ** 2).mean(axis=axes, keepdims=True)
        m = x.size // c
        unbiased = var * (m / (m - 1)) if m > 1 else var
        stats.update(mu.reshape(c), unbiased.reshape(c), momentum)
    else:
        mu = stats.mean.reshape(1, c, 1, 1).astype(np.float64)
        var = stats.var.reshape(1, c, 1, 1).astype(np.float64)
    invstd = 1.0 / np.sqrt(var + eps)
    xhat = (d - mu) * invstd
    out = (xhat * g4 + b4).astype(default_dtype())

    def bwd(g):
        g64 = g.astype(np.float64)
        ggamma = (g64 * xhat).sum(axis=axes)
        gbeta = g64.sum(axis=axes)
        if training:
            gx = _norm_backward(g * g4, xhat, invstd, axes)
        else:
            gx = g64 * g4 * invstd
        return gx, ggamma, gbeta

    return make_output(out, "batch_norm", (x, gamma, beta), bwd)


def dropout(x: Tensor, rate: float, training: bool, seed: Optional[int] = None) -> Tensor:
    """Inverted dropout: kept units are scaled by 1 / (1 - rate); identity in eval mode."""
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate must lie in [0, 1), got {rate}")
    x = as_tensor(x)
    if not training or rate == 0.0:
        return x
    keep = np.random.default_rng(seed).random(x.shape) >= rate
    mask = keep.astype(np.float32) / np.float32(1.0 - rate)
    return make_output(x.data * mask, "dropout", (x,), lambda g: (g * mask,))


def check_finite(x: Tensor, where: str = "tensor") -> Tensor:
    """Raise :class:`NonFiniteError` if ``x`` holds NaN or Inf."""
    if not np.all(np.isfinite(x.data)):
        bad = int(np.size(x.data) - np.count_nonzero(np.isfinite(x.data)))
        raise NonFiniteError(f"{where}: {bad} non-finite values")
    return x
