"""Transfer functions, gamut conversion, ICtCp and integer quantisation.

All arrays are channel-first: shape ``(3, ...)`` for a pixel or a C x H x W
image, ``(N, 3, H, W)`` for a batch. Evaluation happens in float64.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

# ---------------------------------------------------------------------------
# Constants. Frozen here on purpose: nothing else in the package may redefine
# them, so metrics cannot drift between runs.
# ---------------------------------------------------------------------------

# SMPTE ST 2084 / ITU-R BT.2100 perceptual quantiser
PQ_M1 = 2610 / 16384
PQ_M2 = 2523 * 128 / 4096
PQ_C1 = 3424 / 4096
PQ_C2 = 2413 * 32 / 4096
PQ_C3 = 2392 * 32 / 4096
PQ_PEAK_NITS = 10000.0

# ITU-R BT.709 OETF, with alpha/beta at the precision that makes both branches meet
BT709_ALPHA = 1.09929682680944
BT709_BETA = 0.018053968510807
BT709_GAMMA = 0.45
BT709_SLOPE = 4.5

# CIE xy primaries and D65 white (ITU-R BT.709 and BT.2020)
PRIMARIES_709 = ((0.640, 0.330), (0.300, 0.600), (0.150, 0.060))
PRIMARIES_2020 = ((0.708, 0.292), (0.170, 0.797), (0.131, 0.046))
WHITE_D65 = (0.3127, 0.3290)

# linear BT.709 RGB -> linear BT.2020 RGB (ITU-R BT.2087, derived from the primaries above)
M_709_TO_2020 = np.array([
    [0.627403895934699, 0.329283038377884, 0.043313065687417],
    [0.069097289358232, 0.919540395075459, 0.011362315566309],
    [0.016391438875150, 0.088013307877226, 0.895595253247624],
])

# ITU-R BT.2100 ICtCp
M_2020_TO_LMS = np.array([
    [1688, 2146, 262],
    [683, 2951, 462],
    [99, 309, 3688],
]) / 4096
M_LMS_TO_ICTCP = np.array([
    [2048, 2048, 0],
    [6610, -13613, 7003],
    [17933, -17390, -543],
]) / 4096
# ITU-R BT.2124
ITP_T_SCALE = 0.5
DELTA_E_ITP_SCALE = 720.0

# luma weights (ITU-R BT.2020)
LUMA_2020 = np.array([0.2627, 0.6780, 0.0593])


@dataclass(frozen=True)
class ColorState:
    transfer: str  # "gamma709" | "pq" | "linear"
    gamut: str  # "rec709" | "rec2020"

    def __post_init__(self):
        if self.transfer not in ("gamma709", "pq", "linear"):
            raise ValueError(f"unknown transfer {self.transfer!r}")
        if self.gamut not in ("rec709", "rec2020"):
            raise ValueError(f"unknown gamut {self.gamut!r}")


SDR = ColorState("gamma709", "rec709")
HDR = ColorState("pq", "rec2020")


@dataclass
class ImagePlanar:
    """3 x H x W float32 image in [0, 1] tagged with its colour state."""

    data: np.ndarray
    state: ColorState

    def __post_init__(self):
        self.data = np.ascontiguousarray(self.data, dtype=np.float32)
        if self.data.ndim != 3 or self.data.shape[0] != 3:
            raise ValueError(f"ImagePlanar needs shape 3 x H x W, got {self.data.shape}")
        if not np.all(np.isfinite(self.data)):
            raise ValueError("ImagePlanar holds non-finite values")
        if self.data.min(initial=0.0) < 0.0 or self.data.max(initial=0.0) > 1.0:
            raise ValueError("ImagePlanar values must lie in [0, 1]")

    @property
    def height(self) -> int:
        return self.data.shape[1]

    @property
    def width(self) -> int:
        return self.data.shape[2]


def _clamp01(x):
    x = np.asarray(x, dtype=np.float64)
    n = int(np.count_nonzero((x < 0.0) | (x > 1.0)))
    x = np.clip(x, 0.0, 1.0)
    return x, n


def pq_oetf(y, return_clamped: bool = False):
    """Encode linear luminance (fraction of 10000 nits) to a PQ signal in [0, 1].

    Inputs outside [0, 1] are clamped; with ``return_clamped`` the number of
    clamped samples is returned as well.
    """
    y, n = _clamp01(y)
    ym = y ** PQ_M1
    e = ((PQ_C1 + PQ_C2 * ym) / (1.0 + PQ_C3 * ym)) ** PQ_M2
    return (e, n) if return_clamped else e


def pq_eotf(e, return_clamped: bool = False):
    """Decode a PQ signal to linear luminance (fraction of 10000 nits)."""
    e, n = _clamp01(e)
    ep = e ** (1.0 / PQ_M2)
    y = (np.maximum(ep - PQ_C1, 0.0) / (PQ_C2 - PQ_C3 * ep)) ** (1.0 / PQ_M1)
    return (y, n) if return_clamped else y


def gamma709_encode(L):
    L = np.clip(np.asarray(L, dtype=np.float64), 0.0, 1.0)
    return np.where(L < BT709_BETA, BT709_SLOPE * L,
                    BT709_ALPHA * np.power(L, BT709_GAMMA) - (BT709_ALPHA - 1.0))


def gamma709_decode(V):
    V = np.clip(np.asarray(V, dtype=np.float64), 0.0, 1.0)
    knee = BT709_SLOPE * BT709_BETA
    return np.where(V < knee, V / BT709_SLOPE,
                    np.power((V + (BT709_ALPHA - 1.0)) / BT709_ALPHA, 1.0 / BT709_GAMMA))


def apply_matrix(m: np.ndarray, rgb) -> np.ndarray:
    """Multiply every pixel of a channel-first array by the 3x3 matrix ``m``."""
    rgb = np.asarray(rgb, dtype=np.float64)
    if rgb.ndim == 4:
        return np.einsum("ij,nj...->ni...", m, rgb)
    if rgb.shape[0] != 3:
        raise ValueError(f"expected 3 channels on the leading axis, got shape {rgb.shape}")
    return np.tensordot(m, rgb, axes=(1, 0))


def gamut_709_to_2020(rgb, return_clamped: bool = False):
    """Linear BT.709 RGB to linear BT.2020 RGB, clamped to [0, 1]."""
    out, n = _clamp01(apply_matrix(M_709_TO_2020, rgb))
    return (out, n) if return_clamped else out


def gamut_2020_to_709(rgb, return_clamped: bool = False):
    out, n = _clamp01(apply_matrix(np.linalg.inv(M_709_TO_2020), rgb))
    return (out, n) if return_clamped else out


def rgb2020_to_ictcp(rgb) -> np.ndarray:
    """Linear BT.2020 RGB (1.0 = 10000 nits) to (I, T, P) with T = Ct / 2."""
    lms = apply_matrix(M_2020_TO_LMS, rgb)
    lms_p = pq_oetf(lms)
    ictcp = apply_matrix(M_LMS_TO_ICTCP, lms_p)
    if ictcp.ndim == 4:
        ictcp[:, 1] *= ITP_T_SCALE
    else:
        ictcp[1] *= ITP_T_SCALE
    return ictcp


def quantize(img, bits: int) -> np.ndarray:
    """Round ``v * (2**bits - 1)`` half away from zero after clamping to [0, 1]."""
    if bits not in (8, 16):
        raise ValueError(f"bits must be 8 or 16, got {bits}")
    top = 2**bits - 1
    v = np.clip(np.asarray(img, dtype=np.float64), 0.0, 1.0) * top
    q = np.floor(v + 0.5)  # v >= 0, so this is half-away-from-zero
    return q.astype(np.uint8 if bits == 8 else np.uint16)


def dequantize(q, bits: int) -> np.ndarray:
    if bits not in (8, 16):
        raise ValueError(f"bits must be 8 or 16, got {bits}")
    return (np.asarray(q, dtype=np.float64) / (2**bits - 1)).astype(np.float32)


def sdr_to_hdr_reference(sdr, peak_fraction: float) -> np.ndarray:
    """Fixed, non-learned SDR -> HDR mapping: linearise, widen gamut, scale, PQ-encode.

    ``peak_fraction`` is SDR reference white as a fraction of 10000 nits.
    """
    lin = gamut_709_to_2020(gamma709_decode(sdr))
    return pq_oetf(lin * peak_fraction)


def luma(rgb) -> np.ndarray:
    rgb = np.asarray(rgb, dtype=np.float64)
    if rgb.ndim == 4:
        return np.einsum("j,nj...->n...", LUMA_2020, rgb)
    return np.tensordot(LUMA_2020, rgb, axes=(0, 0))
