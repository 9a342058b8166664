"""Quick internal consistency checks run by ``fasthdr selftest``."""
from __future__ import annotations

from typing import Callable, List, Tuple

import numpy as np

from . import color, metrics, ops
from .autograd import Tensor, no_grad
from .gradcheck import gradcheck
from .model import build_model, predict_image


def _away_from_zero(rng, shape, margin=0.05):
    x = rng.uniform(margin, 1.0, shape) * rng.choice([-1.0, 1.0], shape)
    return Tensor(x, requires_grad=True)


def _gradchecks(rng) -> Tuple[bool, str]:
    t = lambda *s: Tensor(rng.standard_normal(s), requires_grad=True)  # noqa: E731
    x4 = lambda: t(2, 3, 5, 5)  # noqa: E731
    cases = {
        "conv1x1": (lambda x, w, b: ops.conv1x1(x, w, b), [x4(), t(4, 3), t(4)]),
        "conv3x3": (lambda x, w, b: ops.conv3x3(x, w, b, 1), [x4(), t(4, 3, 3, 3), t(4)]),
        "conv3x3_s2": (lambda x, w, b: ops.conv3x3(x, w, b, 2), [x4(), t(4, 3, 3, 3), t(4)]),
        "lrelu": (lambda x: ops.lrelu(x), [_away_from_zero(rng, (2, 3, 5, 5))]),
        "avgpool2": (lambda x: ops.avgpool2(x), [x4()]),
        "instance_norm": (lambda x: ops.instance_norm(x), [x4()]),
        "upsample": (lambda x: ops.upsample_nearest2(x), [x4()]),
        "gap": (lambda x: ops.global_avg_pool(x), [x4()]),
    }
    bad = []
    for name, (f, inputs) in cases.items():
        rep = gradcheck(f, inputs)
        if not rep.passed:
            bad.append(f"{name}: {rep.summary()}")
    return not bad, "; ".join(bad) or f"{len(cases)} ops"


def _color() -> Tuple[bool, str]:
    g = np.linspace(0.0, 1.0, 1001)
    e1 = np.abs(color.pq_eotf(color.pq_oetf(g)) - g).max()
    e2 = np.abs(color.gamma709_decode(color.gamma709_encode(g)) - g).max()
    e3 = np.abs(color.M_709_TO_2020.sum(axis=1) - 1).max()
    return max(e1, e2) < 1e-6 and e3 < 1e-4, f"pq {e1:.2e}, gamma {e2:.2e}, rows {e3:.2e}"


def _metrics(rng) -> Tuple[bool, str]:
    a = rng.random((3, 32, 32))
    p, flag = metrics.psnr_detail(a, a)
    s, r, d = metrics.ssim(a, a), metrics.srsim(a, a), metrics.delta_e_itp(a, a)
    ok = flag and p == metrics.PSNR_CAP and s == 1.0 and abs(r - 1) <= 1e-9 and d == 0.0
    return ok, f"psnr {p} ssim {s} srsim {r} dE {d}"


def _equivariance(rng) -> Tuple[bool, str]:
    model = build_model(seed=1).eval()
    x = rng.random((3, 16, 16)).astype(np.float32)
    with no_grad():
        gfm = model.auct.modulation(model.auct.condition(Tensor(rng.random((3, 16, 16)))))
        perm = rng.permutation(16 * 16)
        xp = x.reshape(3, -1)[:, perm].reshape(3, 16, 16)
        y = model.auct.base(Tensor(x), gfm).data.reshape(3, -1)[:, perm].reshape(3, 16, 16)
        yp = model.auct.base(Tensor(xp), gfm).data
    return bool(np.array_equal(y, yp)), "base network under a random pixel permutation"


def _tiling(rng) -> Tuple[bool, str]:
    model = build_model(seed=2)
    for p in model.parameters():
        p.data = p.data + rng.normal(0, 0.02, p.shape).astype(np.float32)
    x = rng.random((3, 72, 88)).astype(np.float32)
    full = predict_image(model, x, workers=1, clamp=False)
    tiled = predict_image(model, x, tile=32, workers=1, clamp=False)
    err = float(np.abs(full - tiled).max())
    return err <= 1e-6, f"max diff {err:.2e}"


CHECKS: List[Tuple[str, Callable]] = [
    ("gradients", _gradchecks),
    ("colour round trips", lambda rng: _color()),
    ("metric identities", _metrics),
    ("permutation equivariance", _equivariance),
    ("tiling equivalence", _tiling),
]


def run(seed: int = 0) -> List[Tuple[str, bool, str]]:
    rng = np.random.default_rng(seed)
    results = []
    for name, check in CHECKS:
        try:
            ok, detail = check(rng)
        except Exception as e:  # a crash is a failed check, reported like the others
            ok, detail = False, f"{type(e).__name__}: {e}"
        results.append((name, bool(ok), detail))
    return results
