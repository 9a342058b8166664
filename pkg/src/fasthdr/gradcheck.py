"""Central finite-difference check of analytic gradients."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from . import ops
from .autograd import Tensor, backward, float64_mode, no_grad


@dataclass
class GradcheckReport:
    passed: bool
    max_error: float
    worst_input: int
    worst_index: tuple
    analytic: float
    numeric: float
    checked: int
    errors: list = field(default_factory=list, repr=False)

    def __bool__(self):
        return self.passed

    def summary(self) -> str:
        status = "pass" if self.passed else "FAIL"
        return (f"{status}: max rel err {self.max_error:.3e} at input {self.worst_input} "
                f"index {self.worst_index} (analytic {self.analytic:.6g}, numeric {self.numeric:.6g}); "
                f"{self.checked} elements")


def _projected(out: Tensor, proj: np.ndarray) -> float:
    return float(np.dot(out.data.astype(np.float64).ravel(), proj.ravel()))


def gradcheck(f: Callable[..., Tensor], inputs: Sequence[Tensor], delta: float = 1e-3,
              tol: float = 5e-3, max_elements: Optional[int] = None, seed: int = 0,
              floor: float = 1e-2) -> GradcheckReport:
    """Compare backward() against central differences for every input with requires_grad.

    ``f`` may return a tensor of any shape; it is reduced to a scalar by a
    fixed random projection. The analytic side runs in float32 as usual. The
    numeric side re-evaluates ``f`` with every tensor op promoted to float64,
    so the finite differences measure the function and not float32 rounding.
    The error for one element is ``|a - n| / max(|a|, |n|, floor * g)`` where
    ``g`` is the largest numeric gradient magnitude seen for that input.
    """
    rng = np.random.default_rng(seed)
    for t in inputs:
        t.zero_grad()
    out = f(*inputs)
    proj = rng.standard_normal(out.shape).astype(np.float32)
    loss = ops.sum(ops.mul(out, Tensor(proj)))
    backward(loss)
    proj64 = proj.astype(np.float64)

    originals = [t.data for t in inputs]
    for t in inputs:
        t.data = t.data.astype(np.float64)
    try:
        worst = (0.0, -1, (), 0.0, 0.0)
        errors = []
        checked = 0
        for k, t in enumerate(inputs):
            if not t.requires_grad:
                continue
            analytic = t.grad if t.grad is not None else np.zeros_like(t.data)
            idx = np.arange(t.size)
            if max_elements is not None and t.size > max_elements:
                idx = np.sort(rng.choice(t.size, size=max_elements, replace=False))
            flat = t.data.reshape(-1)
            numeric = np.empty(len(idx))
            for m, i in enumerate(idx):
                orig = flat[i]
                with no_grad(), float64_mode():
                    flat[i] = orig + delta
                    fp = _projected(f(*inputs), proj64)
                    flat[i] = orig - delta
                    fm = _projected(f(*inputs), proj64)
                flat[i] = orig
                numeric[m] = (fp - fm) / (2 * delta)
            a = analytic.reshape(-1)[idx].astype(np.float64)
            scale = max(np.abs(numeric).max(initial=0.0), 1e-12)
            denom = np.maximum(np.maximum(np.abs(a), np.abs(numeric)), floor * scale)
            err = np.abs(a - numeric) / denom
            checked += len(idx)
            errors.append(err)
            j = int(np.argmax(err)) if len(err) else 0
            if len(err) and err[j] > worst[0]:
                worst = (float(err[j]), k, np.unravel_index(idx[j], t.shape), float(a[j]), float(numeric[j]))
    finally:
        for t, d in zip(inputs, originals):
            t.data = d
    return GradcheckReport(passed=worst[0] <= tol, max_error=worst[0], worst_input=worst[1],
                           worst_index=tuple(int(v) for v in worst[2]), analytic=worst[3],
                           numeric=worst[4], checked=checked, errors=errors)
