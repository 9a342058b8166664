"""Dense float32 tensors with reverse-mode differentiation.

Every primitive op in :mod:`fasthdr.ops` records a :class:`Node` on its
output when gradient recording is enabled. :func:`backward` collects the
nodes reachable from a scalar loss and replays them in reverse execution
order, so each op is visited exactly once.
"""
from __future__ import annotations

import itertools
import threading
from contextlib import contextmanager
from typing import Callable, Optional, Sequence

import numpy as np

_state = threading.local()
_seq = itertools.count()


def is_grad_enabled() -> bool:
    return getattr(_state, "enabled", True)


def default_dtype():
    """float32 normally; float64 inside :func:`float64_mode` (used by the gradient checker)."""
    return getattr(_state, "dtype", np.float32)


@contextmanager
def float64_mode():
    prev = default_dtype()
    _state.dtype = np.float64
    try:
        yield
    finally:
        _state.dtype = prev


@contextmanager
def no_grad():
    """Disable graph recording in the current thread."""
    prev = is_grad_enabled()
    _state.enabled = False
    try:
        yield
    finally:
        _state.enabled = prev


class GraphError(RuntimeError):
    pass


class Node:
    """One executed primitive: its inputs and the rule mapping dL/dout to dL/dinputs."""

    __slots__ = ("op", "inputs", "backward_fn", "seq")

    def __init__(self, op: str, inputs: Sequence["Tensor"], backward_fn: Callable):
        self.op = op
        self.inputs = tuple(inputs)
        self.backward_fn = backward_fn
        self.seq = next(_seq)

    def __repr__(self):
        return f"Node({self.op}, seq={self.seq})"


class Tensor:
    """N-dimensional float32 array with an optional gradient buffer."""


    __slots__ = ("data", "grad", "requires_grad", "node", "name", "__weakref__")

    def __init__(self, data, requires_grad: bool = False, name: Optional[str] = None):
        self.data = np.ascontiguousarray(data, dtype=default_dtype())
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = bool(requires_grad)
        self.node: Optional[Node] = None
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self):
        self.grad = None

    def backward(self):
        return backward(self)

    def __repr__(self):
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad}{tag})"

    # arithmetic sugar; the ops module owns the definitions
    def __add__(self, other):
        from . import ops
        return ops.add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        from . import ops
        return ops.sub(self, other)

    def __rsub__(self, other):
        from . import ops
        return ops.sub(other, self)

    def __mul__(self, other):
        from . import ops
        return ops.mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        from . import ops
        return ops.mul(self, -1.0)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def make_output(data: np.ndarray, op: str, inputs: Sequence[Tensor], backward_fn: Callable) -> Tensor:
    """Wrap an op result, attaching a graph node if any input needs a gradient."""
    out = Tensor(data)
    if is_grad_enabled() and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        out.node = Node(op, inputs, backward_fn)
    return out


def backward(loss: Tensor) -> list:
    """Populate ``.grad`` of every leaf reachable from the scalar ``loss``.

    Returns the visited nodes in the order they were replayed (reverse
    execution order).
    """
    if loss.size != 1:
        raise GraphError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        raise GraphError("backward on a tensor that is detached from any graph")

    if loss.node is None:
        loss.grad = np.ones_like(loss.data) if loss.grad is None else loss.grad + 1.0
        return []

    nodes = {}
    stack = [loss.node]
    while stack:
        n = stack.pop()
        if n.seq in nodes:
            continue
        nodes[n.seq] = n
        for t in n.inputs:
            if t.node is not None and t.node.seq not in nodes:
                stack.append(t.node)

    order = [nodes[k] for k in sorted(nodes, reverse=True)]
    # gradients of intermediate tensors, keyed by the seq of the node that made them
    pending = {loss.node.seq: np.ones_like(loss.data)}
    for n in order:
        out_grad = pending.pop(n.seq, None)
        if out_grad is None:
            continue
        for t, g in zip(n.inputs, n.backward_fn(out_grad)):
            if g is None or not t.requires_grad:
                continue
            if g.dtype != t.data.dtype:
                g = g.astype(t.data.dtype)
            if t.node is None:
                t.grad = g.copy() if t.grad is None else t.grad + g
            elif t.node.seq in pending:
                pending[t.node.seq] = pending[t.node.seq] + g
            else:
                pending[t.node.seq] = g
    return order
