"""Parameter containers and the two convolution layers the networks are built from."""
from __future__ import annotations

from typing import Callable, Dict, Iterator, Tuple, Union

import numpy as np

from . import ops
from .autograd import Tensor
from .init import init_param, param_seed

InitRule = Union[str, Callable[[tuple, int], np.ndarray]]


class Module:
    """Named tree of trainable tensors and non-trainable buffers."""

    def __init__(self):
        self.training = True
        self._params: Dict[str, Tensor] = {}
        self._inits: Dict[str, InitRule] = {}
        self._buffers: Dict[str, np.ndarray] = {}
        self._modules: Dict[str, "Module"] = {}

    def add_param(self, name: str, shape, init: InitRule = "fan_in_uniform") -> Tensor:
        t = Tensor(np.zeros(shape, np.float32), requires_grad=True, name=name)
        self._params[name] = t
        self._inits[name] = init
        return t

    def add_buffer(self, name: str, array: np.ndarray) -> np.ndarray:
        self._buffers[name] = array
        return array

    def add_module(self, name: str, module: "Module") -> "Module":
        self._modules[name] = module
        return module

    def named_parameters(self, prefix: str = "") -> Iterator[Tuple[str, Tensor]]:
        for name, t in self._params.items():
            yield prefix + name, t
        for mname, m in self._modules.items():
            yield from m.named_parameters(f"{prefix}{mname}.")

    def parameters(self):
        return [t for _, t in self.named_parameters()]

    def named_buffers(self, prefix: str = "") -> Iterator[Tuple[str, np.ndarray]]:
        for name, b in self._buffers.items():
            yield prefix + name, b
        for mname, m in self._modules.items():
            yield from m.named_buffers(f"{prefix}{mname}.")

    def _named_inits(self, prefix: str = ""):
        for name, t in self._params.items():
            yield prefix + name, t, self._inits[name]
        for mname, m in self._modules.items():
            yield from m._named_inits(f"{prefix}{mname}.")

    def reset_parameters(self, seed: int):
        """Initialise every parameter from ``seed`` and its dotted name."""
        for name, t, rule in self._named_inits():
            s = param_seed(seed, name)
            t.data = init_param(t.shape, rule, s) if isinstance(rule, str) else \
                np.ascontiguousarray(rule(t.shape, s), dtype=np.float32)
            t.grad = None
        for _, m in self._walk():
            m.reset_buffers()

    def reset_buffers(self):
        pass

    def _walk(self, prefix=""):
        yield prefix, self
        for mname, m in self._modules.items():
            yield from m._walk(f"{prefix}{mname}.")

    def train(self, mode: bool = True) -> "Module":
        for _, m in self._walk():
            m.training = mode
        return self

    def eval(self) -> "Module":
        return self.train(False)

    def num_parameters(self) -> int:
        return int(sum(t.size for t in self.parameters()))

    def zero_grad(self):
        for t in self.parameters():
            t.grad = None

    def state_dict(self) -> Dict[str, np.ndarray]:
        state = {name: t.data for name, t in self.named_parameters()}
        state.update({name: b for name, b in self.named_buffers()})
        return state

    def load_state_dict(self, state: Dict[str, np.ndarray]):
        params = dict(self.named_parameters())
        buffers = dict(self.named_buffers())
        unknown = set(state) - set(params) - set(buffers)
        missing = (set(params) | set(buffers)) - set(state)
        if unknown or missing:
            raise KeyError(f"state mismatch: unknown {sorted(unknown)}, missing {sorted(missing)}")
        for name, t in params.items():
            arr = np.asarray(state[name], dtype=np.float32)
            if arr.shape != t.shape:
                raise ValueError(f"{name}: expected shape {t.shape}, got {arr.shape}")
            t.data = arr.copy()
        for name, b in buffers.items():
            arr = np.asarray(state[name], dtype=np.float32)
            if arr.shape != b.shape:
                raise ValueError(f"{name}: expected shape {b.shape}, got {arr.shape}")
            b[...] = arr


class Conv1x1(Module):
    def __init__(self, cin: int, cout: int, weight_init: InitRule = "fan_in_uniform",
                 bias_init: InitRule = "zeros"):
        super().__init__()
        self.cin, self.cout = cin, cout
        self.weight = self.add_param("weight", (cout, cin), weight_init)
        self.bias = self.add_param("bias", (cout,), bias_init)

    def __call__(self, x):
        return ops.conv1x1(x, self.weight, self.bias)

    def macs(self, h: int, w: int) -> int:
        return self.cout * self.cin * h * w


class Conv3x3(Module):
    def __init__(self, cin: int, cout: int, stride: int = 1, weight_init: InitRule = "fan_in_uniform",
                 bias_init: InitRule = "zeros"):
        super().__init__()
        self.cin, self.cout, self.stride = cin, cout, stride
        self.weight = self.add_param("weight", (cout, cin, 3, 3), weight_init)
        self.bias = self.add_param("bias", (cout,), bias_init)

    def __call__(self, x):
        return ops.conv3x3(x, self.weight, self.bias, self.stride)

    def out_size(self, h: int, w: int) -> Tuple[int, int]:
        return (h - 1) // self.stride + 1, (w - 1) // self.stride + 1

    def macs(self, h: int, w: int) -> int:
        ho, wo = self.out_size(h, w)
        return self.cout * self.cin * 9 * ho * wo
