"""Parameter-holding layers and a minimal module tree."""

from __future__ import annotations

from typing import Iterator, Optional

import numpy as np

from . import ops
from .tensor import Tensor


class Module:
    """Registers Tensor parameters and child modules assigned as attributes.

    Registration order is attribute-assignment order, which keeps parameter
    names and optimizer traversal deterministic.
    """

    def __init__(self):
        object.__setattr__(self, "_params", {})
        object.__setattr__(self, "_children", {})
        object.__setattr__(self, "training", True)

    def __setattr__(self, name, value):
        if isinstance(value, Tensor) and value.requires_grad:
            self._params[name] = value
        elif isinstance(value, Module):
            self._children[name] = value
        object.__setattr__(self, name, value)

    def add_module(self, name: str, module: "Module") -> None:
        self._children[name] = module

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        for name, p in self._params.items():
            yield prefix + name, p
        for name, child in self._children.items():
            yield from child.named_parameters(f"{prefix}{name}.")

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def named_modules(self, prefix: str = "") -> Iterator[tuple[str, "Module"]]:
        yield prefix.rstrip("."), self
        for name, child in self._children.items():
            yield from child.named_modules(f"{prefix}{name}.")

    def modules(self) -> list["Module"]:
        return [m for _, m in self.named_modules()]

    def train(self, mode: bool = True) -> "Module":
        for m in self.modules():
            object.__setattr__(m, "training", mode)
        return self

    def eval(self) -> "Module":
        return self.train(False)

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def num_parameters(self) -> int:
        return sum(p.size for p in self.parameters())

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)

    def forward(self, *args, **kwargs):
        raise NotImplementedError


def _uniform(rng: np.random.Generator, bound: float, shape) -> Tensor:
    data = rng.uniform(-bound, bound, size=shape).astype(np.float32)
    return Tensor(data, requires_grad=True)


class Conv2d(Module):
    """Bias-free "same"-padded convolution; He-uniform initialization."""

    def __init__(self, c_in: int, c_out: int, kernel: int, stride: int = 1,
                 rng: Optional[np.random.Generator] = None):
        super().__init__()
        rng = rng if rng is not None else np.random.default_rng(0)
        self.c_in, self.c_out, self.kernel, self.stride = c_in, c_out, kernel, stride
        fan_in = c_in * kernel * kernel
        self.weight = _uniform(rng, np.sqrt(6.0 / fan_in), (c_out, c_in, kernel, kernel))

    def forward(self, x: Tensor) -> Tensor:
        return ops.conv2d(x, self.weight, self.stride)


class BatchNorm2d(Module):
    def __init__(self, channels: int):
        super().__init__()
        self.channels = channels
        self.gamma = Tensor(np.ones(channels, np.float32), requires_grad=True)
        self.beta = Tensor(np.zeros(channels, np.float32), requires_grad=True)
        self.running_mean = np.zeros(channels, np.float32)
        self.running_var = np.ones(channels, np.float32)

    def forward(self, x: Tensor) -> Tensor:
        return ops.batch_norm(x, self.gamma, self.beta, self.running_mean,
                              self.running_var, self.training)


class Dense(Module):
    def __init__(self, c_in: int, c_out: int, rng: Optional[np.random.Generator] = None):
        super().__init__()
        rng = rng if rng is not None else np.random.default_rng(0)
        bound = 1.0 / np.sqrt(c_in)
        self.weight = _uniform(rng, bound, (c_in, c_out))
        self.bias = _uniform(rng, bound, (c_out,))

    def forward(self, x: Tensor) -> Tensor:
        return ops.dense(x, self.weight, self.bias)


class Sequential(Module):
    def __init__(self, *layers: Module):
        super().__init__()
        self.layers = list(layers)
        for i, layer in enumerate(layers):
            self.add_module(str(i), layer)

    def forward(self, x: Tensor) -> Tensor:
        for layer in self.layers:
            x = layer(x)
        return x
