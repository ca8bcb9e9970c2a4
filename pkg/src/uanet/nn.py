"""Parameter containers and the convolution layer."""

from __future__ import annotations

import math

import numpy as np

from . import functional as F
from .tensor import Tensor, get_default_dtype


class Module:
    """Collects parameters from attributes, in definition order."""

    def named_parameters(self, prefix: str = ""):
        for name, value in vars(self).items():
            key = f"{prefix}{name}"
            if isinstance(value, Tensor) and value.requires_grad:
                yield key, value
            elif isinstance(value, Module):
                yield from value.named_parameters(key + ".")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{key}.{i}.")
                    elif isinstance(item, Tensor) and item.requires_grad:
                        yield f"{key}.{i}", item

    def parameters(self) -> list:
        return [p for _, p in self.named_parameters()]

    def state_dict(self) -> dict:
        return {name: p.data.copy() for name, p in self.named_parameters()}

    def load_state_dict(self, state: dict) -> None:
        params = dict(self.named_parameters())
        missing = sorted(set(params) - set(state))
        unexpected = sorted(set(state) - set(params))
        if missing or unexpected:
            raise KeyError(f"state mismatch: missing={missing} unexpected={unexpected}")
        for name, p in params.items():
            arr = np.asarray(state[name])
            if arr.shape != p.shape:
                raise ValueError(f"{name}: shape {arr.shape} != {p.shape}")
            p.data = arr.astype(p.dtype, copy=True)

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def num_parameters(self) -> int:
        return sum(p.size for p in self.parameters())

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)


class Conv2d(Module):
    """``k x k`` convolution with bias.

    Weights are drawn uniformly with a fan-in scaled bound
    ``gain * sqrt(3 / fan_in)``; use ``gain=sqrt(2)`` ahead of a ReLU and
    ``gain=1`` for linear layers. Biases start at zero.
    """

    def __init__(self, c_in: int, c_out: int, k: int, rng: np.random.Generator,
                 dilation: int = 1, gain: float = 1.0, dtype=None):
        dtype = dtype or get_default_dtype()
        fan_in = c_in * k * k
        bound = gain * math.sqrt(3.0 / fan_in)
        self.weight = Tensor(rng.uniform(-bound, bound, size=(c_out, c_in, k, k)).astype(dtype),
                             requires_grad=True)
        self.bias = Tensor(np.zeros(c_out, dtype=dtype), requires_grad=True)
        self.dilation = dilation
        self.padding = dilation * (k - 1) // 2

    def forward(self, x: Tensor) -> Tensor:
        return F.conv2d(x, self.weight, self.bias, stride=1,
                        padding=self.padding, dilation=self.dilation)
