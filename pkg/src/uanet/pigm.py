"""Prior-guided refinement of the deepest decoder feature.

The coarse logit map steers the deepest feature twice: a per-channel
spatial cross-attention against the map, then a channel gate computed from
the attended feature and the map. Both stages are residual with learnable
scalar gains that start at zero, so a fresh module is an exact identity.
"""

from __future__ import annotations

from enum import Enum

import numpy as np

from . import functional as F
from .nn import Module
from .tensor import ShapeError, Tensor, concat, get_default_dtype, matmul, split


class PigmMode(str, Enum):
    OFF = "off"
    SC_ONLY = "sc"
    CC_ONLY = "cc"
    SC_CC = "sc_cc"


def _batched(feature: Tensor, prior: Tensor):
    if feature.ndim != prior.ndim or feature.ndim not in (3, 4):
        raise ShapeError(f"feature {feature.shape} and prior {prior.shape} must both be 3-d or 4-d")
    if prior.shape[-3] != 1 or feature.shape[-2:] != prior.shape[-2:]:
        raise ShapeError(f"prior {prior.shape} must be one channel matching feature {feature.shape}")
    if feature.ndim == 3:
        return feature.reshape((1,) + feature.shape), prior.reshape((1,) + prior.shape), True
    if feature.shape[0] != prior.shape[0]:
        raise ShapeError(f"batch mismatch: {feature.shape} vs {prior.shape}")
    return feature, prior, False


def attention_maps(feature: Tensor, prior: Tensor) -> list:
    """Per-channel ``N x N`` relation maps, softmax-normalized over the key axis."""
    f, m, _ = _batched(feature, prior)
    b, c, h, w = f.shape
    n = h * w
    keys = m.reshape(b, 1, n)
    return [F.softmax(matmul(ch.reshape(b, n, 1), keys), axis=-1) for ch in split(f, axis=1)]


def spatial_cross_attention(feature: Tensor, prior: Tensor, alpha: Tensor) -> Tensor:
    f, m, squeeze = _batched(feature, prior)
    b, c, h, w = f.shape
    n = h * w
    keys = m.reshape(b, 1, n)
    attended = []
    # one channel at a time keeps peak memory at a single N x N map
    for ch in split(f, axis=1):
        relation = F.softmax(matmul(ch.reshape(b, n, 1), keys), axis=-1)
        attended.append(matmul(ch.reshape(b, 1, n), relation).reshape(b, 1, h, w))
    out = alpha * concat(attended, axis=1) + f
    return out.reshape(feature.shape) if squeeze else out


def channel_weights(feature: Tensor, prior: Tensor) -> Tensor:
    """Sigmoid of feature-prior inner products, one weight per channel (``B x C x 1``)."""
    f, m, _ = _batched(feature, prior)
    b, c, h, w = f.shape
    n = h * w
    return F.sigmoid(matmul(f.reshape(b, c, n), m.reshape(b, n, 1)))


def channel_gate(feature: Tensor, prior: Tensor, beta: Tensor) -> Tensor:
    f, m, squeeze = _batched(feature, prior)
    b, c, h, w = f.shape
    gate = channel_weights(f, m).reshape(b, c, 1, 1)
    out = beta * gate * f + f
    return out.reshape(feature.shape) if squeeze else out


class PIGM(Module):
    def __init__(self, mode: PigmMode | str = PigmMode.SC_CC, dtype=None):
        dtype = dtype or get_default_dtype()
        self.mode = PigmMode(mode)
        # gains of disabled stages are frozen so they never wait on a gradient
        uses_sc = self.mode in (PigmMode.SC_ONLY, PigmMode.SC_CC)
        uses_cc = self.mode in (PigmMode.CC_ONLY, PigmMode.SC_CC)
        self.alpha = Tensor(np.zeros((), dtype=dtype), requires_grad=uses_sc)
        self.beta = Tensor(np.zeros((), dtype=dtype), requires_grad=uses_cc)

    def forward(self, feature: Tensor, prior: Tensor) -> Tensor:
        if self.mode is PigmMode.OFF:
            _batched(feature, prior)
            return feature
        out = feature
        if self.mode in (PigmMode.SC_ONLY, PigmMode.SC_CC):
            out = spatial_cross_attention(out, prior, self.alpha)
        if self.mode in (PigmMode.CC_ONLY, PigmMode.SC_CC):
            out = channel_gate(out, prior, self.beta)
        return out


def pigm_forward(feature: Tensor, prior: Tensor, params: PIGM) -> Tensor:
    return params(feature, prior)
