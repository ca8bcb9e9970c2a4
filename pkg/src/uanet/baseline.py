"""Five-stage convolutional encoder, dilation enhancement blocks, FPN decoder."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import functional as F
from .nn import Conv2d, Module
from .tensor import ShapeError, Tensor, concat

RELU_GAIN = math.sqrt(2.0)


@dataclass
class EncoderConfig:
    stage_channels: list = field(default_factory=lambda: [8, 16, 32, 32, 32])
    convs_per_stage: int = 2
    dilation_rates: list = field(default_factory=lambda: [1, 2, 4])
    head_channels: int = 16

    def validate(self) -> None:
        if len(self.stage_channels) != 5:
            raise ValueError(f"stage_channels needs exactly 5 entries, got {self.stage_channels}")
        if any(int(c) < 1 for c in self.stage_channels):
            raise ValueError(f"stage_channels must be positive: {self.stage_channels}")
        if self.convs_per_stage < 1:
            raise ValueError("convs_per_stage must be >= 1")
        if not self.dilation_rates or any(int(r) < 1 for r in self.dilation_rates):
            raise ValueError(f"dilation_rates must be non-empty and >= 1: {self.dilation_rates}")
        if self.head_channels < 1:
            raise ValueError("head_channels must be >= 1")


@dataclass
class FeaturePyramid:
    """Decoder features ``F[0..4]`` (levels 1..5) and the coarse logit map ``M5``."""

    F: list
    M5: Tensor

    def level(self, i: int) -> Tensor:
        return self.F[i - 1]


def check_extent(image_shape: tuple) -> None:
    h, w = image_shape[-2:]
    if h % 16 or w % 16:
        raise ShapeError(f"image extent {h}x{w} must be divisible by 16")


class Encoder(Module):
    def __init__(self, cfg: EncoderConfig, rng: np.random.Generator, in_channels: int = 3):
        self.stages = []
        c_prev = in_channels
        for c in cfg.stage_channels:
            convs = []
            for _ in range(cfg.convs_per_stage):
                convs.append(Conv2d(c_prev, c, 3, rng, gain=RELU_GAIN))
                c_prev = c
            self.stages.append(convs)

    def named_parameters(self, prefix: str = ""):
        for s, convs in enumerate(self.stages):
            for j, conv in enumerate(convs):
                yield from conv.named_parameters(f"{prefix}stage{s + 1}.conv{j + 1}.")

    def forward(self, image: Tensor) -> list:
        check_extent(image.shape)
        feats = []
        x = image
        for s, convs in enumerate(self.stages):
            if s > 0:
                x = F.maxpool2d(x, 2)
            for conv in convs:
                x = F.relu(conv(x))
            feats.append(x)
        return feats


class DilationBlock(Module):
    """Parallel dilated 3x3 branches, 1x1 merge, residual add."""

    def __init__(self, channels: int, rates, rng: np.random.Generator):
        self.branches = [Conv2d(channels, channels, 3, rng, dilation=int(r), gain=RELU_GAIN)
                         for r in rates]
        self.merge = Conv2d(channels * len(self.branches), channels, 1, rng)

    def forward(self, x: Tensor) -> Tensor:
        axis = x.ndim - 3
        branches = [F.relu(b(x)) for b in self.branches]
        return self.merge(concat(branches, axis=axis)) + x


class FPNDecoder(Module):
    """Lateral 1x1 projections, additive nearest top-down merge, 3x3 smoothing."""

    def __init__(self, stage_channels, head_channels: int, rng: np.random.Generator):
        self.lateral = [Conv2d(c, head_channels, 1, rng) for c in stage_channels]
        self.smooth = [Conv2d(head_channels, head_channels, 3, rng) for _ in stage_channels]
        self.head = Conv2d(head_channels, 1, 3, rng)

    def forward(self, feats: list) -> FeaturePyramid:
        if len(feats) != 5:
            raise ShapeError(f"FPN needs 5 levels, got {len(feats)}")
        merged = [None] * 5
        top = self.lateral[4](feats[4])
        merged[4] = top
        for i in range(3, -1, -1):
            top = self.lateral[i](feats[i]) + F.upsample(top, 2, "nearest")
            merged[i] = top
        pyramid = [self.smooth[i](merged[i]) for i in range(5)]
        return FeaturePyramid(F=pyramid, M5=self.head(pyramid[4]))


class BaselineNet(Module):
    """Encoder + enhancement of E2..E5 + FPN; produces the uncertain map M5."""

    def __init__(self, cfg: EncoderConfig, rng: np.random.Generator):
        cfg.validate()
        self.cfg = cfg
        self.encoder = Encoder(cfg, rng)
        self.enhance = [DilationBlock(c, cfg.dilation_rates, rng) for c in cfg.stage_channels[1:]]
        self.decoder = FPNDecoder(cfg.stage_channels, cfg.head_channels, rng)

    def encode(self, image: Tensor) -> list:
        return self.encoder(image)

    def enhance_features(self, feats: list) -> list:
        return [feats[0]] + [blk(e) for blk, e in zip(self.enhance, feats[1:])]

    def forward(self, image: Tensor) -> FeaturePyramid:
        return self.decoder(self.enhance_features(self.encode(image)))
