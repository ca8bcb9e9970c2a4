"""Uncertainty ranking and uncertainty-aware top-down fusion.

A logit map ``M`` yields foreground and background uncertainty
``U_f = sigmoid(M) - 0.5`` and ``U_b = 0.5 - sigmoid(M)``. Each is bucketed
into integer ranks: negative values get 0, and ``[0, 0.5]`` is cut at
0.1, 0.2, 0.3, 0.4 into ranks 5 (most uncertain) down to 1. The ranks
multiply features as raw weights during fusion and are treated as
constants by backward.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from . import functional as F
from .nn import Conv2d, Module
from .tensor import ShapeError, Tensor, concat

# (lower bound inclusive, rank); the last bucket closes at 0.5
RANK_BUCKETS = ((0.0, 5), (0.1, 4), (0.2, 3), (0.3, 2), (0.4, 1))


class FusionCase(str, Enum):
    CASE1_CONCAT = "1"
    CASE2_SIGMOID = "2"
    CASE3_FG_ONLY = "3"
    CASE4_FULL = "4"


class UraFormula(str, Enum):
    PROSE = "prose"
    FLOOR = "floor"


class ContractError(ValueError):
    """Input outside the documented domain of an operation."""


@dataclass
class UncertaintyPair:
    fg: np.ndarray
    bg: np.ndarray


@dataclass
class RankMaps:
    fg: np.ndarray
    bg: np.ndarray


def _logits(m) -> np.ndarray:
    arr = m.data if isinstance(m, Tensor) else np.asarray(m, dtype=np.float64)
    if arr.ndim < 3 or arr.shape[-3] != 1:
        raise ShapeError(f"expected a single-channel logit map, got {arr.shape}")
    return arr


def uncertainty_maps(m) -> UncertaintyPair:
    p = F.sigmoid_np(_logits(m))
    return UncertaintyPair(fg=p - 0.5, bg=0.5 - p)


def ura(u, formula: UraFormula | str = UraFormula.PROSE) -> np.ndarray:
    """Bucket uncertainty values in ``[-0.5, 0.5]`` into ranks 0..5.

    ``floor`` evaluates ``floor((0.5 - U) / 0.1)`` for non-negative ``U``
    instead of the bucket table; it disagrees with the table (e.g. 0.05 -> 4)
    and is kept only for comparison runs.
    """
    u = np.asarray(u)
    if np.isnan(u).any() or (u < -0.5).any() or (u > 0.5).any():
        raise ContractError("uncertainty values must lie in [-0.5, 0.5]")
    formula = UraFormula(formula)
    if formula is UraFormula.FLOOR:
        ranks = np.where(u >= 0, np.floor((0.5 - u) / 0.1), 0)
        return ranks.astype(np.int8)
    ranks = np.full(u.shape, 5, dtype=np.int8)
    for lower, _ in RANK_BUCKETS[1:]:
        ranks -= (u >= lower).astype(np.int8)
    ranks[u < 0] = 0
    return ranks


def rank_maps(m, formula: UraFormula | str = UraFormula.PROSE) -> RankMaps:
    pair = uncertainty_maps(m)
    return RankMaps(fg=ura(pair.fg, formula), bg=ura(pair.bg, formula))


def rank_pgm_bytes(ranks: np.ndarray) -> np.ndarray:
    """Ranks 0..5 scaled to 0..255 for 8-bit export."""
    return (np.asarray(ranks, dtype=np.uint8) * 51).astype(np.uint8)


class FusionBlock(Module):
    """Fuse a deeper feature ``G_i`` with the next shallower ``F_{i-1}``.

    Returns the fused feature ``G_{i-1}`` and its logit map ``M_{i-1}``.
    All convolutions are linear (bias, no activation).
    """

    def __init__(self, g_channels: int, f_channels: int, case: FusionCase | str,
                 rng: np.random.Generator, formula: UraFormula | str = UraFormula.PROSE):
        self.case = FusionCase(case)
        self.formula = UraFormula(formula)
        copies = 2 if self.case is FusionCase.CASE4_FULL else 1
        if self.case is not FusionCase.CASE1_CONCAT:
            # scale-neutral when the prior is uninformative (M = 0): there every
            # rank weight is 5 and every sigmoid weight is 0.5
            gain = 2.0 if self.case is FusionCase.CASE2_SIGMOID else 1.0 / RANK_BUCKETS[0][1]
            self.reduce_g = Conv2d(copies * g_channels, g_channels, 1, rng, gain=gain)
            self.reduce_f = Conv2d(copies * f_channels, f_channels, 1, rng, gain=gain)
        self.fuse = Conv2d(f_channels + g_channels, g_channels, 3, rng)
        self.head = Conv2d(g_channels, 1, 3, rng)

    def weight_maps(self, m: Tensor) -> list:
        """Constant weighting rasters derived from the coarse logit map."""
        logits = _logits(m)
        if self.case is FusionCase.CASE2_SIGMOID:
            return [F.sigmoid_np(logits)]
        ranks = rank_maps(logits, self.formula)
        if self.case is FusionCase.CASE3_FG_ONLY:
            return [ranks.fg]
        return [ranks.fg, ranks.bg]

    def forward(self, g: Tensor, f: Tensor, m: Tensor):
        if g.ndim != f.ndim or f.shape[-2] != 2 * g.shape[-2] or f.shape[-1] != 2 * g.shape[-1]:
            raise ShapeError(f"shallower feature {f.shape} must be twice the extent of {g.shape}")
        if m.shape[-2:] != g.shape[-2:]:
            raise ShapeError(f"logit map {m.shape} does not match feature {g.shape}")
        axis = g.ndim - 3
        if self.case is FusionCase.CASE1_CONCAT:
            g_up = F.upsample(g, 2, "nearest")
            f_u = f
        else:
            weights = [Tensor(w.astype(g.dtype)) for w in self.weight_maps(m)]
            g_u = self.reduce_g(concat([w * g for w in weights], axis=axis))
            up = [F.upsample(w, 2, "nearest") for w in weights]
            f_u = self.reduce_f(concat([w * f for w in up], axis=axis))
            g_up = F.upsample(g_u, 2, "nearest")
        fused = self.fuse(concat([f_u, g_up], axis=axis))
        return fused, self.head(fused)


def uafm_fuse(g: Tensor, f: Tensor, m: Tensor, block: FusionBlock):
    return block(g, f, m)


class Cascade(Module):
    """Four fusion blocks from level 5 down to level 1."""

    def __init__(self, channels: int, case: FusionCase | str, rng: np.random.Generator,
                 formula: UraFormula | str = UraFormula.PROSE):
        self.blocks = [FusionBlock(channels, channels, case, rng, formula) for _ in range(4)]

    def forward(self, pyramid, g5: Tensor) -> dict:
        """Return ``{level: logits}`` for levels 5..1."""
        maps = {5: pyramid.M5}
        g = g5
        for step, level in enumerate(range(5, 1, -1)):
            g, maps[level - 1] = self.blocks[step](g, pyramid.level(level - 1), maps[level])
        return maps
