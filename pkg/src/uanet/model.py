"""The assembled network: baseline decoder, prior-guided refinement, fusion cascade."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .baseline import BaselineNet, EncoderConfig
from .nn import Module
from .pigm import PIGM, PigmMode
from .tensor import Tensor
from .uafm import Cascade, FusionCase, UraFormula


@dataclass
class ModelConfig:
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    pigm_mode: PigmMode = PigmMode.SC_CC
    uafm_case: FusionCase = FusionCase.CASE4_FULL
    ura_formula: UraFormula = UraFormula.PROSE
    # False leaves only the baseline decoder and its M5 output
    cascade: bool = True

    def __post_init__(self):
        self.pigm_mode = PigmMode(self.pigm_mode)
        self.uafm_case = FusionCase(self.uafm_case)
        self.ura_formula = UraFormula(self.ura_formula)

    def validate(self) -> None:
        self.encoder.validate()

    @property
    def output_levels(self) -> list:
        return [5, 4, 3, 2, 1] if self.cascade else [5]


class UANet(Module):
    def __init__(self, cfg: ModelConfig, rng: np.random.Generator):
        cfg.validate()
        self.cfg = cfg
        self.baseline = BaselineNet(cfg.encoder, rng)
        if cfg.cascade:
            self.pigm = PIGM(cfg.pigm_mode)
            self.cascade = Cascade(cfg.encoder.head_channels, cfg.uafm_case, rng, cfg.ura_formula)

    @classmethod
    def from_seed(cls, cfg: ModelConfig, seed: int) -> "UANet":
        return cls(cfg, np.random.default_rng(seed))

    def forward(self, image: Tensor) -> dict:
        """Logit maps keyed by level (5 = coarsest, 1 = full resolution)."""
        pyramid = self.baseline(image)
        if not self.cfg.cascade:
            return {5: pyramid.M5}
        g5 = self.pigm(pyramid.level(5), pyramid.M5)
        return self.cascade(pyramid, g5)
