"""The finite-difference oracle suite behind ``uanet gradcheck``.

Every differentiable op is checked on random inputs for several seeds, then
the composite PIGM, a UAFM fusion step for each case, and a whole toy
network. Losses are random linear probes of the outputs, so every output
coordinate contributes to the checked gradient. Everything runs in 64-bit.
"""

from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import functional as F
from .baseline import EncoderConfig
from .gradcheck import GradReport, finite_diff_check
from .model import ModelConfig, UANet
from .pigm import PIGM, pigm_forward
from .tensor import Tensor, concat, default_dtype, matmul, split
from .uafm import FusionBlock, FusionCase, uafm_fuse

TOLERANCE = 1e-4
STEP = 1e-5


@dataclass
class OracleResult:
    name: str
    seed: int
    report: GradReport
    seconds: float

    @property
    def passed(self) -> bool:
        return self.report.passed(TOLERANCE)

    def line(self) -> str:
        status = "ok  " if self.passed else "FAIL"
        return f"{status} {self.name:<28} seed {self.seed:<2} {self.report.describe()}"


def _var(rng, *shape, scale=1.0) -> Tensor:
    return Tensor(rng.normal(scale=scale, size=shape), requires_grad=True)


def _linear_probe(fn, rng, inputs):
    # the probe weights are drawn once, from the first forward's output shape
    weights = Tensor(rng.normal(size=fn().shape))
    return (lambda: (fn() * weights).sum()), inputs


def _case_add(rng):
    a, b = _var(rng, 3, 4), _var(rng, 4)
    return _linear_probe(lambda: a + b, rng, [a, b])


def _case_sub(rng):
    a, b = _var(rng, 2, 3, 1), _var(rng, 3, 5)
    return _linear_probe(lambda: a - b, rng, [a, b])


def _case_mul(rng):
    a, b = _var(rng, 2, 3, 4), _var(rng, 1, 4)
    return _linear_probe(lambda: a * b, rng, [a, b])


def _case_neg_div(rng):
    a = _var(rng, 3, 3)
    return _linear_probe(lambda: (-a) / 3.0, rng, [a])


def _case_sum_mean(rng):
    a = _var(rng, 2, 3, 4)
    return _linear_probe(lambda: concat([a.sum(axis=1).reshape(-1), a.mean(axis=(0, 2)).reshape(-1),
                                         a.sum().reshape(1), a.mean(axis=-1, keepdims=True).reshape(-1)],
                                        axis=0), rng, [a])


def _case_reshape_transpose(rng):
    a = _var(rng, 2, 6)
    return _linear_probe(lambda: a.reshape(3, 4).transpose2d(), rng, [a])


def _case_matmul(rng):
    a, b = _var(rng, 2, 3, 4), _var(rng, 2, 4, 5)
    return _linear_probe(lambda: matmul(a, b), rng, [a, b])


def _case_concat_split(rng):
    a, b = _var(rng, 2, 3, 3), _var(rng, 1, 3, 3)
    return _linear_probe(lambda: concat(split(concat([a, b], axis=0), axis=0)[::-1], axis=1), rng, [a, b])


def _conv_case(stride, padding, dilation, bias=True, batch=False):
    def build(rng):
        x = _var(rng, *((2,) if batch else ()), 3, 7, 7)
        w = _var(rng, 4, 3, 3, 3, scale=0.5)
        b = _var(rng, 4) if bias else None
        inputs = [x, w] + ([b] if bias else [])
        return _linear_probe(lambda: F.conv2d(x, w, b, stride, padding, dilation), rng, inputs)
    return build


def _case_maxpool(rng):
    x = _var(rng, 2, 3, 6, 6)
    return _linear_probe(lambda: F.maxpool2d(x, 2), rng, [x])


def _case_relu(rng):
    x = _var(rng, 4, 5)
    return _linear_probe(lambda: F.relu(x), rng, [x])


def _case_sigmoid(rng):
    x = _var(rng, 4, 5, scale=3.0)
    return _linear_probe(lambda: F.sigmoid(x), rng, [x])


def _case_softmax(rng):
    x = _var(rng, 3, 6, scale=2.0)
    return _linear_probe(lambda: concat([F.softmax(x, axis=-1), F.softmax(x, axis=0)], axis=0), rng, [x])


def _upsample_case(mode):
    def build(rng):
        x = _var(rng, 2, 3, 4)
        return _linear_probe(lambda: F.upsample(x, 2, mode), rng, [x])
    return build


def _case_flip(rng):
    x = _var(rng, 2, 3, 4)
    return _linear_probe(lambda: F.flip(x, -1) * F.flip(x, -2), rng, [x])


def _case_bce(rng):
    x = _var(rng, 1, 5, 5, scale=3.0)
    t = (rng.random((1, 5, 5)) < 0.5).astype(np.float64)
    return (lambda: F.bce_with_logits(x, t)), [x]


def _case_pigm(rng):
    f5, m5 = _var(rng, 3, 4, 4), _var(rng, 1, 4, 4)
    mod = PIGM("sc_cc")
    mod.alpha.data[...] = rng.normal()
    mod.beta.data[...] = rng.normal()
    return _linear_probe(lambda: pigm_forward(f5, m5, mod), rng, [f5, m5, mod.alpha, mod.beta])


def _uafm_case(case):
    def build(rng):
        block = FusionBlock(3, 2, case, rng)
        g, f = _var(rng, 3, 4, 4), _var(rng, 2, 8, 8)
        m = Tensor(rng.normal(scale=2.0, size=(1, 4, 4)))
        pf, pm = Tensor(rng.normal(size=(3, 8, 8))), Tensor(rng.normal(size=(1, 8, 8)))

        def loss():
            fused, logits = uafm_fuse(g, f, m, block)
            return (fused * pf).sum() + (logits * pm).sum()
        return loss, [g, f] + block.parameters()
    return build


TOY_ENCODER = dict(stage_channels=[4, 4, 8, 8, 8], convs_per_stage=1, dilation_rates=[1, 2],
                   head_channels=4)


def _case_toy_uanet(rng):
    net = UANet(ModelConfig(encoder=EncoderConfig(**TOY_ENCODER)), rng)
    # zero biases can park a ReLU exactly on its kink (all-zero input window);
    # jittering every parameter moves the check to a generic point
    for p in net.parameters():
        p.data += rng.normal(scale=0.05, size=p.shape)
    net.pigm.alpha.data[...] = 0.5
    net.pigm.beta.data[...] = 0.5
    x = Tensor(rng.random((3, 32, 32)), requires_grad=True)
    probes = {lv: Tensor(rng.normal(size=(1, 32 >> (lv - 1), 32 >> (lv - 1)))) for lv in range(1, 6)}

    def loss():
        maps = net(x)
        total = (maps[5] * probes[5]).sum()
        for lv in (4, 3, 2, 1):
            total = total + (maps[lv] * probes[lv]).sum()
        return total
    return loss, [x] + net.parameters()


# (name, builder); each builder maps a seeded rng to (loss closure, inputs)
OP_CASES: list = [
    ("add (broadcast)", _case_add),
    ("sub (broadcast)", _case_sub),
    ("mul (broadcast)", _case_mul),
    ("neg / div", _case_neg_div),
    ("sum / mean", _case_sum_mean),
    ("reshape / transpose", _case_reshape_transpose),
    ("matmul (batched)", _case_matmul),
    ("concat / split", _case_concat_split),
    ("conv2d", _conv_case(1, 1, 1)),
    ("conv2d stride 2", _conv_case(2, 0, 1, bias=False)),
    ("conv2d dilation 2", _conv_case(1, 2, 2, batch=True)),
    ("maxpool2d", _case_maxpool),
    ("relu", _case_relu),
    ("sigmoid", _case_sigmoid),
    ("softmax", _case_softmax),
    ("upsample nearest", _upsample_case("nearest")),
    ("upsample bilinear", _upsample_case("bilinear")),
    ("flip", _case_flip),
    ("bce_with_logits", _case_bce),
    ("pigm", _case_pigm),
] + [(f"uafm case {c.value}", _uafm_case(c)) for c in FusionCase]


def run_suite(seeds: int = 10, model_seeds: int = 2, model_coords: int | None = 48,
              report: Callable[[OracleResult], None] | None = None) -> list:
    """Run every case; ``report`` is called after each check (e.g. to print).

    The whole-network check samples ``model_coords`` coordinates from each
    input and parameter tensor (all of them when None); every tensor is
    still covered.
    """
    jobs = [(name, build, s, None) for name, build in OP_CASES for s in range(seeds)]
    jobs += [("toy uanet 3x32x32", _case_toy_uanet, s, model_coords) for s in range(model_seeds)]
    results = []
    with default_dtype(64):
        for name, build, seed, coords in jobs:
            start = time.perf_counter()
            rng = np.random.default_rng(seed)
            loss, inputs = build(rng)
            rep = finite_diff_check(loss, inputs, h=STEP, max_coords=coords, rng=rng)
            result = OracleResult(name, seed, rep, time.perf_counter() - start)
            results.append(result)
            if report is not None:
                report(result)
    return results
