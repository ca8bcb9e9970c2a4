"""Central finite-difference verification of analytic gradients."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .tensor import Tensor


@dataclass
class GradReport:
    max_error: float
    worst: tuple | None = None  # (input index, flat coordinate)
    checked: int = 0
    errors: list = field(default_factory=list)  # per-input max error

    def passed(self, tol: float) -> bool:
        return bool(np.isfinite(self.max_error)) and self.max_error <= tol

    def describe(self) -> str:
        where = "" if self.worst is None else f" at input {self.worst[0]}, coordinate {self.worst[1]}"
        return f"max rel error {self.max_error:.3e}{where} over {self.checked} coordinates"


def numeric_grad(f: Callable[[], Tensor], x: Tensor, h: float, coords=None) -> np.ndarray:
    """Central differences of scalar ``f()`` w.r.t. ``x.data`` (perturbed in place)."""
    flat = x.data.reshape(-1)
    grad = np.full(flat.shape, np.nan)
    indices = range(flat.size) if coords is None else coords
    for i in indices:
        orig = flat[i]
        flat[i] = orig + h
        f_plus = float(f().data)
        flat[i] = orig - h
        f_minus = float(f().data)
        flat[i] = orig
        grad[i] = (f_plus - f_minus) / (2.0 * h)
    return grad.reshape(x.shape)


def finite_diff_check(f: Callable[[], Tensor], inputs: Sequence[Tensor], h: float = 1e-5,
                      max_coords: int | None = None, rng=None) -> GradReport:
    """Compare backward() of ``f`` against central differences.

    ``f`` is re-evaluated from scratch at every perturbation and must read the
    current values of ``inputs``. The error per coordinate is
    ``|analytic - numeric| / max(1, |numeric|)``; NaN anywhere is reported as
    an infinite error. ``max_coords`` caps the coordinates sampled per input.
    """
    if h <= 0:
        raise ValueError("step h must be positive")
    for t in inputs:
        t.grad = None
    f().backward()
    analytic = [np.zeros(t.shape) if t.grad is None else np.array(t.grad, dtype=np.float64)
                for t in inputs]

    rng = np.random.default_rng(0) if rng is None else rng
    report = GradReport(max_error=0.0)
    for k, t in enumerate(inputs):
        coords = None
        if max_coords is not None and t.size > max_coords:
            coords = np.sort(rng.choice(t.size, size=max_coords, replace=False))
        num = numeric_grad(f, t, h, coords).reshape(-1)
        ana = analytic[k].reshape(-1)
        sel = np.arange(t.size) if coords is None else coords
        err = np.abs(ana[sel] - num[sel]) / np.maximum(1.0, np.abs(num[sel]))
        err = np.where(np.isnan(err), np.inf, err)
        report.checked += len(sel)
        worst_here = float(err.max()) if len(err) else 0.0
        report.errors.append(worst_here)
        if len(err) and (report.worst is None or worst_here > report.max_error):
            report.max_error = worst_here
            report.worst = (k, int(sel[int(err.argmax())]))
    return report
