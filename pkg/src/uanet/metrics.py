"""Pixel confusion counts, IoU / F1 / precision / recall, uncertainty rasters.

Empty denominators follow one convention: the score is 1 when prediction
and truth agree that the relevant set is empty, otherwise 0.
"""

from __future__ import annotations

import io
from dataclasses import dataclass

import numpy as np

from .functional import sigmoid_np
from .tensor import ShapeError, Tensor

METRIC_NAMES = ("IoU", "F1", "Pre", "Recall")


@dataclass(frozen=True)
class Confusion:
    tp: int = 0
    fp: int = 0
    fn: int = 0
    tn: int = 0

    def __add__(self, other: "Confusion") -> "Confusion":
        return Confusion(self.tp + other.tp, self.fp + other.fp,
                         self.fn + other.fn, self.tn + other.tn)

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.fn + self.tn


def _arr(x) -> np.ndarray:
    return x.data if isinstance(x, Tensor) else np.asarray(x)


def confusion(pred_logits, gt) -> Confusion:
    """Threshold at probability 0.5 (logit >= 0 counts as building)."""
    logits, truth = _arr(pred_logits), _arr(gt)
    if logits.shape != truth.shape:
        raise ShapeError(f"prediction {logits.shape} vs ground truth {truth.shape}")
    pred = logits >= 0
    truth = truth > 0.5
    tp = int(np.count_nonzero(pred & truth))
    fp = int(np.count_nonzero(pred & ~truth))
    fn = int(np.count_nonzero(~pred & truth))
    return Confusion(tp, fp, fn, int(truth.size) - tp - fp - fn)


def iou(c: Confusion) -> float:
    denom = c.tp + c.fp + c.fn
    return 1.0 if denom == 0 else c.tp / denom


def precision(c: Confusion) -> float:
    denom = c.tp + c.fp
    if denom == 0:
        return 1.0 if c.fn == 0 else 0.0
    return c.tp / denom


def recall(c: Confusion) -> float:
    denom = c.tp + c.fn
    if denom == 0:
        return 1.0 if c.fp == 0 else 0.0
    return c.tp / denom


def f1(c: Confusion) -> float:
    p, r = precision(c), recall(c)
    if p + r == 0:
        return 0.0
    return 2 * p * r / (p + r)


def scores(c: Confusion) -> dict:
    return {"IoU": iou(c), "F1": f1(c), "Pre": precision(c), "Recall": recall(c)}


def uncertainty_visual(logits):
    """Per-pixel ``0.5 - |0.5 - sigmoid(logit)|`` and its mean."""
    p = sigmoid_np(_arr(logits).astype(np.float64))
    u = 0.5 - np.abs(0.5 - p)
    return u, float(u.mean())


def format_table(rows: dict) -> str:
    """Aligned percentages, two decimals; ``rows`` maps label -> scores dict."""
    label_w = max([5] + [len(str(k)) for k in rows])
    head = f"{'':<{label_w}}" + "".join(f"{name:>9}" for name in METRIC_NAMES)
    lines = [head]
    for label, s in rows.items():
        lines.append(f"{label:<{label_w}}" + "".join(f"{100 * s[m]:>9.2f}" for m in METRIC_NAMES))
    return "\n".join(lines)


def format_csv(rows: dict, label: str = "label", extra: dict | None = None) -> str:
    buf = io.StringIO()
    extra_cols = sorted(next(iter(extra.values())).keys()) if extra else []
    buf.write(",".join([label, *METRIC_NAMES, *extra_cols]) + "\n")
    for key, s in rows.items():
        cells = [str(key)] + [f"{100 * s[m]:.2f}" for m in METRIC_NAMES]
        cells += [str(extra[key][c]) for c in extra_cols] if extra else []
        buf.write(",".join(cells) + "\n")
    return buf.getvalue()
