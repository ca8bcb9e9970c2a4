"""Deep-supervision loss, AdamW with cosine decay, and the training loop."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import functional as F
from .config import RunConfig, save_config, to_ini
from .data import Scene, generate_dataset, split_even_odd, stack_batch
from .model import UANet
from .serialization import save_archive
from .tensor import DTYPES, ShapeError, Tensor, default_dtype
from .uafm import ContractError

log = logging.getLogger(__name__)


class TrainingAborted(RuntimeError):
    def __init__(self, step: int, checkpoint):
        super().__init__(f"non-finite loss at step {step}; last good checkpoint: {checkpoint}")
        self.step = step
        self.checkpoint = checkpoint


# ----------------------------------------------------------------------
# loss


def deep_supervision_loss(maps: dict, gt):
    """Sum of BCE terms, each map bilinearly upsampled to the mask extent.

    Returns ``(total, {level: term})``.
    """
    target = gt.data if isinstance(gt, Tensor) else np.asarray(gt)
    if 1 in maps and maps[1].shape != target.shape:
        raise ShapeError(f"finest map {maps[1].shape} does not match ground truth {target.shape}")
    total = None
    terms = {}
    for level in sorted(maps, reverse=True):
        m = maps[level]
        factor = target.shape[-1] // m.shape[-1]
        if m.shape[-1] * factor != target.shape[-1] or m.shape[-2] * factor != target.shape[-2]:
            raise ShapeError(f"level {level} map {m.shape} does not tile ground truth {target.shape}")
        term = F.bce_with_logits(F.upsample(m, factor, "bilinear"), target)
        terms[level] = term
        total = term if total is None else total + term
    return total, terms


# ----------------------------------------------------------------------
# optimizer


def cosine_factor(step: int, total_steps: int) -> float:
    step = min(max(step, 0), total_steps)
    return 0.5 * (1.0 + math.cos(math.pi * step / total_steps))


class AdamW:
    """Bias-corrected Adam with decoupled weight decay and a cosine learning rate."""

    def __init__(self, params, lr: float = 1e-3, betas=(0.9, 0.999), eps: float = 1e-8,
                 weight_decay: float = 0.0, total_steps: int = 1):
        self.params = list(params)
        self.base_lr = lr
        self.betas = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.total_steps = total_steps
        self.step_count = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    @property
    def lr(self) -> float:
        return self.base_lr * cosine_factor(self.step_count, self.total_steps)

    def step(self) -> None:
        for i, p in enumerate(self.params):
            if p.grad is None:
                raise RuntimeError(f"parameter {i} {p.shape} has no gradient")
        lr = self.lr
        b1, b2 = self.betas
        self.step_count += 1
        c1 = 1.0 - b1 ** self.step_count
        c2 = 1.0 - b2 ** self.step_count
        for p, m, v in zip(self.params, self.m, self.v):
            g = p.grad
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            update = (m / c1) / (np.sqrt(v / c2) + self.eps)
            if self.weight_decay:
                p.data = p.data - (lr * self.weight_decay) * p.data
            p.data = (p.data - lr * update).astype(p.dtype, copy=False)

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None


def adamw_step(params, state: AdamW) -> None:
    state.step()


# ----------------------------------------------------------------------
# loop


def flip_pair(image: np.ndarray, mask: np.ndarray, horizontal: bool, vertical: bool):
    """Flip an image and its mask together along the spatial axes."""
    if horizontal:
        image, mask = image[..., ::-1], mask[..., ::-1]
    if vertical:
        image, mask = image[..., ::-1, :], mask[..., ::-1, :]
    return image, mask


@dataclass
class TrainResult:
    model: UANet
    log: list = field(default_factory=list)  # rows: dict(step, lr, loss, levels...)
    checkpoint: Path | None = None

    def loss_csv(self) -> str:
        if not self.log:
            return ""
        levels = sorted(self.log[0]["levels"], reverse=True)
        lines = ["step,lr,loss," + ",".join(f"loss_m{lv}" for lv in levels)]
        for row in self.log:
            cells = [str(row["step"]), repr(row["lr"]), repr(row["loss"])]
            cells += [repr(row["levels"][lv]) for lv in levels]
            lines.append(",".join(cells))
        return "\n".join(lines) + "\n"


def build_model(cfg: RunConfig) -> UANet:
    with default_dtype(cfg.bits):
        return UANet.from_seed(cfg.model, cfg.sub_seed("init"))


def connected_parameters(model: UANet, image: np.ndarray) -> list:
    """Parameters that the output maps actually depend on.

    The baseline-only network leaves the level 1..4 decoder convolutions
    dangling; a probe backward pass on a blank image separates them out so the
    optimizer still insists on a gradient for everything it owns.
    """
    params = model.parameters()
    for p in params:
        p.grad = None
    maps = model(Tensor(image[None]))
    total = None
    for m in maps.values():
        total = m.sum() if total is None else total + m.sum()
    total.backward()
    connected = [p for p in params if p.grad is not None]
    for p in params:
        p.grad = None
    return connected


def make_datasets(cfg: RunConfig):
    """Generate ``train_scenes`` + ``val_scenes`` scenes and split even/odd."""
    n_train, n_val = cfg.data.train_scenes, cfg.data.val_scenes
    total = max(2 * n_train, 2 * n_val)
    scenes = generate_dataset(cfg.data.scene_spec(), total, cfg.sub_seed("data"))
    train, val = split_even_odd(scenes)
    return train[:n_train], val[:n_val]


def predict(model: UANet, scenes: list, bits: int = 32, batch_size: int = 16) -> list:
    """Per-scene ``{level: logits}`` (numpy, unbatched), in scene order."""
    dtype = DTYPES[bits]
    out = []
    for start in range(0, len(scenes), batch_size):
        images, _ = stack_batch(scenes[start : start + batch_size], dtype)
        maps = model(Tensor(images))
        for k in range(images.shape[0]):
            out.append({lv: m.data[k] for lv, m in maps.items()})
    return out


def train(cfg: RunConfig, dataset: list, out_dir=None, eval_every: int = 0,
          stop_when=None) -> TrainResult:
    """Fit a fresh model on ``dataset`` (a list of :class:`Scene`).

    ``stop_when(model, step)`` is consulted every ``eval_every`` steps and
    ends training early when it returns True.
    """
    if not dataset:
        raise ValueError("dataset is empty")
    cfg.validate()
    dtype = DTYPES[cfg.bits]
    model = build_model(cfg)
    images_all, masks_all = stack_batch(dataset, dtype)
    params = connected_parameters(model, np.zeros_like(images_all[0]))
    opt = AdamW(params, lr=cfg.optim.lr, betas=(cfg.optim.beta1, cfg.optim.beta2),
                eps=cfg.optim.eps, weight_decay=cfg.optim.weight_decay,
                total_steps=cfg.optim.steps)
    rng = np.random.default_rng(cfg.sub_seed("augment"))
    batch = min(cfg.optim.batch_size, len(dataset))
    out_dir = Path(out_dir) if out_dir is not None else None
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
        save_config(out_dir / "config.ini", cfg)

    result = TrainResult(model=model)
    last_good = model.state_dict()
    order = np.empty(0, dtype=int)
    for step in range(cfg.optim.steps):
        if len(order) < batch:
            order = np.concatenate([order, rng.permutation(len(dataset))])
        idx, order = order[:batch], order[batch:]
        flips = rng.random((batch, 2)) < 0.5 if cfg.optim.augment else np.zeros((batch, 2), bool)
        imgs, masks = [], []
        for k, j in enumerate(idx):
            im, mk = flip_pair(images_all[j], masks_all[j], *flips[k])
            imgs.append(im)
            masks.append(mk)
        x = Tensor(np.ascontiguousarray(np.stack(imgs)))
        gt = np.ascontiguousarray(np.stack(masks))

        lr = opt.lr
        try:
            maps = model(x)
        except ContractError:
            # non-finite logits reached the rank algorithm
            value = math.nan
        else:
            loss, terms = deep_supervision_loss(maps, gt)
            value = float(loss.data)
        if not np.isfinite(value):
            ckpt = None
            if out_dir is not None:
                ckpt = out_dir / "last_good.uatz"
                save_archive(ckpt, last_good)
            raise TrainingAborted(step, ckpt)
        opt.zero_grad()
        loss.backward()
        last_good = model.state_dict()
        opt.step()
        result.log.append({"step": step, "lr": lr, "loss": value,
                           "levels": {lv: float(t.data) for lv, t in terms.items()}})
        if eval_every and stop_when is not None and (step + 1) % eval_every == 0:
            if stop_when(model, step + 1):
                break

    if out_dir is not None:
        result.checkpoint = out_dir / "checkpoint.uatz"
        save_checkpoint(result.checkpoint, model, cfg)
        (out_dir / "loss.csv").write_text(result.loss_csv())
    return result


def save_checkpoint(path, model: UANet, cfg: RunConfig) -> None:
    save_archive(path, model.state_dict(), extras={"config.ini": to_ini(cfg)})


def load_checkpoint(path):
    """Rebuild ``(model, cfg)`` from a checkpoint written by :func:`save_checkpoint`."""
    from .config import from_ini
    from .serialization import load_archive, read_archive_text

    text = read_archive_text(path, "config.ini")
    if text is None:
        raise ValueError(f"{path}: checkpoint carries no config.ini")
    cfg = from_ini(text).validate()
    model = build_model(cfg)
    model.load_state_dict(load_archive(path))
    return model, cfg


def to_extent(logits: np.ndarray, extent: int) -> np.ndarray:
    """Bilinearly upsample a logit map to ``extent`` (same rule as the loss)."""
    factor = extent // logits.shape[-1]
    return F.upsample(Tensor(logits), factor, "bilinear").data


def evaluate(model: UANet, scenes: list, bits: int = 32) -> dict:
    """Dataset-level confusion and mean uncertainty per output level.

    Returns ``{level: {"confusion": Confusion, "uncertainty": float}}``; the
    uncertainty is averaged over scenes at each map's native resolution.
    """
    from .metrics import Confusion, confusion, uncertainty_visual

    totals: dict = {}
    for scene, maps in zip(scenes, predict(model, scenes, bits)):
        for level, logits in maps.items():
            entry = totals.setdefault(level, {"confusion": Confusion(), "uncertainty": 0.0})
            up = to_extent(logits, scene.mask.shape[-1])
            entry["confusion"] = entry["confusion"] + confusion(up, scene.mask)
            entry["uncertainty"] += uncertainty_visual(logits)[1] / len(scenes)
    return totals
