"""SGD with momentum under a poly learning-rate schedule, for streams and fusion."""

from __future__ import annotations

import csv
import io
import logging
from dataclasses import dataclass, fields
from typing import Sequence

import numpy as np

from . import network
from .numerics import pixel_cross_entropy
from .network import Params, StreamConfig

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    base_lr: float = 0.01
    power: float = 0.9
    momentum: float = 0.9
    weight_decay: float = 0.0005
    max_iters: int = 2000
    batch_size: int = 2
    seed: int = 0

    def __post_init__(self):
        if self.base_lr <= 0:
            raise ValueError(f"base_lr must be positive, got {self.base_lr}")
        if not 0 < self.momentum < 1:
            raise ValueError(f"momentum must lie in (0, 1), got {self.momentum}")
        if self.weight_decay < 0:
            raise ValueError(f"weight_decay must be >= 0, got {self.weight_decay}")
        if self.max_iters < 1 or self.batch_size < 1:
            raise ValueError("max_iters and batch_size must be >= 1")

    @classmethod
    def field_names(cls) -> tuple[str, ...]:
        return tuple(f.name for f in fields(cls))


@dataclass
class LossRecord:
    iter: int
    lr: float
    loss: float


def poly_lr(base_lr: float, iter: int, max_iters: int, power: float) -> float:
    if not 0 <= iter <= max_iters:
        raise ValueError(f"iter {iter} outside [0, {max_iters}]")
    return base_lr * (1.0 - iter / max_iters) ** power


def sgd_momentum_step(
    params: Params,
    grads: Params,
    velocity: Params,
    lr: float,
    momentum: float,
    weight_decay: float,
) -> tuple[Params, Params]:
    """v <- momentum*v + (g + wd*p);  p <- p - lr*v.  Returns new dicts."""
    new_p, new_v = {}, {}
    for name, p in params.items():
        g = grads[name]
        v = velocity[name]
        if g.shape != p.shape or v.shape != p.shape:
            raise ValueError(f"shape mismatch for {name!r}: param {p.shape}, grad {g.shape}, velocity {v.shape}")
        v = momentum * v + (g + weight_decay * p)
        new_v[name] = v.astype(p.dtype)
        new_p[name] = (p - lr * v).astype(p.dtype)
    return new_p, new_v


def _batches(n: int, cfg: TrainConfig):
    """Endless stream of index batches, reshuffled each epoch from the seed."""
    rng = np.random.default_rng(cfg.seed)
    while True:
        order = rng.permutation(n)
        for start in range(0, n, cfg.batch_size):
            yield order[start : start + cfg.batch_size]


def _check_finite(loss: float, it: int) -> None:
    if not np.isfinite(loss):
        raise FloatingPointError(f"non-finite loss {loss} at iteration {it}")


def train_stream(
    params: Params,
    dataset: Sequence[tuple[np.ndarray, np.ndarray]],
    cfg: TrainConfig,
    stream_cfg: StreamConfig,
) -> tuple[Params, list[LossRecord]]:
    """Train one stream on (input (3, H, W) float32, mask (H, W)) pairs.

    The per-iteration loss is the pixel-mean cross-entropy of the minibatch.
    """
    if not dataset:
        raise ValueError("train_stream needs a non-empty dataset")
    inputs = np.stack([x for x, _ in dataset]).astype(np.float32)
    masks = np.stack([m for _, m in dataset]).astype(np.int64)
    velocity = {k: np.zeros_like(v) for k, v in params.items()}
    curve: list[LossRecord] = []
    batches = _batches(len(dataset), cfg)
    for it in range(cfg.max_iters):
        idx = next(batches)
        cache: dict = {}
        logits = network.stream_forward(params, inputs[idx], stream_cfg, cache)
        loss, grad = pixel_cross_entropy(logits, masks[idx], reduction="mean")
        _check_finite(loss, it)
        grads = network.stream_backward(params, stream_cfg, cache, grad)
        lr = poly_lr(cfg.base_lr, it, cfg.max_iters, cfg.power)
        params, velocity = sgd_momentum_step(params, grads, velocity, lr, cfg.momentum, cfg.weight_decay)
        curve.append(LossRecord(it, lr, loss))
        if it % 100 == 0:
            log.debug("iter %d lr %.3g loss %.5f", it, lr, loss)
    return params, curve


def stream_logits(params: Params, inputs: np.ndarray, stream_cfg: StreamConfig) -> np.ndarray:
    """Inference-only forward over a stack of (3, H, W) inputs, one frame at a time."""
    return np.concatenate([network.stream_forward(params, x[None], stream_cfg) for x in inputs])


def train_fusion(
    fusion_params: Params,
    appearance: Params,
    motion: Params,
    dataset: Sequence[tuple[np.ndarray, np.ndarray, np.ndarray]],
    cfg: TrainConfig,
    stream_cfg: StreamConfig,
) -> tuple[Params, list[LossRecord]]:
    """Fit only the fusion head on (frame, color-flow, mask) triples.

    Both streams are frozen: their logits are computed once up front and no
    gradient is ever formed for stream parameters.
    """
    if not dataset:
        raise ValueError("train_fusion needs a non-empty held-out dataset")
    frames = np.stack([f for f, _, _ in dataset]).astype(np.float32)
    flows = np.stack([f for _, f, _ in dataset]).astype(np.float32)
    masks = np.stack([m for _, _, m in dataset]).astype(np.int64)
    app_logits = stream_logits(appearance, frames, stream_cfg)
    mot_logits = stream_logits(motion, flows, stream_cfg)
    return train_fusion_on_logits(fusion_params, app_logits, mot_logits, masks, cfg)


def train_fusion_on_logits(
    fusion_params: Params,
    app_logits: np.ndarray,
    mot_logits: np.ndarray,
    masks: np.ndarray,
    cfg: TrainConfig,
) -> tuple[Params, list[LossRecord]]:
    params = {k: v.copy() for k, v in fusion_params.items()}
    velocity = {k: np.zeros_like(v) for k, v in params.items()}
    curve: list[LossRecord] = []
    batches = _batches(len(masks), cfg)
    for it in range(cfg.max_iters):
        idx = next(batches)
        cache: dict = {}
        out = network.fusion_forward(params, app_logits[idx], mot_logits[idx], cache)
        loss, grad = pixel_cross_entropy(out, masks[idx], reduction="mean")
        _check_finite(loss, it)
        grads = network.fusion_backward(params, cache, grad)
        lr = poly_lr(cfg.base_lr, it, cfg.max_iters, cfg.power)
        params, velocity = sgd_momentum_step(params, grads, velocity, lr, cfg.momentum, cfg.weight_decay)
        curve.append(LossRecord(it, lr, loss))
    return params, curve


def loss_curve_csv(curve: Sequence[LossRecord]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["iter", "lr", "loss"])
    for rec in curve:
        writer.writerow([rec.iter, repr(float(rec.lr)), repr(float(rec.loss))])
    return buf.getvalue()
