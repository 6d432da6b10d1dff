"""Synthetic scenes with known ground truth: moving squares over static backgrounds."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .flowio import FlowField


def moving_square_flow(
    size: int = 64, square: int = 16, shift: float = 5.0, top_left: tuple[int, int] | None = None
) -> tuple[FlowField, np.ndarray]:
    """Static background, one square translating ``shift`` px to the right."""
    if top_left is None:
        top_left = ((size - square) // 2, (size - square) // 2)
    y, x = top_left
    mask = np.zeros((size, size), dtype=bool)
    mask[y : y + square, x : x + square] = True
    u = np.where(mask, shift, 0.0)
    return FlowField(u, np.zeros_like(u)), mask


@dataclass
class SyntheticFrame:
    frame: np.ndarray  # (H, W, 3) uint8
    flow: FlowField
    mask: np.ndarray  # (H, W) bool


def make_sequence(
    seed: int,
    n_frames: int = 3,
    size: int = 32,
    square: int = 12,
) -> list[SyntheticFrame]:
    """A textured background with one brighter square moving at constant velocity."""
    rng = np.random.default_rng(seed)
    background = rng.integers(0, 110, size=(size, size, 3))
    color = rng.integers(150, 256, size=3)
    texture = rng.integers(-20, 21, size=(square, square, 3))
    vel = rng.integers(-3, 4, size=2)
    if not vel.any():
        vel[0] = 2
    span = size - square
    start = rng.integers(0, span + 1, size=2)

    frames = []
    for t in range(n_frames):
        y, x = (start + t * vel) % (span + 1)
        img = background.copy()
        img[y : y + square, x : x + square] = np.clip(color + texture, 0, 255)
        mask = np.zeros((size, size), dtype=bool)
        mask[y : y + square, x : x + square] = True
        u = np.where(mask, float(vel[1]), 0.0)
        v = np.where(mask, float(vel[0]), 0.0)
        frames.append(SyntheticFrame(img.astype(np.uint8), FlowField(u, v), mask))
    return frames
