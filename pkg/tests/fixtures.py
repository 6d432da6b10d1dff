"""Randomized inputs shared by several test modules."""

import numpy as np


def random_fixture(rng):
    """A frame with 1-2 boxes, a blob segmentation and a piecewise color image.

    Parameters are drawn so every stage, and acceptance, occurs regularly.
    """
    height, width = int(rng.integers(16, 33)), int(rng.integers(16, 33))
    boxes = []
    for _ in range(int(rng.integers(1, 3))):
        w, h = int(rng.integers(3, 12)), int(rng.integers(3, 12))
        x = int(rng.integers(-2, width - 1))
        y = int(rng.integers(-2, height - 1))
        boxes.append((x, y, w, h))
    seg = rng.random((height, width)) < 0.1
    color = np.empty((height, width, 3), dtype=np.uint8)
    color[:] = rng.integers(200, 256, 3)
    for x, y, w, h in boxes:
        x0, y0 = max(x, 0), max(y, 0)
        x1, y1 = min(x + w, width), min(y + h, height)
        # foreground blob: a sub-rectangle of the box, sometimes full, with optional holes
        mx = int(rng.integers(0, 3)) if rng.random() < 0.7 else 0
        my = int(rng.integers(0, 3)) if rng.random() < 0.7 else 0
        seg[y0 + my // 2 : y1 - (my + 1) // 2, x0 + mx // 2 : x1 - (mx + 1) // 2] = True
        if rng.random() < 0.5:
            holes = rng.random((y1 - y0, x1 - x0)) < rng.uniform(0, 0.2)
            seg[y0:y1, x0:x1] &= ~holes
        if rng.random() < 0.7:
            color[y0:y1, x0:x1] = rng.integers(0, 256, 3)
    return seg, boxes, color, width, height


def synthetic_frames(n_sequences=5, n_frames=3, size=32):
    from fusionseg.synthetic import make_sequence

    return [f for seed in range(n_sequences) for f in make_sequence(seed, n_frames, size)]


def stream_datasets(frames):
    """(appearance, motion) training pairs of (3, H, W) float32 input and mask."""
    from fusionseg import flowio, network

    app = [(network.image_to_tensor(f.frame)[0], f.mask) for f in frames]
    mot = [(network.image_to_tensor(flowio.flow_to_color(f.flow))[0], f.mask) for f in frames]
    return app, mot
