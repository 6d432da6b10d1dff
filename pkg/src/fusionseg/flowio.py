"""Optical-flow ingestion (.flo), color-wheel encoding, and flow-only segmenters."""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

FLO_MAGIC = 202021.25
_FLO_MAGIC_BYTES = struct.pack("<f", FLO_MAGIC)
MIN_MAX_MAGNITUDE = 1e-6


class FlowFormatError(ValueError):
    pass


@dataclass
class FlowField:
    """Per-pixel (u, v) displacement in pixels/frame, each an (H, W) float32 array."""

    u: np.ndarray
    v: np.ndarray

    def __post_init__(self):
        self.u = np.asarray(self.u, dtype=np.float32)
        self.v = np.asarray(self.v, dtype=np.float32)
        if self.u.ndim != 2 or self.u.shape != self.v.shape:
            raise ValueError(f"u and v must be equal-shape 2-D arrays, got {self.u.shape} and {self.v.shape}")
        if self.u.size == 0:
            raise ValueError("flow field must have positive width and height")

    @property
    def height(self) -> int:
        return self.u.shape[0]

    @property
    def width(self) -> int:
        return self.u.shape[1]

    def magnitude(self) -> np.ndarray:
        return np.hypot(self.u.astype(np.float64), self.v.astype(np.float64))


def write_flo(flow: FlowField) -> bytes:
    header = _FLO_MAGIC_BYTES + struct.pack("<ii", flow.width, flow.height)
    payload = np.stack([flow.u, flow.v], axis=-1).astype("<f4").tobytes()
    return header + payload


def read_flo(data: bytes) -> FlowField:
    if len(data) < 12:
        raise FlowFormatError(f"truncated .flo header ({len(data)} bytes)")
    if data[:4] != _FLO_MAGIC_BYTES:
        (got,) = struct.unpack("<f", data[:4])
        raise FlowFormatError(f"bad .flo magic: expected {FLO_MAGIC}, got {got!r}")
    width, height = struct.unpack("<ii", data[4:12])
    if width <= 0 or height <= 0:
        raise FlowFormatError(f"non-positive .flo dimensions {width}x{height}")
    expected = 8 * width * height
    if len(data) - 12 < expected:
        raise FlowFormatError(f"truncated .flo payload: {len(data) - 12} of {expected} bytes")
    uv = np.frombuffer(data, dtype="<f4", count=2 * width * height, offset=12)
    uv = uv.reshape(height, width, 2)
    return FlowField(uv[..., 0].copy(), uv[..., 1].copy())


def load_flo(path: str | Path) -> FlowField:
    return read_flo(Path(path).read_bytes())


def save_flo(path: str | Path, flow: FlowField) -> None:
    Path(path).write_bytes(write_flo(flow))


def make_colorwheel() -> np.ndarray:
    """The 55-entry Middlebury color wheel as a (55, 3) float array in [0, 255]."""
    ry, yg, gc, cb, bm, mr = 15, 6, 4, 11, 13, 6
    wheel = np.zeros((ry + yg + gc + cb + bm + mr, 3))
    col = 0
    wheel[col : col + ry, 0] = 255
    wheel[col : col + ry, 1] = np.floor(255 * np.arange(ry) / ry)
    col += ry
    wheel[col : col + yg, 0] = 255 - np.floor(255 * np.arange(yg) / yg)
    wheel[col : col + yg, 1] = 255
    col += yg
    wheel[col : col + gc, 1] = 255
    wheel[col : col + gc, 2] = np.floor(255 * np.arange(gc) / gc)
    col += gc
    wheel[col : col + cb, 1] = 255 - np.floor(255 * np.arange(cb) / cb)
    wheel[col : col + cb, 2] = 255
    col += cb
    wheel[col : col + bm, 2] = 255
    wheel[col : col + bm, 0] = np.floor(255 * np.arange(bm) / bm)
    col += bm
    wheel[col : col + mr, 2] = 255 - np.floor(255 * np.arange(mr) / mr)
    wheel[col : col + mr, 0] = 255
    return wheel


_WHEEL = make_colorwheel()


def flow_to_color(flow: FlowField, max_magnitude: float | None = None) -> np.ndarray:
    """Encode flow as an (H, W, 3) uint8 image: hue = direction, saturation = magnitude.

    Without ``max_magnitude`` the frame's own largest magnitude is used. Magnitudes
    above the normalizer saturate fully; zero motion is white.
    """
    if max_magnitude is None:
        max_magnitude = float(flow.magnitude().max())
    elif max_magnitude <= 0:
        raise ValueError(f"max_magnitude must be positive, got {max_magnitude}")
    max_magnitude = max(max_magnitude, MIN_MAX_MAGNITUDE)

    u = flow.u.astype(np.float64) / max_magnitude
    v = flow.v.astype(np.float64) / max_magnitude
    rad = np.minimum(np.hypot(u, v), 1.0)
    ncols = _WHEEL.shape[0]
    a = np.arctan2(-v, -u) / np.pi
    fk = (a + 1) / 2 * (ncols - 1)
    k0 = np.floor(fk).astype(np.int64)
    k1 = (k0 + 1) % ncols
    f = (fk - k0)[..., None]
    col = ((1 - f) * _WHEEL[k0] + f * _WHEEL[k1]) / 255.0
    col = 1 - rad[..., None] * (1 - col)
    return np.floor(255 * col).astype(np.uint8)


def flow_threshold_segment(flow: FlowField) -> np.ndarray:
    """Foreground where magnitude exceeds mean + one population std of magnitudes."""
    mag = flow.magnitude()
    return mag > mag.mean() + mag.std()


def color_flow_saliency(rgb: np.ndarray) -> np.ndarray:
    """Global color contrast of a flow image, min-max scaled to [0, 1].

    Per-pixel RGB distance from the frame's mean color; a constant image maps
    to all zeros.
    """
    img = rgb.astype(np.float64)
    mean_color = img.reshape(-1, img.shape[-1]).mean(axis=0)
    sal = np.sqrt(((img - mean_color) ** 2).sum(axis=-1))
    lo, hi = sal.min(), sal.max()
    if hi - lo <= 0:
        return np.zeros_like(sal)
    return (sal - lo) / (hi - lo)


def flow_saliency_segment(flow: FlowField) -> np.ndarray:
    sal = color_flow_saliency(flow_to_color(flow))
    return sal > sal.mean()
