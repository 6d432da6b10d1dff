"""Binary PPM (P6) and PGM (P5) reading/writing, maxval 255 only."""

from __future__ import annotations

from pathlib import Path

import numpy as np


class NetpbmError(ValueError):
    pass


def _parse_header(data: bytes, magic: bytes) -> tuple[int, int, int]:
    if data[:2] != magic:
        raise NetpbmError(f"expected {magic.decode()} header, got {data[:2]!r}")
    fields: list[int] = []
    pos = 2
    while len(fields) < 3:
        while pos < len(data) and data[pos : pos + 1].isspace():
            pos += 1
        if pos < len(data) and data[pos : pos + 1] == b"#":
            while pos < len(data) and data[pos : pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(data) and data[pos : pos + 1].isdigit():
            pos += 1
        if start == pos:
            raise NetpbmError("malformed netpbm header")
        fields.append(int(data[start:pos]))
    # exactly one whitespace byte separates header from raster
    pos += 1
    width, height, maxval = fields
    if width < 1 or height < 1:
        raise NetpbmError(f"non-positive image size {width}x{height}")
    if maxval != 255:
        raise NetpbmError(f"only maxval 255 is supported, got {maxval}")
    return width, height, pos


def decode_ppm(data: bytes) -> np.ndarray:
    w, h, pos = _parse_header(data, b"P6")
    raster = data[pos : pos + 3 * w * h]
    if len(raster) != 3 * w * h:
        raise NetpbmError(f"truncated PPM raster: {len(raster)} of {3 * w * h} bytes")
    return np.frombuffer(raster, dtype=np.uint8).reshape(h, w, 3).copy()


def decode_pgm(data: bytes) -> np.ndarray:
    w, h, pos = _parse_header(data, b"P5")
    raster = data[pos : pos + w * h]
    if len(raster) != w * h:
        raise NetpbmError(f"truncated PGM raster: {len(raster)} of {w * h} bytes")
    return np.frombuffer(raster, dtype=np.uint8).reshape(h, w).copy()


def encode_ppm(rgb: np.ndarray) -> bytes:
    rgb = np.asarray(rgb)
    if rgb.ndim != 3 or rgb.shape[2] != 3:
        raise NetpbmError(f"PPM needs an (H, W, 3) array, got {rgb.shape}")
    h, w = rgb.shape[:2]
    return b"P6\n%d %d\n255\n" % (w, h) + np.ascontiguousarray(rgb, dtype=np.uint8).tobytes()


def encode_pgm(gray: np.ndarray) -> bytes:
    gray = np.asarray(gray)
    if gray.ndim != 2:
        raise NetpbmError(f"PGM needs an (H, W) array, got {gray.shape}")
    h, w = gray.shape
    return b"P5\n%d %d\n255\n" % (w, h) + np.ascontiguousarray(gray, dtype=np.uint8).tobytes()


def read_ppm(path: str | Path) -> np.ndarray:
    return decode_ppm(Path(path).read_bytes())


def write_ppm(path: str | Path, rgb: np.ndarray) -> None:
    Path(path).write_bytes(encode_ppm(rgb))


def read_mask(path: str | Path) -> np.ndarray:
    """Read a PGM mask; any nonzero pixel is foreground."""
    return decode_pgm(Path(path).read_bytes()) > 0


def write_mask(path: str | Path, mask: np.ndarray) -> None:
    Path(path).write_bytes(encode_pgm(np.where(np.asarray(mask, dtype=bool), 255, 0).astype(np.uint8)))
