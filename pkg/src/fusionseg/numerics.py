"""Dense rank-4 tensor ops with explicit forward/backward passes.

Tensors are plain ``numpy.ndarray`` objects of shape (batch, channels, height,
width). Parameters are stored as float32; every op preserves the dtype of its
inputs so that gradient checks can run the same code in float64. Reductions
(convolution sums, loss sums) accumulate in float64.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import as_strided

Tensor = np.ndarray

CHECKPOINT_MAGIC = b"FSKT"
CHECKPOINT_VERSION = 1


class ShapeError(ValueError):
    pass


def _require_rank4(x: Tensor, name: str) -> None:
    if x.ndim != 4:
        raise ShapeError(f"{name} must be rank-4 (N, C, H, W), got shape {x.shape}")


def _require_same_shape(a: Tensor, b: Tensor, what: str) -> None:
    if a.shape != b.shape:
        raise ShapeError(f"{what}: shape mismatch {a.shape} vs {b.shape}")


def _out_dtype(*arrays: np.ndarray) -> np.dtype:
    return np.result_type(*arrays)


@dataclass
class ConvLayer:
    weights: np.ndarray  # (out_ch, in_ch, kh, kw)
    bias: np.ndarray  # (out_ch,)
    stride: int = 1
    dilation: int = 1
    padding: int = 0

    def __post_init__(self):
        if self.weights.ndim != 4:
            raise ShapeError(f"conv weights must be (out, in, kh, kw), got {self.weights.shape}")
        if self.bias.shape != (self.weights.shape[0],):
            raise ShapeError(
                f"conv bias shape {self.bias.shape} does not match out_ch {self.weights.shape[0]}"
            )
        if self.stride < 1 or self.dilation < 1 or self.padding < 0:
            raise ValueError(
                f"invalid conv geometry stride={self.stride} dilation={self.dilation} padding={self.padding}"
            )

    @property
    def out_ch(self) -> int:
        return self.weights.shape[0]

    @property
    def in_ch(self) -> int:
        return self.weights.shape[1]

    @property
    def param_count(self) -> int:
        return int(self.weights.size + self.bias.size)

    def output_size(self, height: int, width: int) -> tuple[int, int]:
        kh, kw = self.weights.shape[2:]
        p, d, s = self.padding, self.dilation, self.stride
        oh = (height + 2 * p - d * (kh - 1) - 1) // s + 1
        ow = (width + 2 * p - d * (kw - 1) - 1) // s + 1
        return oh, ow


def _im2col(x: Tensor, layer: ConvLayer, oh: int, ow: int) -> np.ndarray:
    """Patch view of shape (N, C*kh*kw, oh*ow), materialized in float64."""
    n, c = x.shape[:2]
    kh, kw = layer.weights.shape[2:]
    p, d, s = layer.padding, layer.dilation, layer.stride
    xp = np.pad(x.astype(np.float64), ((0, 0), (0, 0), (p, p), (p, p)))
    sn, sc, sh, sw = xp.strides
    view = as_strided(
        xp,
        shape=(n, c, kh, kw, oh, ow),
        strides=(sn, sc, sh * d, sw * d, sh * s, sw * s),
        writeable=False,
    )
    return view.reshape(n, c * kh * kw, oh * ow)


def _check_conv_input(x: Tensor, layer: ConvLayer) -> tuple[int, int]:
    _require_rank4(x, "conv input")
    if x.shape[1] != layer.in_ch:
        raise ShapeError(
            f"conv input shape {x.shape} incompatible with weights {layer.weights.shape}: "
            f"expected {layer.in_ch} input channels"
        )
    oh, ow = layer.output_size(*x.shape[2:])
    if oh < 1 or ow < 1:
        raise ShapeError(
            f"conv input shape {x.shape} too small for weights {layer.weights.shape} "
            f"(dilation={layer.dilation}, padding={layer.padding})"
        )
    return oh, ow


def conv2d(x: Tensor, layer: ConvLayer) -> Tensor:
    """Dilated, strided cross-correlation plus per-channel bias."""
    oh, ow = _check_conv_input(x, layer)
    cols = _im2col(x, layer, oh, ow)
    w = layer.weights.astype(np.float64).reshape(layer.out_ch, -1)
    out = np.matmul(w, cols) + layer.bias.astype(np.float64)[:, None]
    dtype = _out_dtype(x, layer.weights)
    return out.reshape(x.shape[0], layer.out_ch, oh, ow).astype(dtype)


def conv2d_backward(
    x: Tensor, layer: ConvLayer, grad_out: Tensor
) -> tuple[Tensor, np.ndarray, np.ndarray]:
    """Return (grad_input, grad_weights, grad_bias) for ``conv2d(x, layer)``."""
    oh, ow = _check_conv_input(x, layer)
    expected = (x.shape[0], layer.out_ch, oh, ow)
    if grad_out.shape != expected:
        raise ShapeError(f"grad_out shape {grad_out.shape} does not match conv output {expected}")
    n, c, h, w_ = x.shape
    kh, kw = layer.weights.shape[2:]
    p, d, s = layer.padding, layer.dilation, layer.stride

    g = grad_out.astype(np.float64).reshape(n, layer.out_ch, oh * ow)
    cols = _im2col(x, layer, oh, ow)
    grad_b = g.sum(axis=(0, 2))
    grad_w = np.tensordot(g, cols, axes=([0, 2], [0, 2])).reshape(layer.weights.shape)

    wmat = layer.weights.astype(np.float64).reshape(layer.out_ch, -1)
    gcols = np.matmul(wmat.T, g).reshape(n, c, kh, kw, oh, ow)
    gpad = np.zeros((n, c, h + 2 * p, w_ + 2 * p))
    for i in range(kh):
        for j in range(kw):
            gpad[
                :, :,
                i * d : i * d + s * (oh - 1) + 1 : s,
                j * d : j * d + s * (ow - 1) + 1 : s,
            ] += gcols[:, :, i, j]
    grad_x = gpad[:, :, p : p + h, p : p + w_]

    dtype = _out_dtype(x, layer.weights)
    return (
        grad_x.astype(dtype),
        grad_w.astype(layer.weights.dtype),
        grad_b.astype(layer.bias.dtype),
    )


def relu(x: Tensor) -> Tensor:
    return np.maximum(x, 0).astype(x.dtype)


def relu_backward(x: Tensor, grad_out: Tensor) -> Tensor:
    _require_same_shape(x, grad_out, "relu_backward")
    return np.where(x > 0, grad_out, 0).astype(grad_out.dtype)


def elementwise_mul(a: Tensor, b: Tensor) -> Tensor:
    _require_same_shape(a, b, "elementwise_mul")
    return a * b


def elementwise_mul_backward(a: Tensor, b: Tensor, grad_out: Tensor) -> tuple[Tensor, Tensor]:
    _require_same_shape(a, b, "elementwise_mul_backward")
    return grad_out * b, grad_out * a


def elementwise_max(a: Tensor, b: Tensor) -> Tensor:
    _require_same_shape(a, b, "elementwise_max")
    return np.where(a >= b, a, b)


def elementwise_max_backward(a: Tensor, b: Tensor, grad_out: Tensor) -> tuple[Tensor, Tensor]:
    """Route the gradient to the larger input; ties go to ``a``."""
    _require_same_shape(a, b, "elementwise_max_backward")
    take_a = a >= b
    zero = np.zeros_like(grad_out)
    return np.where(take_a, grad_out, zero), np.where(take_a, zero, grad_out)


def channel_affine(x: Tensor, scale: np.ndarray, shift: np.ndarray) -> Tensor:
    """Per-channel ``x * scale + shift`` (no running statistics)."""
    _require_rank4(x, "affine input")
    if scale.shape != (x.shape[1],) or shift.shape != (x.shape[1],):
        raise ShapeError(
            f"affine params {scale.shape}/{shift.shape} do not match channels of {x.shape}"
        )
    return x * scale[None, :, None, None] + shift[None, :, None, None]


def channel_affine_backward(
    x: Tensor, scale: np.ndarray, grad_out: Tensor
) -> tuple[Tensor, np.ndarray, np.ndarray]:
    g = grad_out.astype(np.float64)
    grad_scale = (g * x).sum(axis=(0, 2, 3))
    grad_shift = g.sum(axis=(0, 2, 3))
    grad_x = grad_out * scale[None, :, None, None]
    return grad_x, grad_scale.astype(scale.dtype), grad_shift.astype(scale.dtype)


def _interp_matrix(size: int, factor: int) -> np.ndarray:
    """Row i holds the bilinear weights of output i over the ``size`` inputs."""
    dst = np.arange(size * factor, dtype=np.float64)
    src = np.clip((dst + 0.5) / factor - 0.5, 0.0, size - 1)
    i0 = np.floor(src).astype(np.int64)
    i1 = np.minimum(i0 + 1, size - 1)
    frac = src - i0
    m = np.zeros((size * factor, size))
    rows = np.arange(size * factor)
    np.add.at(m, (rows, i0), 1.0 - frac)
    np.add.at(m, (rows, i1), frac)
    return m


def bilinear_upsample(x: Tensor, factor: int) -> Tensor:
    """Integer-factor bilinear upsampling, half-pixel (align_corners=False) convention."""
    _require_rank4(x, "upsample input")
    if factor < 1:
        raise ValueError(f"upsample factor must be >= 1, got {factor}")
    if factor == 1:
        return x.copy()
    mh = _interp_matrix(x.shape[2], factor)
    mw = _interp_matrix(x.shape[3], factor)
    out = np.einsum("ih,nchw,jw->ncij", mh, x.astype(np.float64), mw, optimize=True)
    return out.astype(x.dtype)


def bilinear_upsample_backward(grad_out: Tensor, factor: int) -> Tensor:
    _require_rank4(grad_out, "upsample grad")
    if factor == 1:
        return grad_out.copy()
    h, w = grad_out.shape[2] // factor, grad_out.shape[3] // factor
    mh = _interp_matrix(h, factor)
    mw = _interp_matrix(w, factor)
    out = np.einsum("ih,ncij,jw->nchw", mh, grad_out.astype(np.float64), mw, optimize=True)
    return out.astype(grad_out.dtype)


def pixel_cross_entropy(
    logits: Tensor, target: np.ndarray, reduction: str = "sum"
) -> tuple[float, Tensor]:
    """Two-class softmax cross-entropy summed over every pixel.

    ``target`` is a (N, H, W) or (H, W) array of {0, 1}. Returns the scalar
    loss and its gradient with respect to ``logits`` (softmax minus one-hot).
    ``reduction="mean"`` divides both by the pixel count.
    """
    _require_rank4(logits, "logits")
    if logits.shape[1] != 2:
        raise ShapeError(f"cross-entropy expects 2-channel logits, got {logits.shape}")
    t = np.asarray(target)
    if t.ndim == 2:
        t = t[None]
    if t.shape != (logits.shape[0],) + logits.shape[2:]:
        raise ShapeError(f"target shape {t.shape} does not match logits {logits.shape}")
    if not np.isin(t, (0, 1)).all():
        raise ValueError("target mask must contain only 0 and 1")
    t = t.astype(np.int64)

    z = logits.astype(np.float64)
    zmax = z.max(axis=1, keepdims=True)
    lse = zmax[:, 0] + np.log(np.exp(z - zmax).sum(axis=1))
    picked = np.where(t == 1, z[:, 1], z[:, 0])
    loss = float((lse - picked).sum())

    prob = np.exp(z - lse[:, None])
    grad = prob
    grad[:, 0] -= t == 0
    grad[:, 1] -= t == 1
    if reduction == "mean":
        count = t.size
        loss /= count
        grad /= count
    elif reduction != "sum":
        raise ValueError(f"unknown reduction {reduction!r}")
    return loss, grad.astype(logits.dtype)


# --- checkpoints -----------------------------------------------------------


def save_checkpoint(params: dict[str, np.ndarray]) -> bytes:
    """Serialize named arrays to the FSKT format.

    Arrays of rank < 4 are padded with leading unit dimensions; the loader
    returns rank-4 arrays and callers reshape against their own templates.
    """
    out = [CHECKPOINT_MAGIC, struct.pack("<I", CHECKPOINT_VERSION)]
    for name, arr in params.items():
        arr = np.asarray(arr)
        if arr.ndim > 4:
            raise ShapeError(f"checkpoint record {name!r} has rank {arr.ndim} > 4")
        shape = (1,) * (4 - arr.ndim) + arr.shape
        encoded = name.encode("utf-8")
        out.append(struct.pack("<I", len(encoded)))
        out.append(encoded)
        out.append(struct.pack("<4I", *shape))
        out.append(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    return b"".join(out)


def load_checkpoint(data: bytes) -> dict[str, np.ndarray]:
    if data[:4] != CHECKPOINT_MAGIC:
        raise ValueError(f"not a checkpoint: expected magic {CHECKPOINT_MAGIC!r}, got {data[:4]!r}")
    if len(data) < 8:
        raise ValueError("truncated checkpoint header")
    (version,) = struct.unpack_from("<I", data, 4)
    if version != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {version}")
    pos = 8
    params: dict[str, np.ndarray] = {}
    while pos < len(data):
        try:
            (nlen,) = struct.unpack_from("<I", data, pos)
            pos += 4
            name = data[pos : pos + nlen].decode("utf-8")
            if len(name.encode("utf-8")) != nlen:
                raise struct.error("name")
            pos += nlen
            shape = struct.unpack_from("<4I", data, pos)
            pos += 16
        except (struct.error, UnicodeDecodeError) as exc:
            raise ValueError(f"truncated or corrupt checkpoint record at byte {pos}") from exc
        nbytes = 4 * int(np.prod(shape, dtype=np.int64))
        if pos + nbytes > len(data):
            raise ValueError(f"truncated payload for checkpoint record {name!r}")
        arr = np.frombuffer(data, dtype="<f4", count=nbytes // 4, offset=pos)
        params[name] = arr.reshape(shape).astype(np.float32)
        pos += nbytes
    return params


def restore_shapes(
    loaded: dict[str, np.ndarray], template: dict[str, np.ndarray]
) -> dict[str, np.ndarray]:
    """Reshape rank-4 checkpoint records to the shapes in ``template``."""
    missing = sorted(set(template) - set(loaded))
    extra = sorted(set(loaded) - set(template))
    if missing or extra:
        raise ValueError(f"checkpoint keys mismatch: missing={missing} unexpected={extra}")
    out = {}
    for name, ref in template.items():
        arr = loaded[name]
        if arr.size != ref.size:
            raise ShapeError(f"checkpoint record {name!r} has {arr.size} values, expected shape {ref.shape}")
        out[name] = arr.reshape(ref.shape).astype(np.float32)
    return out
