"""Appearance/motion streams and the three-branch fusion head.

Both streams share one architecture: a strided stem, a stack of residual
blocks (the later ones dilated instead of strided), and a classifier made of
parallel dilated 3x3 convolutions whose outputs are summed. The low-resolution
logits are bilinearly upsampled back to input size.

Parameters live in plain ``dict[str, np.ndarray]`` objects so they can be
checkpointed and updated by the optimizer without any wrapper classes.
"""

from __future__ import annotations

from dataclasses import dataclass, fields
from typing import Optional

import numpy as np

from . import numerics as nx
from .numerics import ConvLayer, Tensor

Params = dict[str, np.ndarray]


@dataclass(frozen=True)
class StreamConfig:
    in_channels: int = 3
    stem_channels: int = 16
    stem_stride: int = 2
    block_channels: tuple[int, ...] = (16, 16, 32, 32)
    block_strides: tuple[int, ...] = (1, 2, 1, 1)
    block_dilations: tuple[int, ...] = (1, 1, 2, 4)
    head_rates: tuple[int, ...] = (1, 2, 4, 6)
    num_classes: int = 2

    def __post_init__(self):
        n = len(self.block_channels)
        if n == 0 or len(self.block_strides) != n or len(self.block_dilations) != n:
            raise ValueError("block_channels, block_strides and block_dilations must have equal, non-zero length")
        if len(self.head_rates) < 2:
            raise ValueError(f"head needs at least 2 parallel branches, got {len(self.head_rates)}")
        positive = (self.in_channels, self.stem_channels, self.stem_stride, self.num_classes)
        positive += self.block_channels + self.block_strides + self.block_dilations + self.head_rates
        if min(positive) < 1:
            raise ValueError("all StreamConfig counts must be positive")

    @property
    def downsampling(self) -> int:
        return self.stem_stride * int(np.prod(self.block_strides))

    @classmethod
    def full_scale(cls) -> "StreamConfig":
        """8x output stride with four head rates, at reduced widths."""
        return cls(
            block_channels=(16, 32, 32, 32),
            block_strides=(1, 2, 2, 1),
            block_dilations=(1, 1, 2, 4),
            head_rates=(6, 12, 18, 24),
        )

    @classmethod
    def field_names(cls) -> tuple[str, ...]:
        return tuple(f.name for f in fields(cls))


def _block_layout(cfg: StreamConfig):
    cin = cfg.stem_channels
    for i, (cout, stride, dil) in enumerate(zip(cfg.block_channels, cfg.block_strides, cfg.block_dilations)):
        yield i, cin, cout, stride, dil
        cin = cout


def _param_shapes(cfg: StreamConfig) -> dict[str, tuple[int, ...]]:
    shapes: dict[str, tuple[int, ...]] = {
        "stem.w": (cfg.stem_channels, cfg.in_channels, 3, 3),
        "stem.b": (cfg.stem_channels,),
    }
    for i, cin, cout, stride, _ in _block_layout(cfg):
        p = f"block{i}."
        shapes[p + "conv1.w"] = (cout, cin, 3, 3)
        shapes[p + "conv1.b"] = (cout,)
        shapes[p + "aff1.scale"] = (cout,)
        shapes[p + "aff1.shift"] = (cout,)
        shapes[p + "conv2.w"] = (cout, cout, 3, 3)
        shapes[p + "conv2.b"] = (cout,)
        shapes[p + "aff2.scale"] = (cout,)
        shapes[p + "aff2.shift"] = (cout,)
        if cin != cout or stride != 1:
            shapes[p + "proj.w"] = (cout, cin, 1, 1)
            shapes[p + "proj.b"] = (cout,)
    feat = cfg.block_channels[-1]
    for k in range(len(cfg.head_rates)):
        shapes[f"head{k}.w"] = (cfg.num_classes, feat, 3, 3)
        shapes[f"head{k}.b"] = (cfg.num_classes,)
    return shapes


def stream_param_count(cfg: StreamConfig) -> int:
    return sum(int(np.prod(s)) for s in _param_shapes(cfg).values())


def build_stream(cfg: StreamConfig, seed: int) -> Params:
    """He-initialized conv weights, zero biases, unit affine scales."""
    rng = np.random.default_rng(seed)
    params: Params = {}
    for name, shape in _param_shapes(cfg).items():
        if name.endswith(".w"):
            fan_in = shape[1] * shape[2] * shape[3]
            params[name] = (rng.standard_normal(shape) * np.sqrt(2.0 / fan_in)).astype(np.float32)
        elif name.endswith(".scale"):
            params[name] = np.ones(shape, dtype=np.float32)
        else:
            params[name] = np.zeros(shape, dtype=np.float32)
    return params


def stream_template(cfg: StreamConfig) -> Params:
    return {name: np.zeros(shape, dtype=np.float32) for name, shape in _param_shapes(cfg).items()}


def _conv(params: Params, name: str, stride: int = 1, dilation: int = 1, padding: int = 0) -> ConvLayer:
    return ConvLayer(params[name + ".w"], params[name + ".b"], stride, dilation, padding)


def _stem(params: Params, cfg: StreamConfig) -> ConvLayer:
    return _conv(params, "stem", stride=cfg.stem_stride, padding=1)


def _head(params: Params, k: int, rate: int) -> ConvLayer:
    return _conv(params, f"head{k}", dilation=rate, padding=rate)


def stream_forward(params: Params, x: Tensor, cfg: StreamConfig, cache: Optional[dict] = None) -> Tensor:
    """Map an (N, 3, H, W) input in [0, 1] to (N, 2, H, W) logits.

    Pass a dict as ``cache`` to keep the activations ``stream_backward`` needs.
    """
    nx._require_rank4(x, "stream input")
    if x.shape[1] != cfg.in_channels:
        raise nx.ShapeError(f"stream expects {cfg.in_channels} input channels, got input shape {x.shape}")
    ds = cfg.downsampling
    if x.shape[2] % ds or x.shape[3] % ds:
        raise nx.ShapeError(f"input size {x.shape[2:]} not divisible by downsampling factor {ds}")
    c = cache if cache is not None else {}

    c["stem.in"] = x
    pre = nx.conv2d(x, _stem(params, cfg))
    c["stem.pre"] = pre
    h = nx.relu(pre)

    for i, cin, cout, stride, dil in _block_layout(cfg):
        p = f"block{i}."
        c[p + "in"] = h
        a1 = nx.conv2d(h, _conv(params, p + "conv1", stride, dil, dil))
        c[p + "a1"] = a1
        z1 = nx.channel_affine(a1, params[p + "aff1.scale"], params[p + "aff1.shift"])
        c[p + "z1"] = z1
        r1 = nx.relu(z1)
        c[p + "r1"] = r1
        a2 = nx.conv2d(r1, _conv(params, p + "conv2", 1, dil, dil))
        c[p + "a2"] = a2
        z2 = nx.channel_affine(a2, params[p + "aff2.scale"], params[p + "aff2.shift"])
        if p + "proj.w" in params:
            shortcut = nx.conv2d(h, _conv(params, p + "proj", stride))
        else:
            shortcut = h
        s = z2 + shortcut
        c[p + "sum"] = s
        h = nx.relu(s)

    c["head.in"] = h
    low = None
    for k, rate in enumerate(cfg.head_rates):
        out = nx.conv2d(h, _head(params, k, rate))
        low = out if low is None else low + out
    return nx.bilinear_upsample(low, ds)


def stream_backward(params: Params, cfg: StreamConfig, cache: dict, grad_logits: Tensor) -> Params:
    """Parameter gradients of a scalar loss given d(loss)/d(logits)."""
    grads: Params = {}
    g_low = nx.bilinear_upsample_backward(grad_logits, cfg.downsampling)
    h = cache["head.in"]
    gh = None
    for k, rate in enumerate(cfg.head_rates):
        gx, gw, gb = nx.conv2d_backward(h, _head(params, k, rate), g_low)
        grads[f"head{k}.w"], grads[f"head{k}.b"] = gw, gb
        gh = gx if gh is None else gh + gx

    for i, cin, cout, stride, dil in reversed(list(_block_layout(cfg))):
        p = f"block{i}."
        gs = nx.relu_backward(cache[p + "sum"], gh)
        hin = cache[p + "in"]
        if p + "proj.w" in params:
            gin, gw, gb = nx.conv2d_backward(hin, _conv(params, p + "proj", stride), gs)
            grads[p + "proj.w"], grads[p + "proj.b"] = gw, gb
        else:
            gin = gs
        ga2, grads[p + "aff2.scale"], grads[p + "aff2.shift"] = nx.channel_affine_backward(
            cache[p + "a2"], params[p + "aff2.scale"], gs
        )
        gr1, grads[p + "conv2.w"], grads[p + "conv2.b"] = nx.conv2d_backward(
            cache[p + "r1"], _conv(params, p + "conv2", 1, dil, dil), ga2
        )
        gz1 = nx.relu_backward(cache[p + "z1"], gr1)
        ga1, grads[p + "aff1.scale"], grads[p + "aff1.shift"] = nx.channel_affine_backward(
            cache[p + "a1"], params[p + "aff1.scale"], gz1
        )
        gx, grads[p + "conv1.w"], grads[p + "conv1.b"] = nx.conv2d_backward(
            hin, _conv(params, p + "conv1", stride, dil, dil), ga1
        )
        gh = gin + gx

    gpre = nx.relu_backward(cache["stem.pre"], gh)
    _, grads["stem.w"], grads["stem.b"] = nx.conv2d_backward(cache["stem.in"], _stem(params, cfg), gpre)
    return grads


# --- fusion ----------------------------------------------------------------

FUSION_BRANCHES = ("app_solo", "mot_solo", "app_joint", "mot_joint")


def fusion_template() -> Params:
    out: Params = {}
    for name in FUSION_BRANCHES:
        out[name + ".w"] = np.zeros((2, 2, 1, 1), dtype=np.float32)
        out[name + ".b"] = np.zeros((2,), dtype=np.float32)
    return out


def init_fusion() -> Params:
    """Every 1x1 conv starts as the identity map on the two logit channels."""
    fp = fusion_template()
    for name in FUSION_BRANCHES:
        fp[name + ".w"][:, :, 0, 0] = np.eye(2, dtype=np.float32)
    return fp


def param_count(params: Params) -> int:
    return sum(int(v.size) for v in params.values())


def _check_logits(app: Tensor, mot: Tensor) -> None:
    nx._require_rank4(app, "appearance logits")
    if app.shape != mot.shape:
        raise nx.ShapeError(f"appearance logits {app.shape} and motion logits {mot.shape} differ")
    if app.shape[1] != 2:
        raise nx.ShapeError(f"fusion expects 2-channel logits, got {app.shape}")


def fusion_branches(fp: Params, app: Tensor, mot: Tensor, cache: Optional[dict] = None):
    """Return the three branch activations (solo-app, solo-mot, joint)."""
    _check_logits(app, mot)
    c = cache if cache is not None else {}
    pre = {}
    for name in FUSION_BRANCHES:
        src = app if name.startswith("app") else mot
        pre[name] = nx.conv2d(src, _conv(fp, name))
    c["app"], c["mot"], c["pre"] = app, mot, pre
    act = {k: nx.relu(v) for k, v in pre.items()}
    b1, b2 = act["app_solo"], act["mot_solo"]
    b3 = nx.elementwise_mul(act["app_joint"], act["mot_joint"])
    c["act"] = act
    c["b"] = (b1, b2, b3)
    return b1, b2, b3


def fusion_forward(fp: Params, app: Tensor, mot: Tensor, cache: Optional[dict] = None) -> Tensor:
    c = cache if cache is not None else {}
    b1, b2, b3 = fusion_branches(fp, app, mot, c)
    m12 = nx.elementwise_max(b1, b2)
    c["m12"] = m12
    return nx.elementwise_max(m12, b3)


def fusion_backward(fp: Params, cache: dict, grad_out: Tensor) -> Params:
    """Gradients for the 24 fusion parameters only; stream logits get none."""
    b1, b2, b3 = cache["b"]
    g12, g3 = nx.elementwise_max_backward(cache["m12"], b3, grad_out)
    g1, g2 = nx.elementwise_max_backward(b1, b2, g12)
    act, pre = cache["act"], cache["pre"]
    gj_app, gj_mot = nx.elementwise_mul_backward(act["app_joint"], act["mot_joint"], g3)
    g_act = {"app_solo": g1, "mot_solo": g2, "app_joint": gj_app, "mot_joint": gj_mot}
    grads: Params = {}
    for name in FUSION_BRANCHES:
        src = cache["app"] if name.startswith("app") else cache["mot"]
        gpre = nx.relu_backward(pre[name], g_act[name])
        _, grads[name + ".w"], grads[name + ".b"] = nx.conv2d_backward(src, _conv(fp, name), gpre)
    return grads


def predict_mask(logits: Tensor) -> np.ndarray:
    """(N, H, W) boolean foreground masks; ties resolve to background."""
    nx._require_rank4(logits, "logits")
    return logits[:, 1] > logits[:, 0]


def image_to_tensor(rgb: np.ndarray) -> Tensor:
    """(H, W, 3) uint8 image -> (1, 3, H, W) float32 in [0, 1]."""
    return (np.asarray(rgb, dtype=np.float32) / 255.0).transpose(2, 0, 1)[None].copy()


def infer_logits(params: Params, rgb: np.ndarray, cfg: StreamConfig) -> Tensor:
    """Logits for one (H, W, 3) uint8 image of any size.

    The image is edge-padded up to a multiple of the downsampling factor and
    the logits are cropped back to (1, 2, H, W).
    """
    h, w = rgb.shape[:2]
    ds = cfg.downsampling
    ph, pw = -h % ds, -w % ds
    padded = np.pad(rgb, ((0, ph), (0, pw), (0, 0)), mode="edge")
    logits = stream_forward(params, image_to_tensor(padded), cfg)
    return logits[:, :, :h, :w]
