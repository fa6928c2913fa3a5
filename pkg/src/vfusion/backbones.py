"""Per-frame feature extractors: a slimmed AlexNet (no LRN) and SqueezeNet v1.0 minus conv10.

Both forwards are plain functions of ``(frames, params)``; ``params`` is the flat
name -> Tensor registry built by :func:`vfusion.model.build_model`.  Frames may be a
single ``3 x H x W`` map or a batch ``N x 3 x H x W``.

All max pools run in ceil mode.  For AlexNet at 224 this changes nothing; for
SqueezeNet it is what turns 54 -> 27 -> 13 (floor mode would end at 12).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import ops
from .tensor import Tensor


@dataclass(frozen=True)
class ConvLayerSpec:
    out_channels: int
    kernel: int
    stride: int = 1
    padding: int = 0

    def __post_init__(self):
        if min(self.out_channels, self.kernel, self.stride) < 1 or self.padding < 0:
            raise ValueError(f"invalid conv layer spec {self}")


@dataclass(frozen=True)
class FireSpec:
    squeeze_channels: int
    expand1x1_channels: int
    expand3x3_channels: int

    def __post_init__(self):
        if min(self.squeeze_channels, self.expand1x1_channels, self.expand3x3_channels) < 1:
            raise ValueError(f"invalid fire spec {self}")
        if self.squeeze_channels >= self.expand1x1_channels + self.expand3x3_channels:
            raise ValueError(f"fire squeeze must be a bottleneck: {self}")

    @property
    def out_channels(self) -> int:
        return self.expand1x1_channels + self.expand3x3_channels


ALEXNET_LAYERS = (
    ConvLayerSpec(64, 11, 4, 2),
    ConvLayerSpec(192, 5, 1, 2),
    ConvLayerSpec(384, 3, 1, 1),
    ConvLayerSpec(256, 3, 1, 1),
    ConvLayerSpec(256, 3, 1, 1),
)
# maxpool(3, 2) follows these AlexNet conv indices
ALEXNET_POOL_AFTER = (0, 1, 4)
ALEXNET_OUT_HW = 6

SQUEEZENET_CONV1 = ConvLayerSpec(96, 7, 2, 0)
SQUEEZENET_FIRES = (
    FireSpec(16, 64, 64),
    FireSpec(16, 64, 64),
    FireSpec(32, 128, 128),
    FireSpec(32, 128, 128),
    FireSpec(48, 192, 192),
    FireSpec(48, 192, 192),
    FireSpec(64, 256, 256),
    FireSpec(64, 256, 256),
)
# maxpool(3, 2) after conv1, fire4, fire8 (fires are numbered 2..9)
SQUEEZENET_POOL_AFTER = ("conv1", "fire4", "fire8")

POOL_KERNEL, POOL_STRIDE = 3, 2


def scaled(channels: int, width_factor: float) -> int:
    return max(1, int(round(channels * width_factor)))


def alexnet_layers(width_factor: float = 1.0) -> list[ConvLayerSpec]:
    return [ConvLayerSpec(scaled(s.out_channels, width_factor), s.kernel, s.stride, s.padding)
            for s in ALEXNET_LAYERS]


def squeezenet_layers(width_factor: float = 1.0) -> tuple[ConvLayerSpec, list[FireSpec]]:
    conv1 = SQUEEZENET_CONV1
    conv1 = ConvLayerSpec(scaled(conv1.out_channels, width_factor), conv1.kernel, conv1.stride, conv1.padding)
    fires = [FireSpec(scaled(f.squeeze_channels, width_factor),
                      scaled(f.expand1x1_channels, width_factor),
                      scaled(f.expand3x3_channels, width_factor)) for f in SQUEEZENET_FIRES]
    return conv1, fires


def he_normal(rng: np.random.Generator, shape, fan_in: int, dtype) -> np.ndarray:
    return (rng.standard_normal(shape) * np.sqrt(2.0 / fan_in)).astype(dtype)


def init_conv(params: dict, name: str, c_in: int, spec: ConvLayerSpec, rng, dtype) -> None:
    fan_in = c_in * spec.kernel * spec.kernel
    shape = (spec.out_channels, c_in, spec.kernel, spec.kernel)
    params[f"{name}.weight"] = Tensor(he_normal(rng, shape, fan_in, dtype), requires_grad=True,
                                      name=f"{name}.weight")
    params[f"{name}.bias"] = Tensor(np.zeros(spec.out_channels, dtype=dtype), requires_grad=True,
                                    name=f"{name}.bias")


def init_alexnet(params: dict, width_factor: float, rng, dtype, prefix: str = "alexnet") -> int:
    c_in = 3
    for i, spec in enumerate(alexnet_layers(width_factor), start=1):
        init_conv(params, f"{prefix}.conv{i}", c_in, spec, rng, dtype)
        c_in = spec.out_channels
    return c_in


def init_squeezenet(params: dict, width_factor: float, rng, dtype, prefix: str = "squeezenet") -> int:
    conv1, fires = squeezenet_layers(width_factor)
    init_conv(params, f"{prefix}.conv1", 3, conv1, rng, dtype)
    c_in = conv1.out_channels
    for num, fire in enumerate(fires, start=2):
        name = f"{prefix}.fire{num}"
        init_conv(params, f"{name}.squeeze", c_in, ConvLayerSpec(fire.squeeze_channels, 1), rng, dtype)
        init_conv(params, f"{name}.expand1x1", fire.squeeze_channels,
                  ConvLayerSpec(fire.expand1x1_channels, 1), rng, dtype)
        init_conv(params, f"{name}.expand3x3", fire.squeeze_channels,
                  ConvLayerSpec(fire.expand3x3_channels, 3, 1, 1), rng, dtype)
        c_in = fire.out_channels
    return c_in


def _check_frames(frames: Tensor, op: str) -> None:
    if frames.ndim not in (3, 4) or frames.shape[-3] != 3:
        raise ValueError(f"{op}: expected 3xHxW or Nx3xHxW frames, got shape {frames.shape}")


def _pool(x: Tensor) -> Tensor:
    return ops.maxpool2d(x, POOL_KERNEL, POOL_STRIDE, ceil_mode=True)


def alexnet_lite_forward(frames: Tensor, params: dict, prefix: str = "alexnet",
                         trace: list | None = None) -> Tensor:
    """conv/relu stack with pools after conv1, conv2, conv5, then adaptive average pool to 6x6.

    ``trace`` (optional list) receives ``(layer_name, shape)`` after every stage.
    """
    _check_frames(frames, "alexnet_lite_forward")
    x = frames
    for i, spec in enumerate(ALEXNET_LAYERS):
        x = ops.relu(ops.conv2d(x, params[f"{prefix}.conv{i + 1}.weight"], params[f"{prefix}.conv{i + 1}.bias"],
                                spec.stride, spec.padding))
        if trace is not None:
            trace.append((f"conv{i + 1}", x.shape))
        if i in ALEXNET_POOL_AFTER:
            x = _pool(x)
            if trace is not None:
                trace.append((f"pool{i + 1}", x.shape))
    h, w = x.shape[-2:]
    x = ops.adaptive_avgpool2d(x, (min(ALEXNET_OUT_HW, h), min(ALEXNET_OUT_HW, w)))
    if trace is not None:
        trace.append(("avgpool", x.shape))
    return x


def fire_forward(x: Tensor, params: dict, name: str, spec: FireSpec | None = None) -> Tensor:
    """squeeze 1x1 -> relu -> [expand 1x1 -> relu | expand 3x3 (pad 1) -> relu] concatenated."""
    w_sq = params[f"{name}.squeeze.weight"]
    if spec is not None:
        expected = (spec.squeeze_channels, spec.expand1x1_channels, spec.expand3x3_channels)
        actual = (w_sq.shape[0], params[f"{name}.expand1x1.weight"].shape[0],
                  params[f"{name}.expand3x3.weight"].shape[0])
        if expected != actual:
            raise ValueError(f"{name}: parameters have channels {actual}, spec says {expected}")
    c_in = x.shape[-3]
    if c_in != w_sq.shape[1]:
        raise ValueError(f"{name}: input has {c_in} channels, squeeze layer expects {w_sq.shape[1]}")
    s = ops.relu(ops.conv2d(x, w_sq, params[f"{name}.squeeze.bias"]))
    e1 = ops.relu(ops.conv2d(s, params[f"{name}.expand1x1.weight"], params[f"{name}.expand1x1.bias"]))
    e3 = ops.relu(ops.conv2d(s, params[f"{name}.expand3x3.weight"], params[f"{name}.expand3x3.bias"],
                             stride=1, padding=1))
    return ops.concat_channels(e1, e3)


def squeezenet_lite_forward(frames: Tensor, params: dict, prefix: str = "squeezenet",
                            trace: list | None = None) -> Tensor:
    _check_frames(frames, "squeezenet_lite_forward")
    spec = SQUEEZENET_CONV1
    x = ops.relu(ops.conv2d(frames, params[f"{prefix}.conv1.weight"], params[f"{prefix}.conv1.bias"],
                            spec.stride, spec.padding))
    stages = ["conv1"] + [f"fire{n}" for n in range(2, 10)]
    for stage in stages:
        if stage != "conv1":
            x = fire_forward(x, params, f"{prefix}.{stage}")
        if trace is not None:
            trace.append((stage, x.shape))
        if stage in SQUEEZENET_POOL_AFTER:
            x = _pool(x)
            if trace is not None:
                trace.append((f"pool_{stage}", x.shape))
    return x
