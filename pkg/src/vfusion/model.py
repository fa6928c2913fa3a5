"""Two-stream network: AlexNet-lite and SqueezeNet-lite, one ConvLSTM per stream,
channel fusion of the final hidden states, 2x2 max pool and a two-layer head.
"""

from __future__ import annotations

from collections import OrderedDict
from dataclasses import asdict, dataclass, fields

import numpy as np

from . import backbones, ops
from .convlstm import ConvLSTMParams, convlstm_unroll, init_convlstm
from .tensor import Tensor, as_tensor

STREAM_POOL = (3, 2)   # 13x13 SqueezeNet map -> 6x6
FUSION_POOL = (2, 2)   # fused 6x6 -> 3x3
CLASSES = ("violence", "non-violence")


@dataclass(frozen=True)
class ModelConfig:
    width_factor: float = 1.0
    sequence_length: int = 20
    hidden_channels: int = 256
    fc1_width: int = 1000
    num_classes: int = 2
    crop_size: int = 224

    def __post_init__(self):
        errors = self.problems()
        if errors:
            raise ValueError("invalid model config: " + "; ".join(errors))

    def problems(self) -> list[str]:
        errs = []
        if not 0 < self.width_factor <= 1:
            errs.append(f"width_factor must be in (0, 1], got {self.width_factor}")
        if self.sequence_length < 1:
            errs.append(f"sequence_length must be >= 1, got {self.sequence_length}")
        if self.hidden_channels < 1:
            errs.append(f"hidden_channels must be >= 1, got {self.hidden_channels}")
        if self.fc1_width < 1:
            errs.append(f"fc1_width must be >= 1, got {self.fc1_width}")
        if self.num_classes != 2:
            errs.append(f"num_classes is fixed at 2, got {self.num_classes}")
        if not errs:
            try:
                spatial_chain(self.crop_size)
            except ValueError as e:
                errs.append(str(e))
        return errs

    @property
    def hidden(self) -> int:
        return backbones.scaled(self.hidden_channels, self.width_factor)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        names = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in names})


def spatial_chain(crop_size: int) -> dict:
    """Spatial sizes through both streams for a square ``crop_size`` input."""
    from .ops import conv_output_size as co, pool_output_size as po

    k, s = backbones.POOL_KERNEL, backbones.POOL_STRIDE
    if crop_size < 11:
        raise ValueError(f"crop_size {crop_size} too small for the 11x11 first convolution")
    n = crop_size
    alex = []
    for i, spec in enumerate(backbones.ALEXNET_LAYERS):
        n = co(n, spec.kernel, spec.stride, spec.padding)
        if i in backbones.ALEXNET_POOL_AFTER:
            n = po(n, k, s, ceil_mode=True)
        alex.append(n)
    alex_out = min(backbones.ALEXNET_OUT_HW, n)

    c1 = backbones.SQUEEZENET_CONV1
    if crop_size < c1.kernel:
        raise ValueError(f"crop_size {crop_size} too small for SqueezeNet conv1")
    n = co(crop_size, c1.kernel, c1.stride, c1.padding)
    sq = [n]
    for _ in backbones.SQUEEZENET_POOL_AFTER:
        n = po(n, k, s, ceil_mode=True)
        sq.append(n)
    sq_out = n
    sq_pooled = po(sq_out, *STREAM_POOL, ceil_mode=True)
    if sq_pooled != alex_out:
        raise ValueError(f"crop_size {crop_size}: AlexNet stream ends at {alex_out}x{alex_out} but pooled "
                         f"SqueezeNet stream at {sq_pooled}x{sq_pooled}; pick a crop size where they agree")
    return {"alexnet": alex_out, "squeezenet": sq_out, "state": alex_out,
            "fused_pooled": po(alex_out, *FUSION_POOL, ceil_mode=True)}


class ModelParams:
    """Ordered name -> Tensor registry plus the config that shaped it."""

    def __init__(self, config: ModelConfig, tensors: "OrderedDict[str, Tensor]"):
        self.config = config
        self.tensors = tensors

    def __getitem__(self, name: str) -> Tensor:
        return self.tensors[name]

    def __contains__(self, name) -> bool:
        return name in self.tensors

    def __iter__(self):
        return iter(self.tensors)

    def __len__(self) -> int:
        return len(self.tensors)

    def items(self):
        return self.tensors.items()

    def values(self):
        return self.tensors.values()

    def census(self) -> "OrderedDict[str, tuple[int, ...]]":
        return OrderedDict((k, tuple(v.shape)) for k, v in self.tensors.items())

    def count(self) -> int:
        return int(sum(v.size for v in self.tensors.values()))

    def zero_grad(self) -> None:
        for t in self.tensors.values():
            t.grad = None

    def convlstm(self, stream: str) -> ConvLSTMParams:
        return ConvLSTMParams.from_registry(self.tensors, f"convlstm_{stream}")

    def astype(self, dtype) -> "ModelParams":
        return ModelParams(self.config, OrderedDict(
            (k, Tensor(v.data.astype(dtype), requires_grad=True, name=k)) for k, v in self.tensors.items()))


def build_model(config: ModelConfig, seed: int = 0, dtype=np.float32) -> ModelParams:
    """Create every trainable tensor deterministically from ``seed``.

    Each block draws from its own child stream, so e.g. the head init does not
    depend on how many numbers the backbones consumed.
    """
    blocks = np.random.SeedSequence(seed).spawn(5)
    rng = [np.random.default_rng(b) for b in blocks]
    wf = config.width_factor
    chain = spatial_chain(config.crop_size)
    state_hw = (chain["state"], chain["state"])

    t: OrderedDict[str, Tensor] = OrderedDict()
    c_alex = backbones.init_alexnet(t, wf, rng[0], dtype)
    c_sq = backbones.init_squeezenet(t, wf, rng[1], dtype)
    hid = config.hidden
    for stream, c_in, r in (("a", c_alex, rng[2]), ("s", c_sq, rng[3])):
        t.update(init_convlstm(c_in, hid, state_hw, r, dtype).named(f"convlstm_{stream}"))
    flat = 2 * hid * chain["fused_pooled"] ** 2
    r = rng[4]
    t["head.fc1.weight"] = Tensor(backbones.he_normal(r, (config.fc1_width, flat), flat, dtype), requires_grad=True)
    t["head.fc1.bias"] = Tensor(np.zeros(config.fc1_width, dtype=dtype), requires_grad=True)
    t["head.fc2.weight"] = Tensor(backbones.he_normal(r, (config.num_classes, config.fc1_width),
                                                      config.fc1_width, dtype), requires_grad=True)
    t["head.fc2.bias"] = Tensor(np.zeros(config.num_classes, dtype=dtype), requires_grad=True)
    for name, tensor in t.items():
        tensor.name = name
    return ModelParams(config, t)


def _check_clips(clips: Tensor, config: ModelConfig) -> None:
    if clips.ndim != 5 or clips.shape[2] != 3:
        raise ValueError(f"expected clips of shape B x S x 3 x H x W, got {clips.shape}")
    b, s, _, h, w = clips.shape
    if s != config.sequence_length:
        raise ValueError(f"expected {config.sequence_length} frames per clip, got {s}")
    if (h, w) != (config.crop_size, config.crop_size):
        raise ValueError(f"expected {config.crop_size}x{config.crop_size} frames, got {h}x{w}")


def forward_batch(clips, params: ModelParams, trace: list | None = None) -> Tensor:
    """Logits ``(B, 2)`` for a batch of preprocessed clips ``(B, S, 3, H, W)``.

    With ``trace`` a list, ``(stage, shape)`` pairs are appended for one frame /
    one clip (batch axes dropped) so the dimension chain can be inspected.
    """
    clips = as_tensor(clips)
    cfg = params.config
    _check_clips(clips, cfg)
    b, s = clips.shape[:2]
    # time-major so each timestep is a contiguous (B, ...) block for the recurrences
    frames = Tensor(np.ascontiguousarray(clips.data.transpose(1, 0, 2, 3, 4)).reshape((s * b,) + clips.shape[2:]))

    a_trace = [] if trace is not None else None
    s_trace = [] if trace is not None else None
    feat_a = backbones.alexnet_lite_forward(frames, params.tensors, trace=a_trace)
    feat_s = backbones.squeezenet_lite_forward(frames, params.tensors, trace=s_trace)
    feat_s = ops.maxpool2d(feat_s, *STREAM_POOL, ceil_mode=True)

    seq_a = ops.reshape(feat_a, (s, b) + feat_a.shape[1:])
    seq_s = ops.reshape(feat_s, (s, b) + feat_s.shape[1:])
    state_a = convlstm_unroll(seq_a, params.convlstm("a"))
    state_s = convlstm_unroll(seq_s, params.convlstm("s"))

    fused = ops.concat_channels(state_a.H, state_s.H)
    pooled = ops.maxpool2d(fused, *FUSION_POOL, ceil_mode=True)
    flat = ops.flatten(pooled, 1)
    hidden = ops.relu(ops.linear(flat, params["head.fc1.weight"], params["head.fc1.bias"]))
    logits = ops.linear(hidden, params["head.fc2.weight"], params["head.fc2.bias"])

    if trace is not None:
        trace.extend((f"alexnet.{k}", v[1:]) for k, v in a_trace)
        trace.extend((f"squeezenet.{k}", v[1:]) for k, v in s_trace)
        trace.append(("squeezenet.stream_pool", feat_s.shape[1:]))
        trace.append(("convlstm_a.H", state_a.H.shape[1:]))
        trace.append(("convlstm_s.H", state_s.H.shape[1:]))
        trace.append(("fusion", fused.shape[1:]))
        trace.append(("fusion_pool", pooled.shape[1:]))
        trace.append(("flatten", flat.shape[1:]))
        trace.append(("fc1", hidden.shape[1:]))
        trace.append(("logits", logits.shape[1:]))
    return logits


def model_forward(clip, params: ModelParams, trace: list | None = None) -> tuple[Tensor, Tensor]:
    """Single clip (list of ``3 x H x W`` frames or an ``S x 3 x H x W`` tensor) -> ``(logits[2], probs[2])``."""
    if isinstance(clip, (list, tuple)):
        arr = np.stack([as_tensor(f).data for f in clip])
    else:
        arr = as_tensor(clip).data
    if arr.ndim != 4:
        raise ValueError(f"expected a clip of S x 3 x H x W frames, got shape {arr.shape}")
    logits = forward_batch(Tensor(arr[None]), params, trace)
    logits = ops.reshape(logits, (logits.shape[-1],))
    return logits, Tensor(ops.softmax(logits.data), dtype=logits.dtype)


def predict_label(probs: np.ndarray) -> np.ndarray:
    """Argmax over classes; ties resolve to the lower index (violence)."""
    return np.argmax(np.asarray(probs), axis=-1)
