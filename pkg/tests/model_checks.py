"""Whole-model oracles shared by the model tests and the acceptance suite."""

import math

import numpy as np

from vfusion import ops
from vfusion.backbones import SQUEEZENET_CONV1, SQUEEZENET_FIRES
from vfusion.gradcheck import finite_diff_grad, rel_error
from vfusion.model import ModelConfig, build_model, forward_batch
from vfusion.tensor import Tensor, no_grad

PUBLISHED_CHAIN = {
    "alexnet.conv1": (64, 55, 55),
    "alexnet.pool1": (64, 27, 27),
    "alexnet.conv2": (192, 27, 27),
    "alexnet.pool2": (192, 13, 13),
    "alexnet.avgpool": (256, 6, 6),
    "squeezenet.fire9": (512, 13, 13),
    "squeezenet.stream_pool": (512, 6, 6),
    "convlstm_a.H": (256, 6, 6),
    "convlstm_s.H": (256, 6, 6),
    "fusion": (512, 6, 6),
    "fusion_pool": (512, 3, 3),
    "flatten": (4608,),
    "fc1": (1000,),
    "logits": (2,),
}


def full_width_trace(seed=0):
    params = build_model(ModelConfig(), seed)
    clip = np.random.default_rng(seed).standard_normal((1, 20, 3, 224, 224)).astype(np.float32)
    trace = []
    with no_grad():
        logits = forward_batch(Tensor(clip), params, trace)
    return dict(trace), logits


def expected_param_count(hidden=256, fc1=1000):
    """Full-width count from layer arithmetic alone."""
    def conv(c_out, c_in, k):
        return c_out * c_in * k * k + c_out

    alex = [(64, 3, 11), (192, 64, 5), (384, 192, 3), (256, 384, 3), (256, 256, 3)]
    total = sum(conv(*a) for a in alex)
    c = SQUEEZENET_CONV1.out_channels
    total += conv(c, 3, 7)
    for f in SQUEEZENET_FIRES:
        s, e1, e3 = f.squeeze_channels, f.expand1x1_channels, f.expand3x3_channels
        total += conv(s, c, 1) + conv(e1, s, 1) + conv(e3, s, 3)
        c = e1 + e3
    for c_in in (256, 512):  # one cell per stream
        total += 4 * (hidden * c_in * 9 + hidden * hidden * 9 + hidden) + 3 * hidden * 36
    flat = 2 * hidden * 9
    total += flat * fc1 + fc1 + fc1 * 2 + 2
    return total


def end_to_end_gradient_error(fraction=0.01, seed=0, crop=32, seq=3, batch=1):
    """Cross-entropy gradient vs central differences on a random ``fraction`` of every tensor.

    Runs at width 0.125 in double precision; returns (max relative error, samples).
    The instance is kept small because every extra relu/max unit is another kink
    that an eps-sized step can straddle.
    """
    cfg = ModelConfig(width_factor=0.125, sequence_length=seq, crop_size=crop)
    params = build_model(cfg, seed).astype(np.float64)
    r = np.random.default_rng(seed + 100)
    # nonzero peepholes/biases so their gradients are exercised
    for name, t in params.items():
        if ".w_c" in name or name.endswith("bias") or ".b_" in name:
            t.data[...] = 0.1 * r.standard_normal(t.shape)
    clips = Tensor(r.standard_normal((batch, seq, 3, crop, crop)), dtype=np.float64)
    labels = np.arange(batch) % 2

    def loss(_=None):
        return ops.softmax_cross_entropy(forward_batch(clips, params), labels)[1]

    params.zero_grad()
    loss().backward()
    worst, n = 0.0, 0
    for name, t in params.items():
        k = max(1, math.ceil(fraction * t.size))
        idx = r.choice(t.size, size=k, replace=False)
        fd = finite_diff_grad(loss, t, 1e-5, idx).reshape(-1)[idx]
        worst = max(worst, rel_error(t.grad.reshape(-1)[idx], fd))
        n += k
    return worst, n
