"""Convolutional LSTM with peephole (Hadamard) connections.

    i = sigmoid(W_xi * X + W_hi * H_prev + W_ci o C_prev + b_i)
    f = sigmoid(W_xf * X + W_hf * H_prev + W_cf o C_prev + b_f)
    C = f o C_prev + i o tanh(W_xc * X + W_hc * H_prev + b_c)
    o = sigmoid(W_xo * X + W_ho * H_prev + W_co o C + b_o)
    H = o o tanh(C)

``*`` is a 3x3, stride 1, padding 1 convolution; ``o`` is elementwise.  The four
input kernels (and the four hidden kernels) are stacked along the output axis so
each step costs two convolutions; for a whole sequence the input convolution is
done once over every frame.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import ops
from .backbones import he_normal
from .tensor import Tensor

GATES = ("i", "f", "c", "o")
PEEPHOLES = ("i", "f", "o")
KERNEL = 3


@dataclass
class ConvLSTMParams:
    w_x: dict  # gate -> Tensor[hidden, input, 3, 3]
    w_h: dict  # gate -> Tensor[hidden, hidden, 3, 3]
    w_c: dict  # gate in (i, f, o) -> Tensor[hidden, h, w]
    b: dict    # gate -> Tensor[hidden]

    @property
    def hidden(self) -> int:
        return self.w_h["i"].shape[0]

    @property
    def input_channels(self) -> int:
        return self.w_x["i"].shape[1]

    @property
    def spatial(self) -> tuple[int, int]:
        return self.w_c["i"].shape[1:]

    @classmethod
    def from_registry(cls, params: dict, prefix: str) -> "ConvLSTMParams":
        return cls(
            w_x={g: params[f"{prefix}.w_x{g}"] for g in GATES},
            w_h={g: params[f"{prefix}.w_h{g}"] for g in GATES},
            w_c={g: params[f"{prefix}.w_c{g}"] for g in PEEPHOLES},
            b={g: params[f"{prefix}.b_{g}"] for g in GATES},
        )

    def named(self, prefix: str) -> dict:
        out = {}
        out.update({f"{prefix}.w_x{g}": self.w_x[g] for g in GATES})
        out.update({f"{prefix}.w_h{g}": self.w_h[g] for g in GATES})
        out.update({f"{prefix}.w_c{g}": self.w_c[g] for g in PEEPHOLES})
        out.update({f"{prefix}.b_{g}": self.b[g] for g in GATES})
        return out

    def validate(self) -> None:
        hid, cin = self.hidden, self.input_channels
        for g in GATES:
            if self.w_x[g].shape != (hid, cin, KERNEL, KERNEL):
                raise ValueError(f"w_x{g} has shape {self.w_x[g].shape}, expected {(hid, cin, KERNEL, KERNEL)}")
            if self.w_h[g].shape != (hid, hid, KERNEL, KERNEL):
                raise ValueError(f"w_h{g} has shape {self.w_h[g].shape}, expected {(hid, hid, KERNEL, KERNEL)}")
            if self.b[g].shape != (hid,):
                raise ValueError(f"b_{g} has shape {self.b[g].shape}, expected {(hid,)}")
        for g in PEEPHOLES:
            if self.w_c[g].shape != (hid,) + tuple(self.spatial):
                raise ValueError(f"w_c{g} has shape {self.w_c[g].shape}, expected {(hid,) + tuple(self.spatial)}")


def init_convlstm(input_channels: int, hidden: int, spatial: tuple[int, int], rng: np.random.Generator,
                  dtype=np.float32, forget_bias: float = 1.0) -> ConvLSTMParams:
    """He-initialized gate kernels, zero peepholes, forget-gate bias ``forget_bias``."""
    def param(arr):
        return Tensor(arr.astype(dtype), requires_grad=True)

    w_x = {g: param(he_normal(rng, (hidden, input_channels, KERNEL, KERNEL),
                              input_channels * KERNEL * KERNEL, dtype)) for g in GATES}
    w_h = {g: param(he_normal(rng, (hidden, hidden, KERNEL, KERNEL), hidden * KERNEL * KERNEL, dtype))
           for g in GATES}
    w_c = {g: param(np.zeros((hidden,) + tuple(spatial))) for g in PEEPHOLES}
    b = {g: param(np.full(hidden, forget_bias if g == "f" else 0.0)) for g in GATES}
    return ConvLSTMParams(w_x, w_h, w_c, b)


@dataclass
class ConvLSTMState:
    H: Tensor
    C: Tensor

    @classmethod
    def zeros(cls, hidden: int, spatial, batch: int | None = None, dtype=np.float32) -> "ConvLSTMState":
        shape = (hidden,) + tuple(spatial)
        if batch is not None:
            shape = (batch,) + shape
        return cls(Tensor(np.zeros(shape, dtype=dtype)), Tensor(np.zeros(shape, dtype=dtype)))


def _stack(tensors: dict) -> Tensor:
    return ops.concat([tensors[g] for g in GATES], axis=0)


def input_contribution(x: Tensor, params: ConvLSTMParams) -> Tensor:
    """Stacked ``W_x* * X + b_*`` for every gate, shape ``[..., 4*hidden, h, w]``."""
    return ops.conv2d(x, _stack(params.w_x), _stack(params.b), stride=1, padding=1)


def _step(xz: Tensor, state: ConvLSTMState, params: ConvLSTMParams, gates: dict | None) -> ConvLSTMState:
    hid = params.hidden
    z = ops.add(xz, ops.conv2d(state.H, _stack(params.w_h), None, stride=1, padding=1))

    def part(k):
        return z[..., k * hid:(k + 1) * hid, :, :]

    i = ops.sigmoid(ops.add(part(0), ops.hadamard(params.w_c["i"], state.C)))
    f = ops.sigmoid(ops.add(part(1), ops.hadamard(params.w_c["f"], state.C)))
    c = ops.add(ops.hadamard(f, state.C), ops.hadamard(i, ops.tanh(part(2))))
    o = ops.sigmoid(ops.add(part(3), ops.hadamard(params.w_c["o"], c)))
    h = ops.hadamard(o, ops.tanh(c))
    if gates is not None:
        gates.update(i=i, f=f, o=o)
    return ConvLSTMState(h, c)


def _check_spatial(x_shape: tuple, state: ConvLSTMState, params: ConvLSTMParams) -> None:
    if x_shape[-2:] != state.H.shape[-2:] or state.H.shape != state.C.shape:
        raise ValueError(f"convlstm: input spatial {x_shape[-2:]} vs state {state.H.shape} / {state.C.shape}")
    if tuple(state.H.shape[-2:]) != tuple(params.spatial):
        raise ValueError(f"convlstm: state spatial {state.H.shape[-2:]} vs peephole {params.spatial}")
    if x_shape[-3] != params.input_channels:
        raise ValueError(f"convlstm: input has {x_shape[-3]} channels, cell expects {params.input_channels}")


def convlstm_step(x: Tensor, state: ConvLSTMState, params: ConvLSTMParams,
                  gates: dict | None = None) -> ConvLSTMState:
    """One recurrence step; ``x`` is ``C x h x w`` (or batched ``N x C x h x w``).

    Pass a dict as ``gates`` to receive the i/f/o activations.
    """
    _check_spatial(x.shape, state, params)
    return _step(input_contribution(x, params), state, params, gates)


def convlstm_unroll(sequence, params: ConvLSTMParams, initial: ConvLSTMState | None = None) -> ConvLSTMState:
    """Fold the step over ``sequence`` (list of maps, or a ``T x ...`` tensor) and return the final state.

    Gradients flow through every timestep (no truncation).
    """
    if isinstance(sequence, Tensor):
        steps = sequence.shape[0]
        stacked = sequence
    else:
        sequence = list(sequence)
        steps = len(sequence)
        if steps and len({s.shape for s in sequence}) != 1:
            raise ValueError("convlstm_unroll: sequence elements must share one shape")
        stacked = None
    if steps == 0:
        raise ValueError("convlstm_unroll: empty sequence")

    if stacked is None:
        stacked = ops.concat([ops.reshape(s, (1,) + s.shape) for s in sequence], axis=0)
    frame_shape = stacked.shape[1:]
    if initial is None:
        batch = frame_shape[0] if len(frame_shape) == 4 else None
        initial = ConvLSTMState.zeros(params.hidden, frame_shape[-2:], batch, stacked.dtype)

    # one convolution over all timesteps for the input path
    flat = ops.reshape(stacked, (-1,) + frame_shape[-3:])
    _check_spatial(frame_shape, initial, params)
    xz_all = input_contribution(flat, params)
    xz_all = ops.reshape(xz_all, (steps,) + frame_shape[:-3] + xz_all.shape[-3:])

    state = initial
    for t in range(steps):
        state = _step(xz_all[t], state, params, None)
    return state
