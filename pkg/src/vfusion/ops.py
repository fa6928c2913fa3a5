"""Differentiable operations over :class:`~vfusion.tensor.Tensor`.

Spatial ops accept either a single map ``C x H x W`` or a batch ``N x C x H x W``.
Convolution is cross-correlation (no kernel flip), done as a patch gather over a
strided window view followed by one BLAS contraction.
"""

from __future__ import annotations

import math

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .tensor import Tensor, _record, as_tensor


def _reduce_to(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum a gradient down to ``shape`` (only leading-axis broadcasting is used here)."""
    if g.shape == shape:
        return g
    lead = g.ndim - len(shape)
    return g.sum(axis=tuple(range(lead)))


def _check_binary(a: Tensor, b: Tensor, op: str) -> None:
    if a.shape == b.shape:
        return
    # a bias/peephole of shape S may be applied across a leading batch axis of x
    lo, hi = (a, b) if a.ndim < b.ndim else (b, a)
    if lo.ndim < hi.ndim and hi.shape[hi.ndim - lo.ndim:] == lo.shape:
        return
    raise ValueError(f"{op}: shape mismatch {a.shape} vs {b.shape}")


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_binary(a, b, "add")

    def backward(g):
        if a.requires_grad:
            a._accumulate(_reduce_to(g, a.shape))
        if b.requires_grad:
            b._accumulate(_reduce_to(g, b.shape))

    return _record(a.data + b.data, (a, b), backward)


def hadamard(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_binary(a, b, "hadamard")

    def backward(g):
        if a.requires_grad:
            a._accumulate(_reduce_to(g * b.data, a.shape))
        if b.requires_grad:
            b._accumulate(_reduce_to(g * a.data, b.shape))

    return _record(a.data * b.data, (a, b), backward)


def elementwise_arith(a, b, kind: str) -> Tensor:
    if kind == "add":
        return add(a, b)
    if kind == "hadamard":
        return hadamard(a, b)
    raise ValueError(f"unknown elementwise op {kind!r}")


def scale(x: Tensor, c: float) -> Tensor:
    def backward(g):
        x._accumulate(g * c)

    return _record(x.data * x.data.dtype.type(c), (x,), backward)


def _sigmoid(z: np.ndarray) -> np.ndarray:
    # split by sign so neither branch overflows
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def sigmoid(x: Tensor) -> Tensor:
    y = _sigmoid(x.data)

    def backward(g):
        x._accumulate(g * y * (1 - y))

    return _record(y, (x,), backward)


def tanh(x: Tensor) -> Tensor:
    y = np.tanh(x.data)

    def backward(g):
        x._accumulate(g * (1 - y * y))

    return _record(y, (x,), backward)


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    y = np.where(mask, x.data, 0).astype(x.dtype)

    def backward(g):
        x._accumulate(g * mask)

    return _record(y, (x,), backward)


def activation(x: Tensor, kind: str) -> Tensor:
    try:
        fn = {"sigmoid": sigmoid, "tanh": tanh, "relu": relu}[kind]
    except KeyError:
        raise ValueError(f"unknown activation {kind!r}") from None
    return fn(x)


def sum_all(x: Tensor) -> Tensor:
    def backward(g):
        x._accumulate(np.broadcast_to(g, x.shape).astype(x.dtype))

    return _record(np.asarray(x.data.sum(), dtype=x.dtype), (x,), backward)


def mean_all(x: Tensor) -> Tensor:
    return scale(sum_all(x), 1.0 / x.size)


def reshape(x: Tensor, shape) -> Tensor:
    shape = tuple(shape)
    y = x.data.reshape(shape)

    def backward(g):
        x._accumulate(g.reshape(x.shape))

    return _record(y, (x,), backward)


def flatten(x: Tensor, start: int = 0) -> Tensor:
    return reshape(x, x.shape[:start] + (-1,))


def index(x: Tensor, key) -> Tensor:
    y = x.data[key]

    basic = all(k is Ellipsis or k is None or isinstance(k, (int, slice))
                for k in (key if isinstance(key, tuple) else (key,)))

    def backward(g):
        gx = np.zeros_like(x.data)
        if basic:
            gx[key] = g
        else:
            np.add.at(gx, key, g)
        x._accumulate(gx)

    return _record(np.ascontiguousarray(y), (x,), backward)


def concat(tensors, axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    y = np.concatenate([t.data for t in tensors], axis=axis)
    bounds = np.cumsum([0] + [t.shape[axis] for t in tensors])

    def backward(g):
        for t, lo, hi in zip(tensors, bounds[:-1], bounds[1:]):
            if t.requires_grad:
                sl = [slice(None)] * g.ndim
                sl[axis] = slice(lo, hi)
                t._accumulate(g[tuple(sl)])

    return _record(y, tensors, backward)


def concat_channels(a: Tensor, b: Tensor) -> Tensor:
    """Stack ``b``'s channels after ``a``'s; works for ``CxHxW`` and ``NxCxHxW``."""
    if a.ndim != b.ndim or a.ndim not in (3, 4):
        raise ValueError(f"concat_channels: expected two 3D or two 4D tensors, got {a.shape} and {b.shape}")
    if a.shape[-2:] != b.shape[-2:] or a.shape[:-3] != b.shape[:-3]:
        raise ValueError(f"concat_channels: spatial mismatch {a.shape} vs {b.shape}")
    if a.shape[-3] < 1 or b.shape[-3] < 1:
        raise ValueError("concat_channels: both inputs need at least one channel")
    return concat([a, b], axis=a.ndim - 3)


# -- spatial ops ----------------------------------------------------------

def _as_batch(x: Tensor, op: str) -> tuple[np.ndarray, bool]:
    if x.ndim == 3:
        return x.data[None], True
    if x.ndim == 4:
        return x.data, False
    raise ValueError(f"{op}: expected CxHxW or NxCxHxW input, got shape {x.shape}")


def conv_output_size(n: int, kernel: int, stride: int, padding: int) -> int:
    return (n + 2 * padding - kernel) // stride + 1


def conv2d(x: Tensor, weight: Tensor, bias: Tensor | None = None, stride: int = 1, padding: int = 0) -> Tensor:
    xb, single = _as_batch(x, "conv2d")
    n, c, h, w = xb.shape
    if weight.ndim != 4:
        raise ValueError(f"conv2d: weight must be C_out x C_in x kH x kW, got {weight.shape}")
    c_out, c_in, kh, kw = weight.shape
    if c_in != c:
        raise ValueError(f"conv2d: input has {c} channels but weight expects C_in={c_in} "
                         f"(input {x.shape}, weight {weight.shape})")
    if stride < 1 or padding < 0:
        raise ValueError(f"conv2d: invalid stride={stride} / padding={padding}")
    if kh > h + 2 * padding or kw > w + 2 * padding:
        raise ValueError(f"conv2d: kernel {kh}x{kw} exceeds padded input {h + 2 * padding}x{w + 2 * padding}")
    if bias is not None and bias.shape != (c_out,):
        raise ValueError(f"conv2d: bias shape {bias.shape} != ({c_out},)")

    ho = conv_output_size(h, kh, stride, padding)
    wo = conv_output_size(w, kw, stride, padding)
    xp = np.pad(xb, ((0, 0), (0, 0), (padding, padding), (padding, padding))) if padding else xb
    # (N, C, Ho, Wo, kh, kw) view, no copy
    win = sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride]
    out = np.tensordot(win, weight.data, axes=([1, 4, 5], [1, 2, 3]))  # N, Ho, Wo, C_out
    out = out.transpose(0, 3, 1, 2)
    if bias is not None:
        out = out + bias.data[None, :, None, None]
    out = np.ascontiguousarray(out, dtype=xb.dtype)

    parents = (x, weight) if bias is None else (x, weight, bias)

    def backward(g):
        gb = g[None] if single else g
        if weight.requires_grad:
            weight._accumulate(np.tensordot(gb, win, axes=([0, 2, 3], [0, 2, 3])))
        if bias is not None and bias.requires_grad:
            bias._accumulate(gb.sum(axis=(0, 2, 3)))
        if x.requires_grad:
            dcols = np.tensordot(weight.data, gb, axes=([0], [1]))  # C, kh, kw, N, Ho, Wo
            dxp = np.zeros_like(xp)
            for i in range(kh):
                for j in range(kw):
                    dxp[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride] += \
                        dcols[:, i, j].transpose(1, 0, 2, 3)
            dx = dxp[:, :, padding:padding + h, padding:padding + w]
            x._accumulate(dx[0] if single else dx)

    return _record(out[0] if single else out, parents, backward)


def pool_output_size(n: int, kernel: int, stride: int, ceil_mode: bool = False) -> int:
    if not ceil_mode:
        return (n - kernel) // stride + 1
    out = math.ceil(max(n - kernel, 0) / stride) + 1
    # every window must start inside the input
    if (out - 1) * stride >= n:
        out -= 1
    return out


def maxpool2d(x: Tensor, kernel: int, stride: int, ceil_mode: bool = False) -> Tensor:
    """Max pooling; gradient goes to the first (row-major) argmax of each window.

    With ``ceil_mode`` the last window may overhang the bottom/right edge and is
    clipped to the input, so inputs smaller than the kernel pool to a single cell.
    """
    xb, single = _as_batch(x, "maxpool2d")
    n, c, h, w = xb.shape
    if kernel < 1 or stride < 1:
        raise ValueError(f"maxpool2d: invalid kernel={kernel} / stride={stride}")
    if not ceil_mode and (kernel > h or kernel > w):
        raise ValueError(f"maxpool2d: kernel {kernel} larger than spatial extent {h}x{w}")
    ho = pool_output_size(h, kernel, stride, ceil_mode)
    wo = pool_output_size(w, kernel, stride, ceil_mode)
    hp, wp = (ho - 1) * stride + kernel, (wo - 1) * stride + kernel
    if hp > h or wp > w:
        xp = np.full((n, c, max(hp, h), max(wp, w)), -np.inf, dtype=xb.dtype)
        xp[:, :, :h, :w] = xb
    else:
        xp = xb
    win = sliding_window_view(xp, (kernel, kernel), axis=(2, 3))[:, :, ::stride, ::stride][:, :, :ho, :wo]
    flat = win.reshape(n, c, ho, wo, kernel * kernel)
    am = flat.argmax(axis=-1)
    out = np.take_along_axis(flat, am[..., None], axis=-1)[..., 0]

    def backward(g):
        gb = g[None] if single else g
        dxp = np.zeros(xp.shape, dtype=xb.dtype)
        for di in range(kernel):
            for dj in range(kernel):
                hit = am == di * kernel + dj
                if hit.any():
                    dxp[:, :, di:di + stride * ho:stride, dj:dj + stride * wo:stride] += gb * hit
        dx = dxp[:, :, :h, :w]
        x._accumulate(dx[0] if single else dx)

    out = np.ascontiguousarray(out)
    return _record(out[0] if single else out, (x,), backward)


def _adaptive_bounds(n: int, m: int) -> list[tuple[int, int]]:
    return [((i * n) // m, -((-(i + 1) * n) // m)) for i in range(m)]


def adaptive_avgpool2d(x: Tensor, target: tuple[int, int]) -> Tensor:
    xb, single = _as_batch(x, "adaptive_avgpool2d")
    n, c, h, w = xb.shape
    th, tw = target
    if not (1 <= th <= h and 1 <= tw <= w):
        raise ValueError(f"adaptive_avgpool2d: target {target} outside input extent {h}x{w}")
    rows, cols = _adaptive_bounds(h, th), _adaptive_bounds(w, tw)
    out = np.empty((n, c, th, tw), dtype=xb.dtype)
    for i, (r0, r1) in enumerate(rows):
        for j, (c0, c1) in enumerate(cols):
            out[:, :, i, j] = xb[:, :, r0:r1, c0:c1].mean(axis=(2, 3))

    def backward(g):
        gb = g[None] if single else g
        dx = np.zeros_like(xb)
        for i, (r0, r1) in enumerate(rows):
            for j, (c0, c1) in enumerate(cols):
                area = (r1 - r0) * (c1 - c0)
                dx[:, :, r0:r1, c0:c1] += (gb[:, :, i, j] / area)[:, :, None, None]
        x._accumulate(dx[0] if single else dx)

    return _record(out[0] if single else out, (x,), backward)


# -- dense head -----------------------------------------------------------

def linear(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """``x @ weight.T + bias`` for ``x`` of shape ``(N,)`` or ``(B, N)``."""
    if weight.ndim != 2 or x.ndim not in (1, 2) or weight.shape[1] != x.shape[-1]:
        raise ValueError(f"linear: input {x.shape} incompatible with weight {weight.shape}")
    if bias is not None and bias.shape != (weight.shape[0],):
        raise ValueError(f"linear: bias shape {bias.shape} != ({weight.shape[0]},)")
    out = x.data @ weight.data.T
    if bias is not None:
        out = out + bias.data
    parents = (x, weight) if bias is None else (x, weight, bias)

    def backward(g):
        if x.requires_grad:
            x._accumulate(g @ weight.data)
        if weight.requires_grad:
            weight._accumulate(np.outer(g, x.data) if x.ndim == 1 else g.T @ x.data)
        if bias is not None and bias.requires_grad:
            bias._accumulate(g if g.ndim == 1 else g.sum(axis=0))

    return _record(np.asarray(out, dtype=x.dtype), parents, backward)


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def softmax_cross_entropy(logits: Tensor, label) -> tuple[Tensor, Tensor]:
    """Return ``(probs, loss)``; for a batch ``(B, K)`` the loss is the mean over rows."""
    k = logits.shape[-1]
    labels = np.atleast_1d(np.asarray(label))
    if labels.dtype.kind not in "iu":
        raise ValueError(f"labels must be integer class indices, got {label!r}")
    if np.any(labels < 0) or np.any(labels >= k):
        raise ValueError(f"label {label!r} out of range for {k} classes")
    z = logits.data.reshape(-1, k)
    if len(labels) != z.shape[0]:
        raise ValueError(f"{z.shape[0]} logit rows but {len(labels)} labels")
    p = softmax(z)
    rows = np.arange(len(labels))
    shifted = z - z.max(axis=1, keepdims=True)
    logp = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    loss = -logp[rows, labels].mean()

    def backward(g):
        d = p.copy()
        d[rows, labels] -= 1
        logits._accumulate((g * d / len(labels)).reshape(logits.shape).astype(logits.dtype))

    probs = Tensor(p.reshape(logits.shape), dtype=logits.dtype)
    return probs, _record(np.asarray(loss, dtype=logits.dtype), (logits,), backward)
