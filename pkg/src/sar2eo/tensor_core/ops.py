"""Differentiable primitives over NCHW tensors.

Convolutions are im2col via strided windows plus ``tensordot``; the input
gradient of ``conv2d`` and the forward of ``conv_transpose2d`` share one
scatter kernel, which makes the two operators exact adjoints.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ..errors import ContractError, DimensionError
from .tensor import Tensor, as_tensor, record


def _check_same_shape(a: Tensor, b: Tensor, what: str):
    if a.shape != b.shape:
        raise DimensionError(f"{what}: shape mismatch {a.shape} vs {b.shape}")


def _check_4d(x: Tensor, what: str):
    if x.ndim != 4:
        raise DimensionError(f"{what}: expected NCHW tensor, got shape {x.shape}")


# ---------------------------------------------------------------------------
# elementwise / reductions

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_same_shape(a, b, "add")
    return record("add", a.data + b.data, (a, b), lambda g: (g, g))


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_same_shape(a, b, "sub")
    return record("sub", a.data - b.data, (a, b), lambda g: (g, -g))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_same_shape(a, b, "mul")
    return record("mul", a.data * b.data, (a, b), lambda g: (g * b.data, g * a.data))


def scale(a, c: float) -> Tensor:
    a = as_tensor(a)
    c = a.data.dtype.type(c)
    return record("scale", a.data * c, (a,), lambda g: (g * c,))


def sum(a) -> Tensor:  # noqa: A001 - mirrors numpy naming
    a = as_tensor(a)
    return record("sum", a.data.sum(), (a,), lambda g: (np.broadcast_to(g, a.shape),))


def mean(a) -> Tensor:
    a = as_tensor(a)
    n = a.size
    return record("mean", a.data.mean(), (a,), lambda g: (np.broadcast_to(g / n, a.shape),))


def concat(tensors, axis: int = 1) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    ref = tensors[0].shape
    for t in tensors[1:]:
        if len(t.shape) != len(ref) or any(
            s != r for i, (s, r) in enumerate(zip(t.shape, ref)) if i != axis % len(ref)
        ):
            raise DimensionError(f"concat: incompatible shapes {ref} and {t.shape}")
    bounds = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def backward(g):
        return tuple(np.split(g, bounds, axis=axis))

    return record("concat", np.concatenate([t.data for t in tensors], axis=axis), tensors, backward)


def relu(x) -> Tensor:
    x = as_tensor(x)
    mask = x.data > 0
    return record("relu", np.where(mask, x.data, 0).astype(x.dtype), (x,), lambda g: (g * mask,))


def leaky_relu(x, slope: float = 0.2) -> Tensor:
    x = as_tensor(x)
    factor = np.where(x.data > 0, 1.0, slope).astype(x.dtype)
    return record("leaky_relu", x.data * factor, (x,), lambda g: (g * factor,))


def tanh(x) -> Tensor:
    x = as_tensor(x)
    y = np.tanh(x.data)
    return record("tanh", y, (x,), lambda g: (g * (1 - y * y),))


# ---------------------------------------------------------------------------
# convolution kernels (plain numpy)

def _windows(xp: np.ndarray, kh: int, kw: int, stride: int) -> np.ndarray:
    """(N, C, Hp, Wp) -> strided view (N, C, Ho, Wo, kh, kw)."""
    return sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride]


def _pad(x: np.ndarray, pad: int) -> np.ndarray:
    if pad == 0:
        return x
    return np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))


def _correlate(x: np.ndarray, w: np.ndarray, stride: int, pad: int) -> np.ndarray:
    win = _windows(_pad(x, pad), w.shape[2], w.shape[3], stride)
    out = np.tensordot(win, w, axes=([1, 4, 5], [1, 2, 3]))
    return np.ascontiguousarray(out.transpose(0, 3, 1, 2))


def _weight_grad(x: np.ndarray, g: np.ndarray, kh: int, kw: int, stride: int, pad: int) -> np.ndarray:
    """d/dw of correlate(x, w) contracted with g; shape (g channels, x channels, kh, kw)."""
    win = _windows(_pad(x, pad), kh, kw, stride)
    ho, wo = g.shape[2], g.shape[3]
    win = win[:, :, :ho, :wo]
    return np.tensordot(g, win, axes=([0, 2, 3], [0, 2, 3]))


def _scatter(y: np.ndarray, w: np.ndarray, out_hw: tuple, stride: int, pad: int) -> np.ndarray:
    """Adjoint of ``_correlate`` w.r.t. its input.

    y: (N, O, Ho, Wo); w: (O, C, kh, kw); returns (N, C, H, W) with H, W = out_hw.
    Computed as a full correlation of the zero-dilated y with the flipped,
    channel-swapped kernel.
    """
    n, o, ho, wo = y.shape
    kh, kw = w.shape[2], w.shape[3]
    h, wd = out_hw
    hi, wi = stride * (ho - 1) + 1, stride * (wo - 1) + 1
    dtype = np.result_type(y, w)
    dil = np.zeros((n, o, hi + 2 * (kh - 1), wi + 2 * (kw - 1)), dtype=dtype)
    dil[:, :, kh - 1:kh - 1 + hi:stride, kw - 1:kw - 1 + wi:stride] = y
    full = _correlate(dil, np.ascontiguousarray(w[:, :, ::-1, ::-1].transpose(1, 0, 2, 3)), 1, 0)
    # full covers padded-input rows 0 .. stride*(ho-1)+kh-1; rows past that get no gradient
    out = np.zeros((n, full.shape[1], h + 2 * pad, wd + 2 * pad), dtype=dtype)
    rh, rw = min(full.shape[2], h + 2 * pad), min(full.shape[3], wd + 2 * pad)
    out[:, :, :rh, :rw] = full[:, :, :rh, :rw]
    return out[:, :, pad:pad + h, pad:pad + wd].copy()


def conv_output_size(size: int, k: int, stride: int, pad: int) -> int:
    return (size + 2 * pad - k) // stride + 1


def conv_transpose_output_size(size: int, k: int, stride: int, pad: int, output_padding: int = 0) -> int:
    return (size - 1) * stride - 2 * pad + k + output_padding


# ---------------------------------------------------------------------------
# differentiable convolutions

def conv2d(x, weight, bias=None, stride: int = 1, pad: int = 0) -> Tensor:
    """Cross-correlation with zero padding. weight is (Cout, Cin, kh, kw)."""
    x, weight = as_tensor(x), as_tensor(weight)
    _check_4d(x, "conv2d")
    if weight.ndim != 4:
        raise DimensionError(f"conv2d: weight must be 4-D, got {weight.shape}")
    if stride < 1 or pad < 0:
        raise ContractError(f"conv2d: invalid stride={stride} pad={pad}")
    n, cin, h, w = x.shape
    cout, wcin, kh, kw = weight.shape
    if wcin != cin:
        raise DimensionError(f"conv2d: input has {cin} channels, weight expects {wcin}")
    if kh > h + 2 * pad or kw > w + 2 * pad:
        raise DimensionError(f"conv2d: kernel {kh}x{kw} larger than padded input {h + 2 * pad}x{w + 2 * pad}")
    out = _correlate(x.data, weight.data, stride, pad)
    inputs = [x, weight]
    if bias is not None:
        bias = as_tensor(bias)
        if bias.shape != (cout,):
            raise DimensionError(f"conv2d: bias shape {bias.shape} != ({cout},)")
        out += bias.data[None, :, None, None]
        inputs.append(bias)

    need_x, need_w = x.requires_grad, weight.requires_grad

    def backward(g):
        gx = _scatter(g, weight.data, (h, w), stride, pad) if need_x else None
        gw = _weight_grad(x.data, g, kh, kw, stride, pad) if need_w else None
        grads = [gx, gw]
        if bias is not None:
            grads.append(g.sum(axis=(0, 2, 3)))
        return tuple(grads)

    return record("conv2d", out, inputs, backward)


def conv_transpose2d(x, weight, bias=None, stride: int = 1, pad: int = 0, output_padding: int = 0) -> Tensor:
    """Transposed convolution; weight is (Cin, Cout, kh, kw).

    With the same weight array, this is the exact adjoint of ``conv2d``.
    """
    x, weight = as_tensor(x), as_tensor(weight)
    _check_4d(x, "conv_transpose2d")
    if weight.ndim != 4:
        raise DimensionError(f"conv_transpose2d: weight must be 4-D, got {weight.shape}")
    if stride < 1 or pad < 0 or not 0 <= output_padding < stride:
        raise ContractError(f"conv_transpose2d: invalid stride={stride} pad={pad} output_padding={output_padding}")
    n, cin, h, w = x.shape
    wcin, cout, kh, kw = weight.shape
    if wcin != cin:
        raise DimensionError(f"conv_transpose2d: input has {cin} channels, weight expects {wcin}")
    ho = conv_transpose_output_size(h, kh, stride, pad, output_padding)
    wo = conv_transpose_output_size(w, kw, stride, pad, output_padding)
    if ho < 1 or wo < 1:
        raise DimensionError("conv_transpose2d: empty output")
    out = _scatter(x.data, weight.data, (ho, wo), stride, pad)
    inputs = [x, weight]
    if bias is not None:
        bias = as_tensor(bias)
        if bias.shape != (cout,):
            raise DimensionError(f"conv_transpose2d: bias shape {bias.shape} != ({cout},)")
        out += bias.data[None, :, None, None]
        inputs.append(bias)

    need_x, need_w = x.requires_grad, weight.requires_grad

    def backward(g):
        gx = gw = None
        if need_x:
            gx = _correlate(g, weight.data, stride, pad)[:, :, :h, :w]
        if need_w:
            gw = _weight_grad(g, x.data, kh, kw, stride, pad)
        grads = [gx, gw]
        if bias is not None:
            grads.append(g.sum(axis=(0, 2, 3)))
        return tuple(grads)

    return record("conv_transpose2d", out, inputs, backward)


# ---------------------------------------------------------------------------
# normalization / resampling

def instance_norm(x, eps: float = 1e-5) -> Tensor:
    """Per-(sample, channel) standardization with biased variance."""
    x = as_tensor(x)
    _check_4d(x, "instance_norm")
    if x.shape[2] * x.shape[3] < 2:
        raise DimensionError(f"instance_norm: degenerate {x.shape[2]}x{x.shape[3]} slice")
    mu = x.data.mean(axis=(2, 3), keepdims=True)
    centered = x.data - mu
    var = (centered * centered).mean(axis=(2, 3), keepdims=True)
    inv = (1.0 / np.sqrt(var + eps)).astype(x.dtype)
    xhat = centered * inv

    def backward(g):
        gm = g.mean(axis=(2, 3), keepdims=True)
        gxm = (g * xhat).mean(axis=(2, 3), keepdims=True)
        return (inv * (g - gm - xhat * gxm),)

    return record("instance_norm", xhat, (x,), backward)


def avg_downsample2(x) -> Tensor:
    """Mean over non-overlapping 2x2 blocks."""
    x = as_tensor(x)
    _check_4d(x, "avg_downsample2")
    n, c, h, w = x.shape
    if h % 2 or w % 2:
        raise DimensionError(f"avg_downsample2: extents must be even, got {h}x{w}")
    blocks = x.data.reshape(n, c, h // 2, 2, w // 2, 2)
    out = blocks.mean(axis=(3, 5))

    def backward(g):
        q = (g * x.dtype.type(0.25))[:, :, :, None, :, None]
        return (np.broadcast_to(q, blocks.shape).reshape(x.shape),)

    return record("avg_downsample2", out, (x,), backward)


# ---------------------------------------------------------------------------
# losses

def l1_loss(a, b) -> Tensor:
    """mean |a - b|"""
    a, b = as_tensor(a), as_tensor(b)
    _check_same_shape(a, b, "l1_loss")
    diff = a.data - b.data
    n = diff.size

    def backward(g):
        s = np.sign(diff) * (g / n)
        return (s, -s)

    return record("l1_loss", np.abs(diff).mean(), (a, b), backward)


def mse_loss(a, b) -> Tensor:
    """mean (a - b)^2"""
    a, b = as_tensor(a), as_tensor(b)
    _check_same_shape(a, b, "mse_loss")
    diff = a.data - b.data
    n = diff.size

    def backward(g):
        s = diff * (2 * g / n)
        return (s, -s)

    return record("mse_loss", (diff * diff).mean(), (a, b), backward)
