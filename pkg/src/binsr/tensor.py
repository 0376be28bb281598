"""Dense NCHW tensor primitives.

Tensors are plain ``numpy.ndarray`` objects of rank 4 laid out as
(batch, channels, height, width).  Every function here is pure: it never
mutates its arguments and returns freshly allocated arrays.  The dtype of the
input is preserved, so the same kernels serve float32 models and float64
gradient checks.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

DTYPE = np.float32


class ShapeError(ValueError):
    """Raised when operand shapes are inconsistent."""


@dataclass(frozen=True)
class ConvSpec:
    in_channels: int
    out_channels: int
    kernel_size: int
    stride: int = 1
    padding: int = 0

    def __post_init__(self):
        if self.kernel_size < 1 or self.stride < 1:
            raise ValueError(f"invalid conv spec {self}")
        if min(self.in_channels, self.out_channels, self.padding) < 0:
            raise ValueError(f"invalid conv spec {self}")

    def output_size(self, h: int, w: int) -> tuple[int, int]:
        k, s, p = self.kernel_size, self.stride, self.padding
        ho = (h + 2 * p - k) // s + 1
        wo = (w + 2 * p - k) // s + 1
        if ho < 1 or wo < 1 or h + 2 * p < k or w + 2 * p < k:
            raise ShapeError(f"input {h}x{w} too small for {self}")
        return ho, wo

    @property
    def weight_shape(self) -> tuple[int, int, int, int]:
        k = self.kernel_size
        return (self.out_channels, self.in_channels, k, k)


def tensor(data, shape=None) -> np.ndarray:
    """Build a float32 NCHW tensor from nested data or a flat sequence."""
    arr = np.asarray(data, dtype=DTYPE)
    if shape is not None:
        arr = arr.reshape(shape)
    if arr.ndim != 4:
        raise ShapeError(f"expected a 4-D tensor, got shape {arr.shape}")
    return arr


def _check4(x, name="input"):
    if x.ndim != 4:
        raise ShapeError(f"{name} must be 4-D (N,C,H,W), got shape {x.shape}")


def _check_conv(x, weights, spec):
    _check4(x)
    if x.shape[1] != spec.in_channels:
        raise ShapeError(
            f"input has {x.shape[1]} channels, conv expects {spec.in_channels}")
    if weights.shape != spec.weight_shape:
        raise ShapeError(
            f"weights shape {weights.shape} does not match {spec.weight_shape}")


def _windows(x, k, s, p):
    """Return strided windows of the zero-padded input, (N,C,Ho,Wo,k,k)."""
    if p:
        x = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p)))
    win = sliding_window_view(x, (k, k), axis=(2, 3))
    return win[:, :, ::s, ::s]


def conv2d(x, weights, bias=None, spec: ConvSpec | None = None):
    """Zero-padded 2-D cross-correlation.

    ``weights`` is (F, C, k, k); ``bias`` an optional length-F vector.
    """
    if spec is None:
        spec = ConvSpec(weights.shape[1], weights.shape[0], weights.shape[2])
    _check_conv(x, weights, spec)
    spec.output_size(x.shape[2], x.shape[3])
    win = _windows(x, spec.kernel_size, spec.stride, spec.padding)
    out = np.tensordot(win, weights, axes=([1, 4, 5], [1, 2, 3]))
    out = out.transpose(0, 3, 1, 2)
    if bias is not None:
        if bias.shape != (spec.out_channels,):
            raise ShapeError(f"bias shape {bias.shape} != ({spec.out_channels},)")
        out = out + bias.reshape(1, -1, 1, 1)
    return np.ascontiguousarray(out, dtype=x.dtype)


def conv2d_weight_grad(x, grad_out, spec: ConvSpec):
    """Gradient of a conv2d output w.r.t. its weights, shape (F, C, k, k)."""
    win = _windows(x, spec.kernel_size, spec.stride, spec.padding)
    ho, wo = grad_out.shape[2:]
    win = win[:, :, :ho, :wo]
    gw = np.tensordot(grad_out, win, axes=([0, 2, 3], [0, 2, 3]))
    return gw.astype(x.dtype, copy=False)


def _scatter(cols, s, out_hw):
    """Overlap-add of per-location kernel patches.

    ``cols`` is (N, Co, H, W, k, k); patch (i, j) lands at rows
    ``i*s .. i*s+k`` and columns ``j*s .. j*s+k`` of an (N, Co, *out_hw) canvas.
    """
    n, co, h, w, k, _ = cols.shape
    out = np.zeros((n, co) + tuple(out_hw), dtype=cols.dtype)
    for di in range(k):
        for dj in range(k):
            out[:, :, di:di + s * (h - 1) + 1:s, dj:dj + s * (w - 1) + 1:s] += cols[..., di, dj]
    return out


def conv2d_input_grad(grad_out, weights, spec: ConvSpec, input_hw):
    """Gradient of a conv2d output w.r.t. its input (the adjoint of conv2d)."""
    s, p = spec.stride, spec.padding
    h, w = input_hw
    cols = np.tensordot(grad_out, weights, axes=([1], [0]))  # N,Ho,Wo,C,k,k
    cols = cols.transpose(0, 3, 1, 2, 4, 5)
    full = _scatter(cols, s, (h + 2 * p, w + 2 * p))
    return np.ascontiguousarray(full[:, :, p:p + h, p:p + w])


def transposed_output_size(h, w, k, s, p, output_padding=0):
    return ((h - 1) * s - 2 * p + k + output_padding,
            (w - 1) * s - 2 * p + k + output_padding)


def transposed_conv2d(x, weights, bias=None, spec: ConvSpec | None = None,
                      output_padding: int = 0):
    """Fractionally strided convolution.

    ``weights`` has shape (C_in, C_out, k, k) as in the usual deconvolution
    convention; ``spec.in_channels`` refers to the input of this op.
    """
    _check4(x)
    cin, cout, k, _ = weights.shape
    if spec is None:
        spec = ConvSpec(cin, cout, k)
    if x.shape[1] != cin or spec.in_channels != cin or spec.out_channels != cout:
        raise ShapeError(
            f"transposed conv mismatch: input {x.shape}, weights {weights.shape}, {spec}")
    s, p = spec.stride, spec.padding
    h, w = x.shape[2:]
    ho, wo = transposed_output_size(h, w, k, s, p, output_padding)
    if ho < 1 or wo < 1:
        raise ShapeError(f"transposed conv output would be {ho}x{wo}")
    cols = np.tensordot(x, weights, axes=([1], [0]))  # N,H,W,Co,k,k
    cols = cols.transpose(0, 3, 1, 2, 4, 5)
    full_h = (h - 1) * s + k
    full_w = (w - 1) * s + k
    full = _scatter(cols, s, (max(full_h, ho + p), max(full_w, wo + p)))
    out = full[:, :, p:p + ho, p:p + wo]
    if bias is not None:
        out = out + bias.reshape(1, -1, 1, 1)
    return np.ascontiguousarray(out, dtype=x.dtype)


def pixel_shuffle(x, r: int):
    """Rearrange (N, C*r*r, H, W) into (N, C, r*H, r*W)."""
    _check4(x)
    n, c, h, w = x.shape
    if c % (r * r):
        raise ShapeError(f"channel count {c} not divisible by r^2={r * r}")
    c_out = c // (r * r)
    y = x.reshape(n, c_out, r, r, h, w).transpose(0, 1, 4, 2, 5, 3)
    return np.ascontiguousarray(y.reshape(n, c_out, h * r, w * r))


def pixel_unshuffle(x, r: int):
    """Inverse of :func:`pixel_shuffle`."""
    _check4(x)
    n, c, h, w = x.shape
    if h % r or w % r:
        raise ShapeError(f"spatial size {h}x{w} not divisible by {r}")
    y = x.reshape(n, c, h // r, r, w // r, r).transpose(0, 1, 3, 5, 2, 4)
    return np.ascontiguousarray(y.reshape(n, c * r * r, h // r, w // r))


def relu(x):
    return np.maximum(x, 0).astype(x.dtype, copy=False)


def leaky_relu(x, slope=0.2):
    return np.where(x >= 0, x, x * x.dtype.type(slope))


def prelu(x, slope):
    slope = np.asarray(slope, dtype=x.dtype)
    if slope.ndim != 1 or slope.shape[0] not in (1, x.shape[1]):
        raise ShapeError(f"prelu slope shape {slope.shape} vs {x.shape[1]} channels")
    return np.where(x >= 0, x, x * slope.reshape(1, -1, 1, 1))


def activation(x, kind: str, slope=None):
    """Apply ``relu``, ``leaky_relu`` (scalar slope) or ``prelu`` (per channel)."""
    if kind == "relu":
        return relu(x)
    if kind == "leaky_relu":
        return leaky_relu(x, 0.2 if slope is None else slope)
    if kind == "prelu":
        return prelu(x, slope)
    raise ValueError(f"unknown activation {kind!r}")


@dataclass
class RunningStats:
    mean: np.ndarray
    var: np.ndarray


def batch_norm(x, gamma, beta, running: RunningStats, mode="train",
               epsilon=1e-5, momentum=0.9):
    """Per-channel batch normalization.

    Returns ``(y, new_running)``.  In train mode batch statistics normalize the
    input and the running statistics move by an exponential moving average
    (``new = momentum*old + (1-momentum)*batch``); infer mode is the affine
    map defined by the running statistics and leaves them unchanged.
    """
    _check4(x)
    c = x.shape[1]
    for name, v in (("gamma", gamma), ("beta", beta), ("mean", running.mean),
                    ("var", running.var)):
        if v.shape != (c,):
            raise ShapeError(f"batch_norm {name} shape {v.shape} != ({c},)")
    if mode == "train":
        m = x.shape[0] * x.shape[2] * x.shape[3]
        if m == 0:
            raise ShapeError("batch_norm on an empty batch")
        mean = x.mean(axis=(0, 2, 3))
        var = x.var(axis=(0, 2, 3))
        unbiased = var * (m / max(m - 1, 1))
        new = RunningStats(
            (momentum * running.mean + (1 - momentum) * mean).astype(x.dtype),
            (momentum * running.var + (1 - momentum) * unbiased).astype(x.dtype))
    elif mode == "infer":
        mean, var, new = running.mean, running.var, running
    else:
        raise ValueError(f"unknown batch_norm mode {mode!r}")
    inv = 1.0 / np.sqrt(var + epsilon)
    y = (x - mean.reshape(1, -1, 1, 1)) * (gamma * inv).reshape(1, -1, 1, 1)
    y = y + beta.reshape(1, -1, 1, 1)
    return y.astype(x.dtype, copy=False), new


def _same_shape(a, b):
    if np.ndim(b) and np.shape(a) != np.shape(b):
        raise ShapeError(f"shape mismatch {np.shape(a)} vs {np.shape(b)}")


def add(a, b):
    _same_shape(a, b)
    return np.add(a, b)


def sub(a, b):
    _same_shape(a, b)
    return np.subtract(a, b)


def scale(a, c: float):
    return np.multiply(a, np.asarray(c, dtype=a.dtype))
