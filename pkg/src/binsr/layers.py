"""Layers with explicit forward/backward passes.

Each layer caches what its backward pass needs on a stack, so a layer whose
weights are reused several times in one forward pass (the shared pyramid
branch) backpropagates correctly as long as backward runs in reverse order.
Gradients accumulate into ``Param.grad``.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import binary
from .tensor import (
    DTYPE, ConvSpec, RunningStats, ShapeError, batch_norm, conv2d,
    conv2d_input_grad, conv2d_weight_grad, pixel_shuffle, pixel_unshuffle,
    transposed_conv2d, transposed_output_size,
)


@dataclass(eq=False)
class Param:
    data: np.ndarray
    kind: str = "real"  # real | binary | alpha | buffer
    trainable: bool = True
    name: str = ""
    grad: np.ndarray | None = None

    def zero_grad(self):
        self.grad = None

    def accumulate(self, g):
        self.grad = g.copy() if self.grad is None else self.grad + g


@dataclass
class LayerOps:
    name: str
    kind: str
    mults: int = 0
    adds: int = 0
    bitops: int = 0
    in_residual: bool = False


class Layer:
    kind = "layer"

    def __init__(self):
        self._cache = []
        self.name = ""

    def params(self) -> list[Param]:
        return []

    def children(self) -> list["Layer"]:
        return []

    def forward(self, x, train=False):
        raise NotImplementedError

    def backward(self, grad):
        raise NotImplementedError

    def __call__(self, x, train=False):
        return self.forward(x, train)

    def clear_cache(self):
        self._cache.clear()
        for c in self.children():
            c.clear_cache()

    def trace(self, shape, in_residual=False, as_real=False):
        """Propagate an (N, C, H, W) shape; return ``(out_shape, [LayerOps])``."""
        return shape, []

    def walk(self):
        yield self
        for c in self.children():
            yield from c.walk()


def kaiming(rng, shape, fan_in):
    std = np.sqrt(2.0 / fan_in)
    return (rng.standard_normal(shape) * std).astype(DTYPE)


class Conv2d(Layer):
    kind = "real_conv"

    def __init__(self, cin, cout, k, stride=1, padding=None, bias=True, rng=None):
        super().__init__()
        self.spec = ConvSpec(cin, cout, k, stride, k // 2 if padding is None else padding)
        rng = rng or np.random.default_rng(0)
        self.weight = Param(kaiming(rng, self.spec.weight_shape, cin * k * k))
        self.bias = Param(np.zeros(cout, DTYPE)) if bias else None

    def params(self):
        return [self.weight] + ([self.bias] if self.bias is not None else [])

    def forward(self, x, train=False):
        if train:
            self._cache.append(x)
        b = None if self.bias is None else self.bias.data
        return conv2d(x, self.weight.data, b, self.spec)

    def backward(self, grad):
        x = self._cache.pop()
        self.weight.accumulate(conv2d_weight_grad(x, grad, self.spec))
        if self.bias is not None:
            self.bias.accumulate(grad.sum(axis=(0, 2, 3)))
        return conv2d_input_grad(grad, self.weight.data, self.spec, x.shape[2:])

    def trace(self, shape, in_residual=False, as_real=False):
        n, c, h, w = shape
        ho, wo = self.spec.output_size(h, w)
        s = self.spec
        macs = n * ho * wo * s.in_channels * s.kernel_size ** 2 * s.out_channels
        adds = macs + (n * ho * wo * s.out_channels if self.bias is not None else 0)
        return (n, s.out_channels, ho, wo), [
            LayerOps(self.name, "real_conv", macs, adds, 0, in_residual)]


class BinaryConv2d(Layer):
    """Convolution whose effective weight is ``alpha_f * sign(W_f)``.

    ``shadow`` holds the full-precision weights that the optimizer updates;
    :meth:`sync` refreshes the signs (and, in deterministic mode, ``alpha``).
    In learnable mode ``alpha`` is an ordinary trainable parameter.
    """
    kind = "binary_conv"

    def __init__(self, cin, cout, k, stride=1, padding=None, alpha_mode="learnable",
                 rng=None, clip=(-5.0, 5.0)):
        super().__init__()
        if alpha_mode not in ("learnable", "deterministic"):
            raise ValueError(f"unknown alpha mode {alpha_mode!r}")
        self.spec = ConvSpec(cin, cout, k, stride, k // 2 if padding is None else padding)
        rng = rng or np.random.default_rng(0)
        self.shadow = Param(kaiming(rng, self.spec.weight_shape, cin * k * k), kind="binary")
        self.alpha_mode = alpha_mode
        self.alpha = Param(binary.alpha_deterministic(self.shadow.data), kind="alpha",
                           trainable=alpha_mode == "learnable")
        self.clip = clip
        self.signs = None
        self.packed = None
        self.use_packed = False
        self._dweff = None
        self.sync()

    @property
    def synced(self):
        return self.signs is not None and self.packed is not None

    def set_alpha_mode(self, mode):
        if mode not in ("learnable", "deterministic"):
            raise ValueError(f"unknown alpha mode {mode!r}")
        self.alpha_mode = mode
        self.alpha.trainable = mode == "learnable"

    def sync(self):
        if self.alpha_mode == "deterministic":
            self.alpha.data = binary.alpha_deterministic(self.shadow.data)
        self.signs = binary.binarize(self.shadow.data)
        self.packed = binary.pack(self.signs)

    def load_packed(self, alpha, packed):
        """Install stored ``alpha`` and sign bits (shadow becomes ``alpha*B``)."""
        self.alpha.data = np.asarray(alpha, DTYPE)
        self.packed = packed
        self.signs = binary.unpack(packed)
        self.shadow.data = binary.effective_weights(self.alpha.data, self.signs)

    def effective_weights(self):
        return binary.effective_weights(self.alpha.data, self.signs)

    def params(self):
        return [self.shadow, self.alpha]

    def forward(self, x, train=False):
        if self.signs is None:
            raise RuntimeError(f"binary layer {self.name!r} used before sync")
        if train:
            self._cache.append(x)
        if self.use_packed and not train:
            from .infer import binconv_mulfree
            return binconv_mulfree(x, self)
        return conv2d(x, self.effective_weights(), None, self.spec)

    def backward(self, grad):
        x = self._cache.pop()
        d_eff = conv2d_weight_grad(x, grad, self.spec)
        self._dweff = d_eff if self._dweff is None else self._dweff + d_eff
        return conv2d_input_grad(grad, self.effective_weights(), self.spec, x.shape[2:])

    def finalize_grad(self):
        """Turn the accumulated gradient w.r.t. ``alpha*B`` into parameter grads."""
        d_eff = self._dweff
        self._dweff = None
        if d_eff is None:
            return
        a = self.alpha.data.reshape(-1, 1, 1, 1)
        dc_db = a * d_eff
        self.shadow.accumulate(binary.ste_weight_grad(dc_db, self.alpha.data, *self.clip))
        if self.alpha_mode == "learnable":
            self.alpha.accumulate((d_eff * self.signs).sum(axis=(1, 2, 3)))

    def trace(self, shape, in_residual=False, as_real=False):
        n, c, h, w = shape
        ho, wo = self.spec.output_size(h, w)
        s = self.spec
        macs = n * ho * wo * s.in_channels * s.kernel_size ** 2 * s.out_channels
        out = (n, s.out_channels, ho, wo)
        if as_real:
            return out, [LayerOps(self.name, "real_conv", macs, macs, 0, in_residual)]
        return out, [LayerOps(self.name, "binary_conv", n * ho * wo * s.out_channels,
                              macs, macs, in_residual)]


class ConvTranspose2d(Layer):
    kind = "transposed_conv"

    def __init__(self, cin, cout, k, stride=2, padding=1, bias=True, rng=None):
        super().__init__()
        self.spec = ConvSpec(cin, cout, k, stride, padding)
        rng = rng or np.random.default_rng(0)
        self.weight = Param(kaiming(rng, (cin, cout, k, k), cin * k * k / stride ** 2))
        self.bias = Param(np.zeros(cout, DTYPE)) if bias else None

    def params(self):
        return [self.weight] + ([self.bias] if self.bias is not None else [])

    def forward(self, x, train=False):
        if train:
            self._cache.append(x)
        b = None if self.bias is None else self.bias.data
        return transposed_conv2d(x, self.weight.data, b, self.spec)

    def backward(self, grad):
        x = self._cache.pop()
        # this op is the adjoint of a conv from grad-space to x-space
        adj = ConvSpec(self.spec.out_channels, self.spec.in_channels,
                       self.spec.kernel_size, self.spec.stride, self.spec.padding)
        self.weight.accumulate(conv2d_weight_grad(grad, x, adj))
        if self.bias is not None:
            self.bias.accumulate(grad.sum(axis=(0, 2, 3)))
        gx = conv2d(grad, self.weight.data, None, adj)
        return gx[:, :, :x.shape[2], :x.shape[3]]

    def trace(self, shape, in_residual=False, as_real=False):
        n, c, h, w = shape
        s = self.spec
        ho, wo = transposed_output_size(h, w, s.kernel_size, s.stride, s.padding)
        macs = n * h * w * s.in_channels * s.kernel_size ** 2 * s.out_channels
        adds = macs + (n * ho * wo * s.out_channels if self.bias is not None else 0)
        return (n, s.out_channels, ho, wo), [
            LayerOps(self.name, "transposed_conv", macs, adds, 0, in_residual)]


class BatchNorm2d(Layer):
    """Batch normalization; running mean/var are stored parameters (buffers)."""
    kind = "bn"

    def __init__(self, c, epsilon=1e-5, momentum=0.9):
        super().__init__()
        self.gamma = Param(np.ones(c, DTYPE))
        self.beta = Param(np.zeros(c, DTYPE))
        self.running_mean = Param(np.zeros(c, DTYPE), kind="buffer", trainable=False)
        self.running_var = Param(np.ones(c, DTYPE), kind="buffer", trainable=False)
        self.epsilon = epsilon
        self.momentum = momentum

    def params(self):
        return [self.gamma, self.beta, self.running_mean, self.running_var]

    def forward(self, x, train=False):
        stats = RunningStats(self.running_mean.data, self.running_var.data)
        y, new = batch_norm(x, self.gamma.data, self.beta.data, stats,
                            "train" if train else "infer", self.epsilon, self.momentum)
        if train:
            self.running_mean.data, self.running_var.data = new.mean, new.var
            mean = x.mean(axis=(0, 2, 3), keepdims=True)
            inv = 1.0 / np.sqrt(x.var(axis=(0, 2, 3), keepdims=True) + self.epsilon)
            self._cache.append(((x - mean) * inv, inv))
        return y

    def backward(self, grad):
        xhat, inv = self._cache.pop()
        m = grad.shape[0] * grad.shape[2] * grad.shape[3]
        self.gamma.accumulate((grad * xhat).sum(axis=(0, 2, 3)))
        self.beta.accumulate(grad.sum(axis=(0, 2, 3)))
        g = grad * self.gamma.data.reshape(1, -1, 1, 1)
        gx = (inv / m) * (m * g - g.sum(axis=(0, 2, 3), keepdims=True)
                          - xhat * (g * xhat).sum(axis=(0, 2, 3), keepdims=True))
        return gx.astype(grad.dtype, copy=False)

    def trace(self, shape, in_residual=False, as_real=False):
        n = int(np.prod(shape))
        return shape, [LayerOps(self.name, "bn", n, n, 0, in_residual)]


class ReLU(Layer):
    kind = "act"

    def forward(self, x, train=False):
        if train:
            self._cache.append(x >= 0)
        return np.maximum(x, 0)

    def backward(self, grad):
        return grad * self._cache.pop()


class LeakyReLU(Layer):
    kind = "act"

    def __init__(self, slope=0.2):
        super().__init__()
        self.slope = slope

    def forward(self, x, train=False):
        pos = x >= 0
        if train:
            self._cache.append(pos)
        return np.where(pos, x, x * x.dtype.type(self.slope))

    def backward(self, grad):
        pos = self._cache.pop()
        return np.where(pos, grad, grad * grad.dtype.type(self.slope))

    def trace(self, shape, in_residual=False, as_real=False):
        return shape, [LayerOps(self.name, "act", int(np.prod(shape)), 0, 0, in_residual)]


class PReLU(Layer):
    kind = "act"

    def __init__(self, c, init=0.25):
        super().__init__()
        self.slope = Param(np.full(c, init, DTYPE))

    def params(self):
        return [self.slope]

    def forward(self, x, train=False):
        a = self.slope.data.reshape(1, -1, 1, 1).astype(x.dtype)
        if train:
            self._cache.append(x)
        return np.where(x >= 0, x, x * a)

    def backward(self, grad):
        x = self._cache.pop()
        neg = x < 0
        self.slope.accumulate(np.where(neg, grad * x, 0).sum(axis=(0, 2, 3)).astype(grad.dtype))
        a = self.slope.data.reshape(1, -1, 1, 1).astype(grad.dtype)
        return np.where(neg, grad * a, grad)

    def trace(self, shape, in_residual=False, as_real=False):
        return shape, [LayerOps(self.name, "act", int(np.prod(shape)), 0, 0, in_residual)]


class PixelShuffle(Layer):
    kind = "pixel_shuffle"

    def __init__(self, r):
        super().__init__()
        self.r = r

    def forward(self, x, train=False):
        return pixel_shuffle(x, self.r)

    def backward(self, grad):
        return pixel_unshuffle(grad, self.r)

    def trace(self, shape, in_residual=False, as_real=False):
        n, c, h, w = shape
        r = self.r
        if c % (r * r):
            raise ShapeError(f"channel count {c} not divisible by {r * r}")
        return (n, c // (r * r), h * r, w * r), []


class Sequential(Layer):
    kind = "seq"

    def __init__(self, *layers):
        super().__init__()
        self.layers = list(layers)

    def children(self):
        return self.layers

    def params(self):
        return [p for l in self.layers for p in l.params()]

    def forward(self, x, train=False):
        for layer in self.layers:
            x = layer.forward(x, train)
        return x

    def backward(self, grad):
        for layer in reversed(self.layers):
            grad = layer.backward(grad)
        return grad

    def trace(self, shape, in_residual=False, as_real=False):
        ops = []
        for layer in self.layers:
            shape, o = layer.trace(shape, in_residual, as_real)
            ops.extend(o)
        return shape, ops


class Residual(Layer):
    """``x + body(x)``."""
    kind = "add_skip"

    def __init__(self, body, is_block=False):
        super().__init__()
        self.body = body
        self.is_block = is_block  # one of the binarizable residual blocks

    def children(self):
        return [self.body]

    def params(self):
        return self.body.params()

    def forward(self, x, train=False):
        return x + self.body.forward(x, train)

    def backward(self, grad):
        return grad + self.body.backward(grad)

    def trace(self, shape, in_residual=False, as_real=False):
        out, ops = self.body.trace(shape, in_residual or self.is_block, as_real)
        if out != shape:
            raise ShapeError(f"residual body changes shape {shape} -> {out}")
        ops.append(LayerOps(self.name, "add_skip", 0, int(np.prod(shape)), 0,
                            in_residual or self.is_block))
        return shape, ops


@dataclass
class ParamTable:
    """Flat name -> Param view over a layer tree."""
    entries: dict = field(default_factory=dict)

    @classmethod
    def of(cls, root: Layer):
        table = cls()
        seen = set()

        def visit(layer, prefix):
            layer.name = prefix
            for attr, value in vars(layer).items():
                if isinstance(value, Param) and id(value) not in seen:
                    seen.add(id(value))
                    value.name = f"{prefix}.{attr}" if prefix else attr
                    table.entries[value.name] = value
            for i, child in enumerate(layer.children()):
                cname = getattr(child, "_label", None) or str(i)
                visit(child, f"{prefix}.{cname}" if prefix else cname)

        visit(root, "")
        return table


class UpsampleSkip(Layer):
    """``body(x) + bicubic_upsample(x)``; the upsampler has no parameters."""
    kind = "add_skip"

    def __init__(self, body, scale):
        super().__init__()
        self.body = body
        self.scale = scale
        self._mats = {}

    def children(self):
        return [self.body]

    def _matrices(self, h, w):
        from .data import resize_matrix
        key = (h, w)
        if key not in self._mats:
            self._mats[key] = (resize_matrix(h, h * self.scale).astype(DTYPE),
                               resize_matrix(w, w * self.scale).astype(DTYPE))
        return self._mats[key]

    def upsample(self, x):
        mh, mw = self._matrices(*x.shape[2:])
        return np.einsum("ih,nchw,jw->ncij", mh, x, mw, optimize=True).astype(x.dtype)

    def forward(self, x, train=False):
        if train:
            self._cache.append(x.shape[2:])
        return self.body.forward(x, train) + self.upsample(x)

    def backward(self, grad):
        mh, mw = self._matrices(*self._cache.pop())
        g_skip = np.einsum("ih,ncij,jw->nchw", mh, grad, mw, optimize=True).astype(grad.dtype)
        return self.body.backward(grad) + g_skip

    def trace(self, shape, in_residual=False, as_real=False):
        out, ops = self.body.trace(shape, in_residual, as_real)
        n, c, h, w = shape
        # separable interpolation: 4 taps per axis
        mults = n * c * (h * out[3] * 4 + out[2] * out[3] * 4)
        ops.append(LayerOps(self.name, "upsample_skip", mults, mults, 0, in_residual))
        ops.append(LayerOps(self.name, "add_skip", 0, int(np.prod(out)), 0, in_residual))
        return out, ops
