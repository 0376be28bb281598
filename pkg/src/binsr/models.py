"""Residual super-resolution networks with binarized residual blocks.

Two families are provided:

``resnet_sr``
    head conv -> D residual blocks [conv, BN, act, conv, BN] -> conv + BN with
    a global skip -> log2(scale) sub-pixel upsampling stages -> tail conv.

``pyramid_sr``
    a Laplacian-pyramid network.  One feature-extraction branch of D residual
    units [PReLU, conv] is shared by every 2x level; each level upsamples the
    features with a sub-pixel conv, predicts a residual image, and adds it to
    the transposed-conv upsampled image from the previous level.

Only convolutions inside residual blocks/units are ever binarized.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, replace

import numpy as np

from .layers import (
    BatchNorm2d, BinaryConv2d, Conv2d, ConvTranspose2d, Layer, LayerOps,
    LeakyReLU, ParamTable, PixelShuffle, PReLU, ReLU, Residual, Sequential,
    UpsampleSkip,
)
from .tensor import DTYPE, ShapeError

FAMILIES = ("resnet_sr", "pyramid_sr")


@dataclass(frozen=True)
class SrModelConfig:
    family: str = "resnet_sr"
    scale: int = 4
    num_residual_blocks: int = 16
    feature_channels: int = 64
    binarize_residual: bool = True
    use_batch_norm: bool | None = None  # None -> family default
    alpha_mode: str = "learnable"
    activation: str = "relu"  # resnet_sr only: relu | prelu
    head_kernel: int = 3
    tail_kernel: int = 1
    image_skip: bool = False  # add a parameter-free bicubic upsample of the input
    seed: int = 0

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown family {self.family!r}")
        if self.scale not in (2, 4):
            raise ValueError(f"scale must be 2 or 4, got {self.scale}")
        if self.num_residual_blocks < 1:
            raise ValueError("num_residual_blocks must be >= 1")
        if self.feature_channels < 1:
            raise ValueError("feature_channels must be >= 1")
        if self.alpha_mode not in ("learnable", "deterministic"):
            raise ValueError(f"unknown alpha_mode {self.alpha_mode!r}")
        if self.activation not in ("relu", "prelu"):
            raise ValueError(f"unknown activation {self.activation!r}")
        if self.use_batch_norm is None:
            object.__setattr__(self, "use_batch_norm", self.family == "resnet_sr")

    @property
    def levels(self) -> int:
        return int(math.log2(self.scale))

    def to_dict(self):
        return asdict(self)

    def with_(self, **kw) -> "SrModelConfig":
        return replace(self, **kw)


def _labelled(layer, label):
    layer._label = label
    return layer


class _Builder:
    def __init__(self, cfg: SrModelConfig):
        self.cfg = cfg
        self.rng = np.random.default_rng(cfg.seed)

    def conv(self, cin, cout, k, bias=True):
        return Conv2d(cin, cout, k, bias=bias, rng=self.rng)

    def res_conv(self, c):
        if self.cfg.binarize_residual:
            return BinaryConv2d(c, c, 3, alpha_mode=self.cfg.alpha_mode, rng=self.rng)
        return Conv2d(c, c, 3, bias=False, rng=self.rng)

    def act(self, c):
        return PReLU(c) if self.cfg.activation == "prelu" else ReLU()


def _resnet_root(cfg: SrModelConfig) -> Layer:
    b = _Builder(cfg)
    c = cfg.feature_channels
    head = Sequential(b.conv(3, c, cfg.head_kernel), b.act(c))
    blocks = []
    for i in range(cfg.num_residual_blocks):
        body = [b.res_conv(c)]
        if cfg.use_batch_norm:
            body.append(BatchNorm2d(c))
        body += [b.act(c), b.res_conv(c)]
        if cfg.use_batch_norm:
            body.append(BatchNorm2d(c))
        blocks.append(_labelled(Residual(Sequential(*body), is_block=True), f"block{i}"))
    post = [b.conv(c, c, 3, bias=False)]
    if cfg.use_batch_norm:
        post.append(BatchNorm2d(c))
    trunk = Residual(Sequential(*blocks, *post))
    ups = [_labelled(Sequential(b.conv(c, 4 * c, 3), PixelShuffle(2), b.act(c)), f"up{i}")
           for i in range(cfg.levels)]
    tail = b.conv(c, 3, cfg.tail_kernel)
    net = Sequential(_labelled(head, "head"), _labelled(trunk, "trunk"),
                     *ups, _labelled(tail, "tail"))
    if cfg.image_skip:
        tail.weight.data *= 0.1
        return _labelled(UpsampleSkip(net, cfg.scale), "net")
    return net


def bilinear_kernel(k):
    f = (k + 1) // 2
    center = f - 1 if k % 2 == 1 else f - 0.5
    og = np.arange(k)
    filt = 1 - np.abs(og - center) / f
    return np.outer(filt, filt).astype(DTYPE)


class PyramidNet(Layer):
    kind = "pyramid"

    def __init__(self, cfg: SrModelConfig):
        super().__init__()
        b = _Builder(cfg)
        c = cfg.feature_channels
        self.levels = cfg.levels
        self.init = _labelled(b.conv(3, c, 3), "init")
        units = []
        for i in range(cfg.num_residual_blocks):
            body = [PReLU(c), b.res_conv(c)]
            if cfg.use_batch_norm:
                body.append(BatchNorm2d(c))
            units.append(_labelled(Residual(Sequential(*body), is_block=True), f"unit{i}"))
        self.branch = _labelled(Sequential(*units), "branch")
        self.feat_up = _labelled(
            Sequential(b.conv(c, 4 * c, 3), PixelShuffle(2), LeakyReLU(0.2)), "feat_up")
        self.to_residual = _labelled(b.conv(c, 3, 3, bias=False), "to_residual")
        self.img_up = _labelled(ConvTranspose2d(3, 3, 4, 2, 1, bias=False), "img_up")
        w = np.zeros((3, 3, 4, 4), DTYPE)
        for ch in range(3):
            w[ch, ch] = bilinear_kernel(4)
        self.img_up.weight.data = w

    def children(self):
        return [self.init, self.branch, self.feat_up, self.to_residual, self.img_up]

    def forward_levels(self, x, train=False):
        """Images predicted at every level, coarsest (2x) first."""
        feat = self.init.forward(x, train)
        img, out = x, []
        for _ in range(self.levels):
            feat = self.feat_up.forward(self.branch.forward(feat, train), train)
            img = self.img_up.forward(img, train) + self.to_residual.forward(feat, train)
            out.append(img)
        return out

    def forward(self, x, train=False):
        return self.forward_levels(x, train)[-1]

    def backward(self, grad):
        g_img, g_feat = grad, None
        for _ in range(self.levels):
            gf = self.to_residual.backward(g_img)
            g_feat = gf if g_feat is None else g_feat + gf
            g_img = self.img_up.backward(g_img)
            g_feat = self.branch.backward(self.feat_up.backward(g_feat))
        return g_img + self.init.backward(g_feat)

    def trace(self, shape, in_residual=False, as_real=False):
        ops = []
        img_shape = shape
        feat, o = self.init.trace(shape, in_residual, as_real)
        ops += o
        for _ in range(self.levels):
            feat, o = self.branch.trace(feat, in_residual, as_real)
            ops += o
            feat, o = self.feat_up.trace(feat, in_residual, as_real)
            ops += o
            res, o = self.to_residual.trace(feat, in_residual, as_real)
            ops += o
            img_shape, o = self.img_up.trace(img_shape, in_residual, as_real)
            ops += o
            if res != img_shape:
                raise ShapeError(f"pyramid level mismatch {res} vs {img_shape}")
            ops.append(LayerOps("pyramid.add", "add_skip", 0, int(np.prod(res)), 0, in_residual))
        return img_shape, ops


class SrModel:
    """A built network plus the bookkeeping around it."""

    def __init__(self, cfg: SrModelConfig, root: Layer):
        self.cfg = cfg
        self.root = root
        self.table = ParamTable.of(root)
        self.packed = False

    # graph queries
    def layers(self):
        return list(self.root.walk())

    def binary_layers(self) -> list[BinaryConv2d]:
        return [l for l in self.root.walk() if isinstance(l, BinaryConv2d)]

    def params(self) -> dict:
        return self.table.entries

    def trainable(self) -> dict:
        return {k: p for k, p in self.table.entries.items() if p.trainable}

    def residual_convs(self):
        """Convolutions that live inside a binarizable residual block."""
        out = []

        def visit(layer, inside):
            if isinstance(layer, Residual) and layer.is_block:
                inside = True
            if isinstance(layer, (Conv2d, BinaryConv2d)) and inside:
                out.append(layer)
            for c in layer.children():
                visit(c, inside)

        visit(self.root, False)
        return out

    # execution
    def sync(self):
        for layer in self.binary_layers():
            layer.sync()

    def pack(self, on=True):
        """Route binary layers through the multiplication-free kernel.

        Uses the signs and scales from the most recent :meth:`sync`.
        """
        for layer in self.binary_layers():
            layer.use_packed = on
        self.packed = on
        return self

    def forward(self, x, train=False):
        return self.root.forward(x, train)

    def backward(self, grad):
        g = self.root.backward(grad)
        for layer in self.binary_layers():
            layer.finalize_grad()
        return g

    def zero_grad(self):
        for p in self.table.entries.values():
            p.zero_grad()
        self.root.clear_cache()

    def set_clip(self, lo, hi):
        for layer in self.binary_layers():
            layer.clip = (lo, hi)

    def set_alpha_mode(self, mode):
        for layer in self.binary_layers():
            layer.set_alpha_mode(mode)

    def state(self) -> dict:
        return {k: p.data.copy() for k, p in self.table.entries.items()}

    def __repr__(self):
        b, r = count_parameters(self)
        return f"SrModel({self.cfg.family}, x{self.cfg.scale}, D={self.cfg.num_residual_blocks}, binary={b}, real={r})"


def build_resnet_sr(cfg: SrModelConfig) -> SrModel:
    if cfg.family != "resnet_sr":
        cfg = cfg.with_(family="resnet_sr")
    return SrModel(cfg, _resnet_root(cfg))


def build_pyramid_sr(cfg: SrModelConfig) -> SrModel:
    if cfg.family != "pyramid_sr":
        cfg = cfg.with_(family="pyramid_sr")
    return SrModel(cfg, PyramidNet(cfg))


def build_model(cfg: SrModelConfig) -> SrModel:
    return build_resnet_sr(cfg) if cfg.family == "resnet_sr" else build_pyramid_sr(cfg)


def forward_sr(model: SrModel, lr_image, packed: bool | None = None):
    """Super-resolve a (N, 3, h, w) batch in [0, 1].

    ``packed`` overrides the model's current routing for this call.
    """
    x = np.asarray(lr_image)
    if x.ndim == 3:
        x = x[None]
    if x.ndim != 4 or x.shape[1] != 3:
        raise ShapeError(f"forward_sr expects 3-channel NCHW input, got {x.shape}")
    x = x.astype(DTYPE, copy=False)
    if packed is None or packed == model.packed:
        return model.forward(x)
    prev = model.packed
    model.pack(packed)
    try:
        return model.forward(x)
    finally:
        model.pack(prev)


def count_parameters(model: SrModel) -> tuple[int, int]:
    """``(binary_count, real_count)``.

    Binary parameters are the sign bits of binarized filters.  Everything else
    stored as a real number counts as real: conv weights and biases, the
    per-filter scaling factors, batch-norm scale/shift and running statistics,
    and PReLU slopes.
    """
    binary = real = 0
    for p in model.table.entries.values():
        if p.kind == "binary":
            binary += p.data.size
        else:
            real += p.data.size
    return binary, real


def alpha_count(model: SrModel) -> int:
    return sum(p.data.size for p in model.table.entries.values() if p.kind == "alpha")
