"""Multiplication-free binary convolution, op/size accounting and model files."""
from __future__ import annotations

import io
import math
import struct
from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from . import binary
from .layers import (
    BatchNorm2d, BinaryConv2d, Conv2d, ConvTranspose2d, PReLU,
)
from .models import SrModel, SrModelConfig, alpha_count, build_model, count_parameters
from .tensor import DTYPE, ConvSpec, ShapeError


class Arith:
    """Elementwise arithmetic used by the binary kernel.

    The base class just forwards to numpy; :class:`CountingArith` also tallies
    how many scalar additions and multiplications were issued.
    """

    def add(self, a, b):
        return np.add(a, b)

    def sub(self, a, b):
        return np.subtract(a, b)

    def mul(self, a, b):
        return np.multiply(a, b)

    def sum(self, a, axis):
        return np.add.reduce(a, axis=axis)


class CountingArith(Arith):
    def __init__(self):
        self.adds = 0
        self.mults = 0

    def add(self, a, b):
        out = np.add(a, b)
        self.adds += out.size
        return out

    def sub(self, a, b):
        out = np.subtract(a, b)
        self.adds += out.size
        return out

    def mul(self, a, b):
        out = np.multiply(a, b)
        self.mults += out.size
        return out

    def sum(self, a, axis):
        out = np.add.reduce(a, axis=axis)
        self.adds += a.size - out.size
        return out


_PLAIN = Arith()


def binconv_mulfree(x, layer: BinaryConv2d, arith: Arith = _PLAIN):
    """Binary-weight convolution using additions only, plus one scale per output.

    For every output channel ``f`` the window values under +1 bits are summed
    (``S+``); with the shared window total ``S`` the signed sum is
    ``S+ - S- = S+ + S+ - S``.  The only multiplication is the final
    ``alpha_f`` scale.
    """
    if layer.packed is None:
        raise RuntimeError("binary layer is not synced; call sync() first")
    spec = layer.spec
    if x.ndim != 4 or x.shape[1] != spec.in_channels:
        raise ShapeError(f"input {x.shape} does not match {spec}")
    k, s, p = spec.kernel_size, spec.stride, spec.padding
    ho, wo = spec.output_size(x.shape[2], x.shape[3])
    xp = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p))) if p else x
    win = sliding_window_view(xp, (k, k), axis=(2, 3))[:, :, ::s, ::s][:, :, :ho, :wo]
    n = x.shape[0]
    cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(n, ho, wo, -1)
    bits = np.unpackbits(layer.packed.rows, axis=1, count=cols.shape[-1],
                         bitorder="big").astype(bool)
    total = arith.sum(cols, axis=-1)
    acc = np.empty((n, spec.out_channels, ho, wo), dtype=x.dtype)
    for f in range(spec.out_channels):
        s_pos = arith.sum(cols[..., bits[f]], axis=-1)
        acc[:, f] = arith.sub(arith.add(s_pos, s_pos), total)
    alpha = layer.alpha.data.astype(x.dtype).reshape(1, -1, 1, 1)
    return arith.mul(acc, alpha)


# ---------------------------------------------------------------- op counting

CONV_KINDS = ("real_conv", "binary_conv", "transposed_conv")


@dataclass
class OpReport:
    layers: list = field(default_factory=list)

    @property
    def mults(self):
        return sum(l.mults for l in self.layers)

    @property
    def adds(self):
        return sum(l.adds for l in self.layers)

    @property
    def bitops(self):
        return sum(l.bitops for l in self.layers)

    def conv_mults(self, in_residual=None):
        return sum(l.mults for l in self.layers if l.kind in CONV_KINDS
                   and (in_residual is None or l.in_residual == in_residual))

    def residual_conv_share(self):
        """Fraction of convolution multiplications inside residual blocks."""
        total = self.conv_mults()
        return self.conv_mults(True) / total if total else 0.0

    def records(self):
        return [dict(vars(l)) for l in self.layers]


def count_ops(model: SrModel, input_hw, as_real=False) -> OpReport:
    """Count ops for one image of size ``input_hw``.

    Real conv: ``M*N*C*K^2*F`` multiplications and as many additions (plus
    bias additions).  Binary conv: ``M*N*F`` multiplications (the alpha
    scale), ``M*N*C*K^2*F`` additions and weight-bit reads.  ``as_real``
    counts every binary layer as its real-weight twin.
    """
    h, w = input_hw
    _, ops = model.root.trace((1, 3, h, w), False, as_real)
    return OpReport(ops)


def count_layer_ops(layer, input_shape, as_real=False) -> OpReport:
    _, ops = layer.trace(tuple(input_shape), False, as_real)
    return OpReport(ops)


@dataclass(frozen=True)
class CostModel:
    flops_per_cycle: float = 4
    bitops_per_cycle: float = 512
    add_vs_mult_speed_ratio: float = 3

    def __post_init__(self):
        if min(self.flops_per_cycle, self.bitops_per_cycle, self.add_vs_mult_speed_ratio) <= 0:
            raise ValueError("cost model parameters must be positive")

    def cycles(self, report: OpReport) -> float:
        return (report.mults / self.flops_per_cycle
                + report.adds / (self.flops_per_cycle * self.add_vs_mult_speed_ratio)
                + report.bitops / self.bitops_per_cycle)


def estimate_speedup(report_real: OpReport, report_bin: OpReport, cm: CostModel = CostModel()) -> float:
    return cm.cycles(report_real) / cm.cycles(report_bin)


# ------------------------------------------------------------ size accounting

@dataclass(frozen=True)
class SizeReport:
    binary_param_bits: int
    real_param_count: int
    binary_model_bytes: int
    real_model_bytes: int

    @property
    def binary_model_mb(self):
        return self.binary_model_bytes / 1e6

    @property
    def real_model_mb(self):
        return self.real_model_bytes / 1e6

    @property
    def compression(self):
        return 1 - self.binary_model_bytes / self.real_model_bytes


def model_size(model: SrModel) -> SizeReport:
    """Storage at 32 bits per real value and 1 bit per binary weight.

    ``real_model_bytes`` is the size of the real-weight twin, which has no
    scaling factors.
    """
    bits, real = count_parameters(model)
    twin = bits + real - alpha_count(model)
    return SizeReport(bits, real, math.ceil(bits / 8) + 4 * real, 4 * twin)


# ---------------------------------------------------------------- model files

MAGIC = b"BSRN"
VERSION = 1

TAG_CONV, TAG_BINARY, TAG_TRANSPOSED, TAG_BN, TAG_PRELU = 1, 2, 3, 4, 5
_FAMILY = {"resnet_sr": 0, "pyramid_sr": 1}
_ALPHA = {"learnable": 0, "deterministic": 1}
_ACT = {"relu": 0, "prelu": 1}

_HEADER = struct.Struct("<4sH")
_CONFIG = struct.Struct("<BBHHBBBBBQ")
_COUNT = struct.Struct("<I")
_CONVREC = struct.Struct("<BHHBBBB")
_CHANREC = struct.Struct("<BH")


class ModelFormatError(Exception):
    code = 1

    def __init__(self, msg):
        super().__init__(msg)


class BadMagicError(ModelFormatError):
    code = 2


class VersionError(ModelFormatError):
    code = 3


class TruncatedError(ModelFormatError):
    code = 4


class CorruptModelError(ModelFormatError):
    code = 5


def _records(model: SrModel):
    seen = set()
    for layer in model.root.walk():
        if id(layer) in seen:
            continue
        if isinstance(layer, (Conv2d, BinaryConv2d, ConvTranspose2d, BatchNorm2d, PReLU)):
            seen.add(id(layer))
            yield layer


def header_overhead(model: SrModel) -> int:
    size = _HEADER.size + _CONFIG.size + _COUNT.size
    for layer in _records(model):
        if isinstance(layer, (BatchNorm2d, PReLU)):
            size += _CHANREC.size
        else:
            size += _CONVREC.size
    return size


def _f32(a) -> bytes:
    return np.asarray(a, dtype="<f4").tobytes()


def dumps(model: SrModel) -> bytes:
    cfg = model.cfg
    for layer in model.binary_layers():
        if not layer.synced:
            raise RuntimeError("model must be synced before saving")
    out = io.BytesIO()
    out.write(_HEADER.pack(MAGIC, VERSION))
    flags = (int(cfg.binarize_residual) | (int(cfg.use_batch_norm) << 1)
             | (int(cfg.image_skip) << 2))
    out.write(_CONFIG.pack(_FAMILY[cfg.family], cfg.scale, cfg.num_residual_blocks,
                           cfg.feature_channels, flags, _ALPHA[cfg.alpha_mode],
                           _ACT[cfg.activation], cfg.head_kernel, cfg.tail_kernel,
                           cfg.seed & (2 ** 64 - 1)))
    recs = list(_records(model))
    out.write(_COUNT.pack(len(recs)))
    for layer in recs:
        if isinstance(layer, BatchNorm2d):
            out.write(_CHANREC.pack(TAG_BN, layer.gamma.data.size))
            for p in layer.params():
                out.write(_f32(p.data))
        elif isinstance(layer, PReLU):
            out.write(_CHANREC.pack(TAG_PRELU, layer.slope.data.size))
            out.write(_f32(layer.slope.data))
        else:
            s = layer.spec
            tag = {Conv2d: TAG_CONV, BinaryConv2d: TAG_BINARY, ConvTranspose2d: TAG_TRANSPOSED}[type(layer)]
            has_bias = getattr(layer, "bias", None) is not None
            out.write(_CONVREC.pack(tag, s.in_channels, s.out_channels, s.kernel_size,
                                    s.stride, s.padding, int(has_bias)))
            if tag == TAG_BINARY:
                out.write(_f32(layer.alpha.data))
                out.write(layer.packed.tobytes())
            else:
                out.write(_f32(layer.weight.data))
                if has_bias:
                    out.write(_f32(layer.bias.data))
    return out.getvalue()


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n):
        if self.pos + n > len(self.data):
            raise TruncatedError(f"truncated model file: need {n} bytes at offset {self.pos}")
        chunk = self.data[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, st: struct.Struct):
        return st.unpack(self.take(st.size))

    def floats(self, n):
        return np.frombuffer(self.take(4 * n), dtype="<f4").astype(DTYPE)


def loads(data: bytes) -> SrModel:
    r = _Reader(data)
    if len(data) < 4 or data[:4] != MAGIC:
        raise BadMagicError("bad magic: not a binary SR model file")
    _, version = r.unpack(_HEADER)
    if version != VERSION:
        raise VersionError(f"unsupported model file version {version} (expected {VERSION})")
    fam, scale, d, c, flags, am, act, hk, tk, seed = r.unpack(_CONFIG)
    try:
        cfg = SrModelConfig(
            family={v: k for k, v in _FAMILY.items()}[fam], scale=scale,
            num_residual_blocks=d, feature_channels=c, binarize_residual=bool(flags & 1),
            use_batch_norm=bool(flags & 2), alpha_mode={v: k for k, v in _ALPHA.items()}[am],
            activation={v: k for k, v in _ACT.items()}[act], head_kernel=hk, tail_kernel=tk,
            image_skip=bool(flags & 4), seed=seed)
        if flags & ~7:
            raise ValueError(f"unknown flag bits {flags:#x}")
    except (KeyError, ValueError) as e:
        raise CorruptModelError(f"invalid model config in header: {e}") from None
    model = build_model(cfg)
    recs = list(_records(model))
    (count,) = r.unpack(_COUNT)
    if count != len(recs):
        raise CorruptModelError(f"layer count {count} does not match config ({len(recs)})")
    for layer in recs:
        if isinstance(layer, (BatchNorm2d, PReLU)):
            tag, ch = r.unpack(_CHANREC)
            want = TAG_BN if isinstance(layer, BatchNorm2d) else TAG_PRELU
            size = layer.params()[0].data.size
            if tag != want or ch != size:
                raise CorruptModelError(f"unexpected record tag={tag} channels={ch} for {layer.name}")
            for p in layer.params():
                p.data = r.floats(ch)
            continue
        tag, cin, cout, k, s, p, has_bias = r.unpack(_CONVREC)
        want = {Conv2d: TAG_CONV, BinaryConv2d: TAG_BINARY, ConvTranspose2d: TAG_TRANSPOSED}[type(layer)]
        spec = layer.spec
        if tag != want or ConvSpec(cin, cout, k, s, p) != spec or \
                bool(has_bias) != (getattr(layer, "bias", None) is not None):
            raise CorruptModelError(f"record for {layer.name} does not match the architecture")
        if tag == TAG_BINARY:
            alpha = r.floats(cout)
            shape = spec.weight_shape
            row = (cin * k * k + 7) // 8
            layer.load_packed(alpha, binary.PackedBits.frombytes(shape, r.take(cout * row)))
        else:
            layer.weight.data = r.floats(layer.weight.data.size).reshape(layer.weight.data.shape)
            if has_bias:
                layer.bias.data = r.floats(cout)
    if r.pos != len(data):
        raise CorruptModelError(f"{len(data) - r.pos} trailing bytes after last record")
    return model


def save_model(model: SrModel, path):
    data = dumps(model)
    with open(path, "wb") as fh:
        fh.write(data)
    return len(data)


def load_model(path) -> SrModel:
    with open(path, "rb") as fh:
        return loads(fh.read())
