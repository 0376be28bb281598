"""Weight binarization, per-filter scaling factors and 1-bit packing."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


def binarize(w):
    """Sign with ``sign(0) = +1``.  Works on scalars and arrays."""
    w = np.asarray(w)
    out = np.where(w >= 0, 1.0, -1.0).astype(w.dtype if w.dtype.kind == "f" else np.float32)
    return out if out.ndim else out.item()


def alpha_deterministic(weights):
    """Mean absolute weight per output channel.

    This is the closed-form minimiser of ``||W_f - a * sign(W_f)||^2`` over the
    scalar ``a``, computed independently for every filter ``f``.
    """
    w = np.asarray(weights)
    if w.ndim < 2 or w[0].size == 0:
        raise ValueError(f"need (F, ...) weights with at least one element per filter, got {w.shape}")
    return np.abs(w.reshape(w.shape[0], -1)).mean(axis=1).astype(w.dtype)


def approximation_error(weights, alpha, signs):
    """``sum_f ||W_f - alpha_f B_f||^2`` per output channel."""
    w = weights.reshape(weights.shape[0], -1).astype(np.float64)
    b = signs.reshape(signs.shape[0], -1).astype(np.float64)
    a = np.asarray(alpha, dtype=np.float64).reshape(-1, 1)
    return ((w - a * b) ** 2).sum(axis=1)


def effective_weights(alpha, signs):
    """``alpha_f * B_f`` broadcast over each filter."""
    alpha = np.asarray(alpha, dtype=signs.dtype)
    return signs * alpha.reshape((-1,) + (1,) * (signs.ndim - 1))


@dataclass(frozen=True)
class PackedBits:
    """Sign bits, one zero-padded row of bytes per output channel.

    Bit value 1 encodes weight +1.  Bits are stored most significant first.
    """
    shape: tuple
    rows: np.ndarray  # uint8, (F, ceil(n/8))

    @property
    def out_channels(self) -> int:
        return self.shape[0]

    @property
    def bits_per_filter(self) -> int:
        return int(np.prod(self.shape[1:]))

    @property
    def row_bytes(self) -> int:
        return (self.bits_per_filter + 7) // 8

    def tobytes(self) -> bytes:
        return self.rows.tobytes()

    @classmethod
    def frombytes(cls, shape, data: bytes) -> "PackedBits":
        shape = tuple(int(s) for s in shape)
        n = int(np.prod(shape[1:]))
        rows = np.frombuffer(data, dtype=np.uint8).reshape(shape[0], (n + 7) // 8)
        return cls(shape, rows.copy())

    def __eq__(self, other):
        return (isinstance(other, PackedBits) and self.shape == other.shape
                and np.array_equal(self.rows, other.rows))


def pack(signs) -> PackedBits:
    signs = np.asarray(signs)
    flat = signs.reshape(signs.shape[0], -1)
    pos = flat == 1
    if not np.all(pos | (flat == -1)):
        raise ValueError("pack expects a tensor of +1/-1 values")
    rows = np.packbits(pos, axis=1, bitorder="big")
    return PackedBits(tuple(signs.shape), rows)


def unpack(packed: PackedBits, dtype=np.float32):
    n = packed.bits_per_filter
    bits = np.unpackbits(packed.rows, axis=1, count=n, bitorder="big")
    return np.where(bits == 1, 1, -1).astype(dtype).reshape(packed.shape)


def ste_weight_grad(dc_db, alpha, clip_lo=-5.0, clip_hi=5.0):
    """Straight-through gradient for the shadow weights.

    ``clip(dC/dB / alpha, lo, hi)`` per output channel.  A channel whose
    ``alpha`` is exactly zero passes ``dC/dB`` through unscaled.
    """
    alpha = np.asarray(alpha, dtype=dc_db.dtype).reshape((-1,) + (1,) * (dc_db.ndim - 1))
    safe = np.where(alpha == 0, 1, alpha)
    return np.clip(dc_db / safe, clip_lo, clip_hi).astype(dc_db.dtype, copy=False)
