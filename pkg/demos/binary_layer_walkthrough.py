"""
A binary convolution, from shadow weights to additions
=======================================================

A binarized filter keeps real "shadow" weights for training, but inference
only needs their signs and one scale per output channel.  This script follows
a single layer through that path.
"""
import numpy as np

from binsr.binary import alpha_deterministic, approximation_error, binarize, pack
from binsr.infer import CountingArith, binconv_mulfree
from binsr.layers import BinaryConv2d
from binsr.tensor import conv2d

rng = np.random.default_rng(0)
layer = BinaryConv2d(8, 4, 3, alpha_mode="deterministic", rng=rng)
layer.sync()

###############################################################################
# The closed-form scale is the mean absolute weight.  Nudging it in either
# direction only makes the approximation worse.
w = layer.shadow.data
a = alpha_deterministic(w)
b = binarize(w)
print("alpha:", np.round(a, 4))
for factor in (0.9, 1.0, 1.1):
    print(f"  alpha x {factor}: error {approximation_error(w, a * factor, b).sum():.5f}")

###############################################################################
# Signs pack to one bit each, one padded row per output channel.
packed = pack(b)
print("packed rows:", packed.rows.shape, "bytes per filter:", packed.row_bytes)
print("first filter, first byte: {:08b}".format(packed.rows[0, 0]))

###############################################################################
# The multiplication-free kernel sums inputs under +1 bits and subtracts the
# rest; the only multiplies are the per-channel scales.
x = rng.standard_normal((1, 8, 10, 10)).astype(np.float32)
arith = CountingArith()
fast = binconv_mulfree(x, layer, arith)
dense = conv2d(x, layer.effective_weights(), None, layer.spec)
print("max |fast - dense|:", float(np.abs(fast - dense).max()))
print("multiplications:", arith.mults, "= M*N*F =", 10 * 10 * 4)
print("additions:", arith.adds)
