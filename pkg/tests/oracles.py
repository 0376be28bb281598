"""Slow reference implementations used only by the tests."""
import numpy as np


def conv2d_loops(x, w, b=None, stride=1, pad=0):
    n, c, h, wd = x.shape
    f, _, k, _ = w.shape
    xp = np.zeros((n, c, h + 2 * pad, wd + 2 * pad), dtype=np.float64)
    xp[:, :, pad:pad + h, pad:pad + wd] = x
    ho = (h + 2 * pad - k) // stride + 1
    wo = (wd + 2 * pad - k) // stride + 1
    out = np.zeros((n, f, ho, wo))
    for i in range(n):
        for o in range(f):
            for y in range(ho):
                for z in range(wo):
                    acc = 0.0
                    for ch in range(c):
                        for dy in range(k):
                            for dx in range(k):
                                acc += xp[i, ch, y * stride + dy, z * stride + dx] * w[o, ch, dy, dx]
                    out[i, o, y, z] = acc + (0.0 if b is None else b[o])
    return out


def transposed_conv_zero_stuff(x, w, stride, pad, output_padding=0):
    """Insert ``stride-1`` zeros between inputs, pad, and correlate with the
    spatially flipped, channel-swapped kernel."""
    n, c, h, wd = x.shape
    cin, cout, k, _ = w.shape
    hs, ws = (h - 1) * stride + 1, (wd - 1) * stride + 1
    z = np.zeros((n, c, hs, ws))
    z[:, :, ::stride, ::stride] = x
    q = k - 1 - pad
    z = np.pad(z, ((0, 0), (0, 0), (q, q + output_padding), (q, q + output_padding)))
    wf = w[:, :, ::-1, ::-1].transpose(1, 0, 2, 3)
    return conv2d_loops(z, wf, None, 1, 0)


def pixel_shuffle_loops(x, r):
    n, c, h, w = x.shape
    co = c // (r * r)
    out = np.zeros((n, co, h * r, w * r), dtype=x.dtype)
    for i in range(n):
        for ch in range(co):
            for y in range(h):
                for z in range(w):
                    for dy in range(r):
                        for dx in range(r):
                            out[i, ch, y * r + dy, z * r + dx] = x[i, ch * r * r + dy * r + dx, y, z]
    return out


def rel_err(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    return float(np.max(np.abs(a - b)) / max(np.max(np.abs(b)), 1e-12))


def central_diff(f, x, h=1e-3):
    """Central finite-difference gradient of scalar ``f`` at array ``x`` (modified in place then restored)."""
    g = np.zeros_like(x, dtype=np.float64)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        idx = it.multi_index
        old = x[idx]
        x[idx] = old + h
        fp = f()
        x[idx] = old - h
        fm = f()
        x[idx] = old
        g[idx] = (fp - fm) / (2 * h)
    return g
