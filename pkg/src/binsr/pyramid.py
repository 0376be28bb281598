"""Laplacian pyramids and the statistics of their band-pass layers."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

BINOMIAL5 = np.array([1, 4, 6, 4, 1], dtype=np.float64) / 16


def blur(img):
    """Separable 5-tap binomial blur over the two leading (spatial) axes."""
    out = ndimage.correlate1d(img, BINOMIAL5, axis=0, mode="mirror")
    return ndimage.correlate1d(out, BINOMIAL5, axis=1, mode="mirror")


def reduce(img):
    return blur(img)[::2, ::2]


def expand(img, shape):
    """Zero-insertion upsampling followed by a gain-4 binomial blur."""
    up = np.zeros(tuple(shape[:2]) + img.shape[2:], dtype=np.float64)
    up[::2, ::2] = img
    return 4 * blur(up)


def build_laplacian(img, levels: int, pad=False):
    """Return ``(gradient_layers, base)``.

    ``gradient_layers[i] = G_i - expand(G_{i+1})`` with ``G_0 = img`` and
    ``G_{i+1} = reduce(G_i)``.  Spatial axes are the first two.
    """
    img = np.asarray(img, dtype=np.float64)
    if levels < 1:
        raise ValueError("levels must be >= 1")
    m = 2 ** levels
    h, w = img.shape[:2]
    if h % m or w % m:
        if not pad:
            raise ValueError(f"image {h}x{w} is not divisible by 2^{levels}; use pad=True")
        extra = [(0, (-h) % m), (0, (-w) % m)] + [(0, 0)] * (img.ndim - 2)
        img = np.pad(img, extra, mode="edge")
        h, w = img.shape[:2]
    if h // m < 1 or w // m < 1 or min(h, w) // m < 1:
        raise ValueError(f"too many levels ({levels}) for a {h}x{w} image")
    layers = []
    g = img
    for _ in range(levels):
        nxt = reduce(g)
        layers.append(g - expand(nxt, g.shape))
        g = nxt
    return layers, g


def collapse(layers, base):
    g = base
    for lap in reversed(layers):
        g = lap + expand(g, lap.shape)
    return g


def gradient_histogram(layer, bins=21):
    """Normalized histogram of ``layer`` over [-1, 1] (values clipped into range)."""
    if bins < 3 or bins % 2 == 0:
        raise ValueError("bins must be odd and >= 3")
    v = np.asarray(layer).ravel()
    if v.size == 0:
        raise ValueError("empty layer")
    counts, edges = np.histogram(np.clip(v, -1, 1), bins=bins, range=(-1, 1))
    return counts / v.size, edges


@dataclass
class PyramidStats:
    levels: int
    histograms: list
    edges: np.ndarray
    mean_abs: list
    layers: list

    def fraction_near_zero(self, tau):
        return [float(np.mean(np.abs(l) <= tau)) for l in self.layers]


def pyramid_stats(images, levels=3, bins=21) -> PyramidStats:
    """Pool gradient layers level by level over a corpus of images."""
    per_level = [[] for _ in range(levels)]
    for img in images:
        layers, _ = build_laplacian(img, levels, pad=True)
        for i, l in enumerate(layers):
            per_level[i].append(l.ravel())
    pooled = [np.concatenate(v) for v in per_level]
    hists = []
    edges = None
    for l in pooled:
        h, edges = gradient_histogram(l, bins)
        hists.append(h)
    return PyramidStats(levels, hists, edges, [float(np.mean(np.abs(l))) for l in pooled], pooled)


def sparsity_summary(stats: PyramidStats, tau=0.1):
    if tau <= 0:
        raise ValueError("tau must be positive")
    frac = stats.fraction_near_zero(tau)
    center = len(stats.histograms[0]) // 2
    return [
        {"level": i, "fraction_le_tau": frac[i], "mean_abs": stats.mean_abs[i],
         "center_bin_mass": float(stats.histograms[i][center]),
         "center_is_mode": bool(np.argmax(stats.histograms[i]) == center
                                and np.sum(stats.histograms[i] == stats.histograms[i][center]) == 1)}
        for i in range(stats.levels)
    ]
