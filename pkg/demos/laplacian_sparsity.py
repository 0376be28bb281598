"""
Laplacian gradient layers are sparse
====================================

Band-pass layers of natural images cluster tightly around zero, which is
what makes a sign plus a scale a reasonable representation.  Needs
scikit-image for the sample photographs.
"""
import numpy as np

from binsr.corpus import natural_images
from binsr.pyramid import build_laplacian, collapse, pyramid_stats, sparsity_summary

images = natural_images(6, max_side=256)
stats = pyramid_stats(images, levels=3, bins=21)

for row in sparsity_summary(stats, tau=0.1):
    print(f"level {row['level']}: {100 * row['fraction_le_tau']:.1f}% of values within 0.1, "
          f"mean |v| {row['mean_abs']:.4f}, center bin {100 * row['center_bin_mass']:.1f}%")

###############################################################################
# A coarse text histogram of the finest layer.
for lo, hi, mass in zip(stats.edges[:-1], stats.edges[1:], stats.histograms[0]):
    print(f"[{lo:+.2f}, {hi:+.2f}) {'#' * int(round(60 * mass))}")

###############################################################################
# The decomposition is lossless.
layers, base = build_laplacian(images[0], 3)
print("reconstruction error:", float(np.abs(collapse(layers, base) - images[0]).max()))
