"""Small natural-image corpora built from scikit-image's bundled samples.

Used by the demos and the acceptance suite so they run without any download.
scikit-image is an optional dependency (``pip install binsr[corpus]``).
"""
from __future__ import annotations

import os

import numpy as np

from .data import save_image

PHOTOS = ("astronaut", "camera", "coffee", "chelsea", "rocket", "coins", "moon", "page",
          "clock", "brick", "grass", "gravel", "immunohistochemistry", "text")
TRAIN = ("astronaut", "coffee", "rocket", "immunohistochemistry", "camera", "brick",
         "grass", "coins", "clock", "text")
HELD_OUT = ("chelsea", "gravel", "moon", "page")


def _skdata():
    try:
        import skimage.data
    except ImportError as e:  # pragma: no cover - depends on the environment
        raise ImportError("the sample corpus needs scikit-image: pip install scikit-image") from e
    return skimage.data


def sample_image(name):
    """An skimage sample as an (H, W, 3) float32 array in [0, 1]."""
    a = np.asarray(getattr(_skdata(), name)())
    if a.ndim == 2:
        a = np.stack([a] * 3, axis=-1)
    return a[..., :3].astype(np.float32) / 255.0


def tiles(img, size, step):
    h, w = img.shape[:2]
    return [img[y:y + size, x:x + size]
            for y in range(0, h - size + 1, step)
            for x in range(0, w - size + 1, step)]


def natural_images(n=6, max_side=256):
    """``n`` photographs, center-cropped to at most ``max_side`` pixels a side."""
    out = []
    for name in PHOTOS[:n]:
        img = sample_image(name)
        h, w = img.shape[:2]
        sh, sw = min(h, max_side), min(w, max_side)
        y, x = (h - sh) // 2, (w - sw) // 2
        out.append(img[y:y + sh, x:x + sw])
    return out


def desk_split(train_tile=96, val_tile=64, val_step=128):
    """Training tiles and held-out tiles from disjoint source photographs."""
    train = [t for n in TRAIN for t in tiles(sample_image(n), train_tile, train_tile)]
    val = [t for n in HELD_OUT for t in tiles(sample_image(n), val_tile, val_step)]
    return train, val


def write_split(out_dir, **kw):
    """Write :func:`desk_split` as PNGs to ``out_dir/{train,val}/hr``."""
    train, val = desk_split(**kw)
    for part, imgs in (("train", train), ("val", val)):
        d = os.path.join(out_dir, part, "hr")
        os.makedirs(d, exist_ok=True)
        for i, img in enumerate(imgs):
            save_image(img, os.path.join(d, f"{i:04d}.png"))
    return os.path.join(out_dir, "train"), os.path.join(out_dir, "val")
