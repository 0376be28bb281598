"""Bicubic LR/HR pair generation, patch augmentation and Y-channel metrics.

Images are (H, W, 3) float arrays in [0, 1]; model tensors are NCHW.
"""
from __future__ import annotations

import os
from dataclasses import dataclass, field

import numpy as np
from PIL import Image
from scipy import ndimage

from .tensor import DTYPE

PSNR_CAP = 99.0
IMAGE_EXTS = (".png", ".jpg", ".jpeg", ".bmp", ".tif", ".tiff")


def cubic(x, a=-0.5):
    """Keys cubic convolution kernel."""
    x = np.abs(np.asarray(x, dtype=np.float64))
    x2, x3 = x * x, x * x * x
    return np.where(x <= 1, (a + 2) * x3 - (a + 3) * x2 + 1,
                    np.where(x < 2, a * x3 - 5 * a * x2 + 8 * a * x - 4 * a, 0.0))


def resize_matrix(n_in: int, n_out: int) -> np.ndarray:
    """(n_out, n_in) bicubic interpolation matrix with edge clamping.

    Downscaling widens the kernel by the reduction factor (anti-aliasing), as
    in MATLAB's ``imresize``; rows are normalized to sum to one.
    """
    scale = n_out / n_in
    ks = min(scale, 1.0)
    width = 4.0 / ks
    u = (np.arange(n_out) + 0.5) / scale - 0.5
    left = np.floor(u - width / 2).astype(int)
    taps = int(np.ceil(width)) + 2
    idx = left[:, None] + np.arange(taps)[None, :]
    w = ks * cubic(ks * (u[:, None] - idx))
    w /= w.sum(axis=1, keepdims=True)
    m = np.zeros((n_out, n_in))
    np.add.at(m, (np.repeat(np.arange(n_out), taps), np.clip(idx, 0, n_in - 1).ravel()), w.ravel())
    return m


def bicubic_resize(img, factor: float):
    """Resize by ``factor`` in {2, 4, 1/2, 1/4} and clip to [0, 1].

    Accepts (H, W), (H, W, C) or (N, C, H, W) arrays.
    """
    img = np.asarray(img)
    if img.ndim == 4:
        axes = (2, 3)
    elif img.ndim in (2, 3):
        axes = (0, 1)
    else:
        raise ValueError(f"unsupported image shape {img.shape}")
    h, w = img.shape[axes[0]], img.shape[axes[1]]
    if h <= 0 or w <= 0 or factor <= 0:
        raise ValueError("image dimensions and factor must be positive")
    ho, wo = int(round(h * factor)), int(round(w * factor))
    if ho < 1 or wo < 1 or not np.isclose(ho, h * factor) or not np.isclose(wo, w * factor):
        raise ValueError(f"{h}x{w} cannot be resized by {factor}")
    x = np.moveaxis(img.astype(np.float64), axes, (0, 1))
    x = np.tensordot(resize_matrix(h, ho), x, axes=(1, 0))
    x = np.moveaxis(np.tensordot(resize_matrix(w, wo), x, axes=(1, 1)), 0, 1)
    x = np.moveaxis(x, (0, 1), axes)
    return np.clip(x, 0, 1).astype(img.dtype if img.dtype.kind == "f" else DTYPE)


def to_tensor(img):
    """(H, W, 3) -> (1, 3, H, W) float32."""
    return np.ascontiguousarray(np.asarray(img, DTYPE).transpose(2, 0, 1)[None])


def to_image(t):
    """(1, 3, H, W) -> (H, W, 3)."""
    return np.ascontiguousarray(np.asarray(t)[0].transpose(1, 2, 0))


@dataclass
class PatchPair:
    lr: np.ndarray
    hr: np.ndarray


def sample_and_augment(hr_image, patch: int, scale: int, rng, noise_sigma=0.01) -> PatchPair:
    """Random crop, flips, 90-degree rotation and HR-side Gaussian noise.

    The LR patch is the bicubic downscale of the clean, geometrically
    transformed crop; noise is added to the HR target only.
    """
    h, w = hr_image.shape[:2]
    if patch > h or patch > w:
        raise ValueError(f"patch {patch} larger than image {h}x{w}")
    if patch % scale:
        raise ValueError(f"patch {patch} not divisible by scale {scale}")
    y = rng.integers(0, h - patch + 1)
    x = rng.integers(0, w - patch + 1)
    crop = hr_image[y:y + patch, x:x + patch]
    if rng.random() < 0.5:
        crop = crop[:, ::-1]
    if rng.random() < 0.5:
        crop = crop[::-1]
    crop = np.rot90(crop, int(rng.integers(0, 4)))
    crop = np.ascontiguousarray(crop, dtype=DTYPE)
    lr = bicubic_resize(crop, 1 / scale)
    hr = crop
    if noise_sigma:
        hr = np.clip(crop + rng.normal(0, noise_sigma, crop.shape), 0, 1).astype(DTYPE)
    return PatchPair(to_tensor(lr), to_tensor(hr))


def sample_batch(images, batch_size, patch, scale, rng, noise_sigma=0.01):
    pairs = [sample_and_augment(images[rng.integers(len(images))], patch, scale, rng, noise_sigma)
             for _ in range(batch_size)]
    return (np.concatenate([p.lr for p in pairs]), np.concatenate([p.hr for p in pairs]))


def make_pairs(images, scale):
    """Crop each image to a multiple of ``scale`` and render its bicubic LR."""
    pairs = []
    for img in images:
        h, w = img.shape[:2]
        img = img[:h - h % scale, :w - w % scale]
        pairs.append((to_tensor(bicubic_resize(img, 1 / scale)), to_tensor(img)))
    return pairs


def rgb_to_y(img):
    """BT.601 luma of an (H, W, 3) or (N, 3, H, W) array."""
    img = np.asarray(img, dtype=np.float64)
    if img.ndim == 4:
        r, g, b = img[:, 0], img[:, 1], img[:, 2]
    elif img.ndim == 3 and img.shape[-1] == 3:
        r, g, b = img[..., 0], img[..., 1], img[..., 2]
    else:
        raise ValueError(f"expected an RGB image, got shape {img.shape}")
    return 0.299 * r + 0.587 * g + 0.114 * b


def psnr_y(a, b) -> float:
    if np.shape(a) != np.shape(b):
        raise ValueError(f"shape mismatch {np.shape(a)} vs {np.shape(b)}")
    mse = float(np.mean((rgb_to_y(a) - rgb_to_y(b)) ** 2))
    if mse == 0:
        return PSNR_CAP
    return min(PSNR_CAP, 10 * np.log10(1.0 / mse))


def _gaussian_window(size=11, sigma=1.5):
    x = np.arange(size) - size // 2
    g = np.exp(-x ** 2 / (2 * sigma ** 2))
    return g / g.sum()


def ssim_y(a, b, window=11, sigma=1.5, k1=0.01, k2=0.03, data_range=1.0) -> float:
    """Single-scale SSIM of the luma channels, averaged over valid windows."""
    if np.shape(a) != np.shape(b):
        raise ValueError(f"shape mismatch {np.shape(a)} vs {np.shape(b)}")
    ya, yb = rgb_to_y(a), rgb_to_y(b)
    if ya.ndim == 3:
        return float(np.mean([ssim_y_plane(p, q, window, sigma, k1, k2, data_range)
                              for p, q in zip(ya, yb)]))
    return ssim_y_plane(ya, yb, window, sigma, k1, k2, data_range)


def ssim_y_plane(ya, yb, window=11, sigma=1.5, k1=0.01, k2=0.03, data_range=1.0) -> float:
    if min(ya.shape) < window:
        raise ValueError(f"image {ya.shape} smaller than the {window}x{window} SSIM window")
    g = _gaussian_window(window, sigma)
    r = window // 2

    def filt(z):
        z = ndimage.correlate1d(z, g, axis=0, mode="constant")
        z = ndimage.correlate1d(z, g, axis=1, mode="constant")
        return z[r:z.shape[0] - r, r:z.shape[1] - r]

    c1, c2 = (k1 * data_range) ** 2, (k2 * data_range) ** 2
    mu_a, mu_b = filt(ya), filt(yb)
    saa = filt(ya * ya) - mu_a ** 2
    sbb = filt(yb * yb) - mu_b ** 2
    sab = filt(ya * yb) - mu_a * mu_b
    num = (2 * mu_a * mu_b + c1) * (2 * sab + c2)
    den = (mu_a ** 2 + mu_b ** 2 + c1) * (saa + sbb + c2)
    return float(np.mean(num / den))


@dataclass
class MetricsReport:
    rows: list = field(default_factory=list)  # (name, psnr_y, ssim_y, bicubic_psnr_y, bicubic_ssim_y)

    def add(self, name, psnr, ssim, bic_psnr=float("nan"), bic_ssim=float("nan")):
        self.rows.append((name, psnr, ssim, bic_psnr, bic_ssim))

    def means(self):
        if not self.rows:
            return (float("nan"),) * 4
        return tuple(float(np.mean([r[i] for r in self.rows])) for i in range(1, 5))

    def to_csv(self) -> str:
        lines = ["image,psnr_y,ssim_y,bicubic_psnr_y,bicubic_ssim_y"]
        for r in self.rows:
            lines.append(f"{r[0]},{r[1]:.4f},{r[2]:.5f},{r[3]:.4f},{r[4]:.5f}")
        m = self.means()
        lines.append(f"MEAN,{m[0]:.4f},{m[1]:.5f},{m[2]:.4f},{m[3]:.5f}")
        return "\n".join(lines) + "\n"


def load_image(path):
    with Image.open(path) as im:
        return np.asarray(im.convert("RGB"), dtype=DTYPE) / 255.0


def save_image(img, path):
    arr = np.clip(np.rint(np.asarray(img) * 255), 0, 255).astype(np.uint8)
    Image.fromarray(arr).save(path)


def list_images(directory):
    if not os.path.isdir(directory):
        raise FileNotFoundError(f"no such image directory: {directory}")
    return sorted(os.path.join(directory, f) for f in os.listdir(directory)
                  if f.lower().endswith(IMAGE_EXTS))


def load_dataset(data_dir):
    """Load ``<data_dir>/hr/*`` images (or ``data_dir`` itself if it has no hr/)."""
    hr = os.path.join(data_dir, "hr")
    paths = list_images(hr if os.path.isdir(hr) else data_dir)
    return [(os.path.basename(p), load_image(p)) for p in paths]
