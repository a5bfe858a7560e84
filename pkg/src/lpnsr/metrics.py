"""Full-reference image metrics on images stored in [-1, 1]."""

import math
from dataclasses import dataclass

import numpy as np

from .autodiff import Tensor
from .errors import ShapeError
from .losses import perceptual_proxy

PSNR_INF = float("inf")
MSE_FLOOR = 1e-12
SSIM_WIN = 7
SSIM_SIGMA = 1.5
SSIM_C1 = 0.01**2
SSIM_C2 = 0.03**2


def to_unit(x):
    """Map [-1, 1] to [0, 1] and clip."""
    x = np.asarray(x.data if isinstance(x, Tensor) else x, dtype=np.float64)
    return np.clip((x + 1.0) / 2.0, 0.0, 1.0)


def psnr(pred, target):
    """PSNR in dB with peak 1 on the [0, 1] range; ``inf`` when MSE < 1e-12."""
    a, b = to_unit(pred), to_unit(target)
    if a.shape != b.shape:
        raise ShapeError(f"psnr: {a.shape} vs {b.shape}")
    mse = float(np.mean((a - b) ** 2))
    if mse < MSE_FLOOR:
        return PSNR_INF
    return 10.0 * math.log10(1.0 / mse)


def _gauss_window():
    r = np.arange(SSIM_WIN) - SSIM_WIN // 2
    g = np.exp(-(r**2) / (2 * SSIM_SIGMA**2))
    return g / g.sum()


def _filter_valid(img, g):
    """Separable correlation over valid positions of the last two axes."""
    n = g.size
    h, w = img.shape[-2:]
    rows = sum(g[i] * img[..., i:h - n + 1 + i, :] for i in range(n))
    return sum(g[j] * rows[..., :, j:w - n + 1 + j] for j in range(n))


def ssim(pred, target):
    """Mean SSIM (7x7 Gaussian window, sigma 1.5, L = 1) over valid windows of every image/channel."""
    a, b = to_unit(pred), to_unit(target)
    if a.shape != b.shape:
        raise ShapeError(f"ssim: {a.shape} vs {b.shape}")
    g = _gauss_window()
    mu_a, mu_b = _filter_valid(a, g), _filter_valid(b, g)
    var_a = _filter_valid(a * a, g) - mu_a**2
    var_b = _filter_valid(b * b, g) - mu_b**2
    cov = _filter_valid(a * b, g) - mu_a * mu_b
    num = (2 * mu_a * mu_b + SSIM_C1) * (2 * cov + SSIM_C2)
    den = (mu_a**2 + mu_b**2 + SSIM_C1) * (var_a + var_b + SSIM_C2)
    return float(np.mean(num / den))


@dataclass
class ImageScores:
    psnr: float
    ssim: float
    l1: float
    proxy: float


def metrics(pred, target):
    """PSNR, SSIM, L1 and perceptual proxy; SSIM/PSNR are averaged per image."""
    a = np.asarray(pred.data if isinstance(pred, Tensor) else pred, dtype=np.float32)
    b = np.asarray(target.data if isinstance(target, Tensor) else target, dtype=np.float32)
    if a.shape != b.shape:
        raise ShapeError(f"metrics: {a.shape} vs {b.shape}")
    if a.ndim == 3:
        a, b = a[None], b[None]
    per_psnr = [psnr(a[i], b[i]) for i in range(a.shape[0])]
    return ImageScores(
        psnr=float(np.mean(per_psnr)),
        ssim=float(np.mean([ssim(a[i], b[i]) for i in range(a.shape[0])])),
        l1=float(np.abs(a.astype(np.float64) - b).mean()),
        proxy=perceptual_proxy(a, b).item(),
    )
