"""Procedural HR images, the blur/downsample/noise degradation, bicubic resampling and corpora."""

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .errors import ConfigError

SCALE = 4
SPLITS = ("train", "val", "test")
_SPLIT_IDS = {"train": 0, "val": 1, "test": 2}
_CUBIC_A = -0.5


def cubic_kernel(x, a=_CUBIC_A):
    """Keys cubic convolution kernel; ``a = -0.5`` gives Catmull-Rom."""
    x = np.abs(np.asarray(x, dtype=np.float64))
    out = np.zeros_like(x)
    near = x <= 1
    far = (x > 1) & (x < 2)
    out[near] = (a + 2) * x[near] ** 3 - (a + 3) * x[near] ** 2 + 1
    out[far] = a * x[far] ** 3 - 5 * a * x[far] ** 2 + 8 * a * x[far] - 4 * a
    return out


@lru_cache(maxsize=32)
def _resize_matrix(n_in, n_out):
    """Dense ``n_out x n_in`` bicubic resize operator with edge clamping.

    Pixel centres are aligned (half-pixel convention). When shrinking, the
    kernel is stretched by the scale factor to low-pass before sampling.
    """
    scale = n_out / n_in
    stretch = min(scale, 1.0)
    support = 2.0 / stretch
    mat = np.zeros((n_out, n_in))
    for i in range(n_out):
        centre = (i + 0.5) / scale - 0.5
        lo = int(np.floor(centre - support)) + 1
        taps = np.arange(lo, int(np.ceil(centre + support)))
        w = cubic_kernel((centre - taps) * stretch) * stretch
        w = w / w.sum()
        for j, wj in zip(np.clip(taps, 0, n_in - 1), w):
            mat[i, j] += wj
    mat.setflags(write=False)
    return mat


def bicubic_resample(img, factor=SCALE, direction="up"):
    """Separable Catmull-Rom resize of ``[..., H, W]`` arrays by an integer factor."""
    if factor not in (2, 4):
        raise ValueError(f"bicubic_resample: unsupported factor {factor}")
    img = np.asarray(img, dtype=np.float32)
    h, w = img.shape[-2:]
    if direction == "up":
        oh, ow = h * factor, w * factor
    elif direction == "down":
        if h % factor or w % factor:
            raise ValueError(f"bicubic_resample: {h}x{w} not divisible by {factor}")
        oh, ow = h // factor, w // factor
    else:
        raise ValueError(f"bicubic_resample: direction must be 'up' or 'down', got {direction!r}")
    rh = _resize_matrix(h, oh)
    rw = _resize_matrix(w, ow)
    out = np.einsum("ij,...jk,lk->...il", rh, img.astype(np.float64), rw)
    return out.astype(np.float32)


def _gauss_kernel(sigma, size=5):
    r = np.arange(size) - size // 2
    k = np.exp(-(r**2) / (2.0 * sigma**2))
    return k / k.sum()


def gaussian_blur(img, sigma, size=5):
    """Separable Gaussian blur with edge-replicated borders."""
    img = np.asarray(img, dtype=np.float64)
    k = _gauss_kernel(sigma, size)
    p = size // 2
    pad = [(0, 0)] * (img.ndim - 2) + [(p, p), (p, p)]
    x = np.pad(img, pad, mode="edge")
    h, w = img.shape[-2:]
    rows = sum(k[i] * x[..., i:i + h, :] for i in range(size))
    return sum(k[j] * rows[..., :, j:j + w] for j in range(size))


def degrade(x0, blur_sigma, noise_sigma, seed=0):
    """Blur (5x5 Gaussian), 4x block-average, add white noise, clamp to [-1, 1]."""
    if not 0.2 <= blur_sigma <= 2.0:
        raise ConfigError(f"blur_sigma {blur_sigma} outside [0.2, 2.0]", key="blur_sigma")
    if not 0.0 <= noise_sigma <= 0.1:
        raise ConfigError(f"noise_sigma {noise_sigma} outside [0, 0.1]", key="noise_sigma")
    x0 = np.asarray(x0, dtype=np.float32)
    h, w = x0.shape[-2:]
    if h % SCALE or w % SCALE:
        raise ValueError(f"degrade: {h}x{w} not divisible by {SCALE}")
    blurred = gaussian_blur(x0, blur_sigma)
    lead = blurred.shape[:-2]
    lr = blurred.reshape(*lead, h // SCALE, SCALE, w // SCALE, SCALE).mean(axis=(-3, -1))
    if noise_sigma > 0:
        lr = lr + noise_sigma * np.random.default_rng(seed).standard_normal(lr.shape)
    return np.clip(lr, -1.0, 1.0).astype(np.float32)


def _hr_image(rng, size, channels):
    yy, xx = np.mgrid[0:size, 0:size] / size
    img = np.zeros((channels, size, size))
    tint = rng.uniform(0.6, 1.0, size=(channels, 1, 1)) if channels > 1 else np.ones((1, 1, 1))
    base = np.zeros((size, size))
    for _ in range(3):
        fx, fy = rng.uniform(0.5, 3.0, size=2)
        px, py = rng.uniform(0, 2 * np.pi, size=2)
        base += rng.uniform(0.3, 1.0) * np.sin(2 * np.pi * fx * xx + px) * np.sin(2 * np.pi * fy * yy + py)
    for _ in range(rng.integers(1, 4)):
        w, h = rng.integers(4, 17, size=2)
        x0, y0 = rng.integers(0, size - 3, size=2)
        base[y0:y0 + h, x0:x0 + w] += rng.uniform(-1.5, 1.5)
    for _ in range(rng.integers(0, 3)):
        cx, cy = rng.uniform(0, size, size=2)
        s = rng.uniform(1.5, 5.0)
        r2 = (xx * size - cx) ** 2 + (yy * size - cy) ** 2
        base += rng.uniform(-1.5, 1.5) * np.exp(-r2 / (2 * s * s))
    n = int(rng.integers(8, 15))
    period = int(rng.choice([2, 4]))
    ox, oy = rng.integers(0, size - n + 1, size=2)
    phase = rng.integers(0, 2 * period, size=2)
    iy, ix = np.mgrid[0:n, 0:n]
    checks = (((ix + phase[0]) // period + (iy + phase[1]) // period) % 2) * 2.0 - 1.0
    base[oy:oy + n, ox:ox + n] += rng.uniform(0.5, 1.0) * checks
    img[:] = base * tint
    lo, hi = img.min(), img.max()
    if hi - lo < 1e-12:
        return np.zeros_like(img, dtype=np.float32)
    return (2.0 * (img - lo) / (hi - lo) - 1.0).astype(np.float32)


def hr_image(seed, index, size=32, channels=1):
    """One procedural HR image in [-1, 1], deterministic per ``(seed, index)``."""
    return _hr_image(np.random.default_rng([seed, index, 0]), size, channels)


def gen_hr_corpus(n, size=32, channels=1, seed=0, start=0):
    """``n`` HR images ``[1, C, size, size]``; image ``i`` depends only on ``(seed, start + i)``."""
    if n < 1:
        raise ConfigError(f"corpus size must be >= 1, got {n}")
    return [hr_image(seed, start + i, size, channels)[None] for i in range(n)]


@dataclass
class PairedSample:
    x0: np.ndarray
    y_lr: np.ndarray
    y0: np.ndarray
    blur_sigma: float
    noise_sigma: float

    @property
    def e0(self):
        return self.y0 - self.x0

    @classmethod
    def from_pair(cls, x0, y_lr, blur_sigma=float("nan"), noise_sigma=float("nan")):
        x0 = np.asarray(x0, dtype=np.float32)
        y_lr = np.asarray(y_lr, dtype=np.float32)
        return cls(x0, y_lr, bicubic_resample(y_lr, SCALE, "up"), float(blur_sigma), float(noise_sigma))


@dataclass
class Corpus:
    split: str
    seed: int
    samples: list = field(default_factory=list)

    def __len__(self):
        return len(self.samples)

    def __getitem__(self, i):
        return self.samples[i]

    @property
    def hr(self):
        return np.concatenate([s.x0 for s in self.samples])

    @property
    def lr(self):
        return np.concatenate([s.y_lr for s in self.samples])

    @property
    def up(self):
        return np.concatenate([s.y0 for s in self.samples])

    def batch(self, idx):
        """Stacked ``(x0, y_lr, y0)`` arrays for sample indices ``idx``."""
        picked = [self.samples[i] for i in idx]
        return (
            np.concatenate([s.x0 for s in picked]),
            np.concatenate([s.y_lr for s in picked]),
            np.concatenate([s.y0 for s in picked]),
        )


@dataclass(frozen=True)
class CorpusConfig:
    n_train: int = 2048
    n_val: int = 128
    n_test: int = 128
    size: int = 32
    channels: int = 1
    blur_min: float = 0.5
    blur_max: float = 1.5
    noise_min: float = 0.0
    noise_max: float = 0.05
    seed: int = 0

    def validate(self):
        for key in ("n_train", "n_val", "n_test"):
            if getattr(self, key) < 1:
                raise ConfigError(f"must be >= 1, got {getattr(self, key)}", key=f"corpus.{key}")
        if self.size < 8 or self.size % SCALE:
            raise ConfigError(f"must be a multiple of {SCALE} and >= 8", key="corpus.size")
        if self.channels not in (1, 3):
            raise ConfigError("must be 1 or 3", key="corpus.channels")
        if not 0.2 <= self.blur_min <= self.blur_max <= 2.0:
            raise ConfigError("need 0.2 <= blur_min <= blur_max <= 2.0", key="corpus.blur_min")
        if not 0.0 <= self.noise_min <= self.noise_max <= 0.1:
            raise ConfigError("need 0 <= noise_min <= noise_max <= 0.1", key="corpus.noise_min")
        return self


def make_split(cfg, split, split_seed=None):
    """Build one split; HR content and degradation draws use split-disjoint seed streams."""
    cfg.validate()
    seed = cfg.seed if split_seed is None else split_seed
    sid = _SPLIT_IDS[split]
    n = {"train": cfg.n_train, "val": cfg.n_val, "test": cfg.n_test}[split]
    corpus = Corpus(split=split, seed=seed)
    for i in range(n):
        x0 = _hr_image(np.random.default_rng([seed, sid, i, 0]), cfg.size, cfg.channels)[None]
        drng = np.random.default_rng([seed, sid, i, 1])
        blur = float(drng.uniform(cfg.blur_min, cfg.blur_max))
        noise = float(drng.uniform(cfg.noise_min, cfg.noise_max))
        y_lr = degrade(x0, blur, noise, seed=[seed, sid, i, 2])
        corpus.samples.append(PairedSample.from_pair(x0, y_lr, blur, noise))
    return corpus


def make_corpus(cfg, split_seed=None):
    """Train/val/test corpora keyed by split name."""
    return {split: make_split(cfg, split, split_seed) for split in SPLITS}
