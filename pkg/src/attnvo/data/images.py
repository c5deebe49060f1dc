"""Frames, channel statistics, resizing/normalization, augmentation and PPM I/O."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

import numpy as np

STD_FLOOR = 1e-6
# ITU-R BT.601 luma weights, used for saturation/contrast jitter.
LUMA = np.array([0.299, 0.587, 0.114])


@dataclass
class Frame:
    index: int
    image: np.ndarray  # H x W x 3
    timestamp: float = 0.0

    def __post_init__(self):
        img = np.asarray(self.image)
        if img.ndim != 3 or img.shape[2] != 3 or img.shape[0] == 0 or img.shape[1] == 0:
            raise ValueError(f"frame image must be HxWx3 with H, W > 0, got {img.shape}")
        self.image = img


@dataclass(frozen=True)
class ChannelStats:
    mean: np.ndarray
    std: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "mean", np.asarray(self.mean, dtype=np.float64).reshape(3))
        object.__setattr__(self, "std", np.asarray(self.std, dtype=np.float64).reshape(3))
        if np.any(self.std < 0):
            raise ValueError("channel std must be non-negative")

    @classmethod
    def identity(cls) -> "ChannelStats":
        return cls(np.zeros(3), np.ones(3))


class RunningChannelStats:
    """Mergeable per-channel mean/variance accumulator (Chan et al. pairwise update)."""

    def __init__(self):
        self.n = 0
        self.mean = np.zeros(3)
        self.m2 = np.zeros(3)

    def update(self, image: np.ndarray) -> None:
        px = np.asarray(image, dtype=np.float64).reshape(-1, 3)
        nb = px.shape[0]
        mb = px.mean(axis=0)
        m2b = ((px - mb) ** 2).sum(axis=0)
        self._merge(nb, mb, m2b)

    def merge(self, other: "RunningChannelStats") -> None:
        self._merge(other.n, other.mean, other.m2)

    def _merge(self, nb, mb, m2b):
        if nb == 0:
            return
        n = self.n + nb
        delta = mb - self.mean
        self.mean = self.mean + delta * nb / n
        self.m2 = self.m2 + m2b + delta**2 * self.n * nb / n
        self.n = n

    def result(self) -> ChannelStats:
        if self.n == 0:
            raise ValueError("no pixels accumulated")
        return ChannelStats(self.mean.copy(), np.sqrt(self.m2 / self.n))


def compute_channel_stats(frames: Iterable[Frame]) -> ChannelStats:
    acc = RunningChannelStats()
    for f in frames:
        acc.update(f.image)
    if acc.n == 0:
        raise ValueError("compute_channel_stats needs at least one frame")
    return acc.result()


def _bilinear_axis(n_src: int, n_dst: int):
    # half-pixel centres, edge-clamped
    x = (np.arange(n_dst) + 0.5) * (n_src / n_dst) - 0.5
    x = np.clip(x, 0.0, n_src - 1)
    i0 = np.floor(x).astype(int)
    i1 = np.minimum(i0 + 1, n_src - 1)
    w = x - i0
    return i0, i1, w


def resize_bilinear(img: np.ndarray, size: tuple[int, int]) -> np.ndarray:
    H, W = size
    if H <= 0 or W <= 0:
        raise ValueError(f"target size must be positive, got {size}")
    h, w = img.shape[:2]
    if (h, w) == (H, W):
        return img.copy()
    y0, y1, wy = _bilinear_axis(h, H)
    x0, x1, wx = _bilinear_axis(w, W)
    wy = wy.astype(img.dtype)[:, None, None]
    wx = wx.astype(img.dtype)[None, :, None]
    rows = img[y0] * (1 - wy) + img[y1] * wy
    return rows[:, x0] * (1 - wx) + rows[:, x1] * wx


def normalize_image(img: np.ndarray, stats: ChannelStats) -> np.ndarray:
    std = np.maximum(stats.std, STD_FLOOR).astype(img.dtype)
    return (img - stats.mean.astype(img.dtype)) / std


def normalize_resize(frame: Frame, stats: ChannelStats, target: tuple[int, int]) -> Frame:
    img = normalize_image(resize_bilinear(frame.image, target), stats)
    return Frame(frame.index, img, frame.timestamp)


@dataclass(frozen=True)
class AugmentConfig:
    brightness_range: float = 0.2
    saturation_range: float = 0.2
    contrast_range: float = 0.2
    cutout_count_max: int = 2
    cutout_size_range: tuple[float, float] = (0.05, 0.2)
    apply_probability: float = 0.5

    def __post_init__(self):
        lo, hi = self.cutout_size_range
        if min(self.brightness_range, self.saturation_range, self.contrast_range) < 0:
            raise ValueError("jitter ranges must be >= 0")
        if self.cutout_count_max < 0 or not 0 <= lo <= hi <= 1:
            raise ValueError("invalid cutout configuration")
        if not 0.0 <= self.apply_probability <= 1.0:
            raise ValueError("apply_probability must lie in [0, 1]")

    @classmethod
    def off(cls) -> "AugmentConfig":
        return cls(0.0, 0.0, 0.0, 0, (0.0, 0.0), 0.0)


def augment_image(img: np.ndarray, cfg: AugmentConfig, rng: np.random.Generator, fill=None):
    """Return ``(augmented, boxes)``; boxes are ``(y0, y1, x0, x1)`` half-open cutouts.

    The same number of random draws is consumed whatever the config, so a
    per-sample seed gives reproducible output.
    """
    out = img.copy()
    H, W = img.shape[:2]
    photometric = rng.random() < cfg.apply_probability
    b, c, s = rng.uniform(-1.0, 1.0, size=3)
    if photometric:
        if cfg.brightness_range > 0:
            out = out * (1 + b * cfg.brightness_range)
        if cfg.contrast_range > 0:
            m = (out @ LUMA.astype(out.dtype)).mean()
            out = (out - m) * (1 + c * cfg.contrast_range) + m
        if cfg.saturation_range > 0:
            gray = (out @ LUMA.astype(out.dtype))[..., None]
            out = gray + (out - gray) * (1 + s * cfg.saturation_range)
        out = np.clip(out, 0.0, 1.0)

    boxes = []
    holes = rng.random() < cfg.apply_probability
    count = int(rng.integers(0, cfg.cutout_count_max + 1))
    params = rng.random((count, 4))
    if holes and count:
        fill = img.reshape(-1, 3).mean(axis=0) if fill is None else np.asarray(fill)
        lo, hi = cfg.cutout_size_range
        for fy, fx, py, px in params:
            h = max(1, int(round(H * (lo + (hi - lo) * fy))))
            w = max(1, int(round(W * (lo + (hi - lo) * fx))))
            y0 = int(py * (H - h + 1))
            x0 = int(px * (W - w + 1))
            out[y0 : y0 + h, x0 : x0 + w] = fill
            boxes.append((y0, y0 + h, x0, x0 + w))
    return out.astype(img.dtype, copy=False), boxes


def augment(frame: Frame, cfg: AugmentConfig, rng: np.random.Generator, fill=None) -> Frame:
    img, _ = augment_image(frame.image, cfg, rng, fill)
    return Frame(frame.index, img, frame.timestamp)


def corrupt_frames(frames: list[Frame], cfg: AugmentConfig | None = None, seed: int = 0) -> list[Frame]:
    """Augmentation-style corruption of a whole sequence for robustness evaluation.

    Defaults to the training augmentation ranges applied to every frame.
    Frame ``k`` draws from its own stream, so the result is reproducible.
    """
    cfg = cfg or AugmentConfig(apply_probability=1.0)
    return [augment(f, cfg, np.random.default_rng([seed, k])) for k, f in enumerate(frames)]


# -- netpbm ------------------------------------------------------------------


def write_ppm(path, img: np.ndarray) -> None:
    data = np.clip(np.round(np.asarray(img, dtype=np.float64) * 255.0), 0, 255).astype(np.uint8)
    H, W = data.shape[:2]
    with open(path, "wb") as fh:
        fh.write(b"P6\n%d %d\n255\n" % (W, H))
        fh.write(data.tobytes())


def _tokens(buf: bytes, count: int):
    out, pos = [], 2
    while len(out) < count:
        while buf[pos : pos + 1].isspace():
            pos += 1
        if buf[pos : pos + 1] == b"#":
            pos = buf.index(b"\n", pos) + 1
            continue
        start = pos
        while not buf[pos : pos + 1].isspace():
            pos += 1
        out.append(int(buf[start:pos]))
    return out, pos + 1


def read_ppm(path, dtype=np.float32) -> np.ndarray:
    buf = Path(path).read_bytes()
    if buf[:2] != b"P6":
        raise ValueError(f"{path}: not a binary PPM (P6) file")
    (W, H, maxval), pos = _tokens(buf, 3)
    if maxval != 255:
        raise ValueError(f"{path}: only maxval 255 is supported, got {maxval}")
    raw = np.frombuffer(buf, dtype=np.uint8, count=H * W * 3, offset=pos)
    return (raw.reshape(H, W, 3).astype(dtype)) / dtype(255.0)
