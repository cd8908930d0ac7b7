"""Image comparison scores and benchmark aggregates.

PSNR and SSIM are computed here on 8-bit buffers. LPIPS needs a pretrained
network, so it is delegated to an external command that prints one number.
"""
from __future__ import annotations

import math
import re
import shlex
import subprocess
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from PIL import Image

PEAK = 255.0
INF_PSNR_REPORTED = 100.0

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03
BT601 = (0.299, 0.587, 0.114)

_DECIMAL = re.compile(r"[+-]?(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?")


class MetricError(Exception):
    pass


class ShapeMismatch(MetricError):
    pass


class TooSmall(MetricError):
    pass


class PluginMissing(MetricError):
    pass


class PluginMalformedOutput(MetricError):
    pass


class EmptyInput(MetricError):
    pass


@dataclass(frozen=True, eq=False)
class ImageBuffer:
    """8-bit image stored as a ``(height, width, channels)`` uint8 array."""

    data: np.ndarray

    def __post_init__(self):
        a = np.asarray(self.data)
        if a.ndim == 2:
            a = a[:, :, None]
        if a.ndim != 3 or a.shape[2] not in (1, 3) or a.shape[0] < 1 or a.shape[1] < 1:
            raise ValueError(f"unsupported image shape {a.shape}")
        if a.dtype != np.uint8:
            if np.any((a < 0) | (a > 255)) or np.any(a != np.round(a)):
                raise ValueError("samples must be integers in [0, 255]")
            a = a.astype(np.uint8)
        a = np.ascontiguousarray(a)
        a.setflags(write=False)
        object.__setattr__(self, "data", a)

    @classmethod
    def from_samples(cls, width: int, height: int, channels: int, samples: Sequence[int]) -> "ImageBuffer":
        if len(samples) != width * height * channels:
            raise ValueError("sample count does not match width x height x channels")
        return cls(np.asarray(samples, dtype=np.uint8).reshape(height, width, channels))

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def channels(self) -> int:
        return self.data.shape[2]

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.data.shape

    def __eq__(self, other):
        return isinstance(other, ImageBuffer) and np.array_equal(self.data, other.data)

    def to_rgb(self) -> "ImageBuffer":
        return self if self.channels == 3 else ImageBuffer(np.repeat(self.data, 3, axis=2))

    def luma(self) -> np.ndarray:
        x = self.data.astype(np.float64)
        if self.channels == 1:
            return x[:, :, 0]
        r, g, b = BT601
        return r * x[:, :, 0] + g * x[:, :, 1] + b * x[:, :, 2]


def load_png(path: str | Path) -> ImageBuffer:
    """Read an image file as 8-bit gray or RGB; alpha is dropped."""
    with Image.open(path) as im:
        if im.mode in ("L", "1", "I;16", "I", "F"):
            im = im.convert("L")
        elif im.mode == "LA":
            im = im.convert("L")
        else:
            im = im.convert("RGB")
        return ImageBuffer(np.array(im))


def save_png(img: ImageBuffer, path: str | Path) -> None:
    data = img.data[:, :, 0] if img.channels == 1 else img.data
    Image.fromarray(data).save(path)


def resize_nearest(img: ImageBuffer, width: int, height: int) -> ImageBuffer:
    rows = (np.arange(height) * img.height // height).astype(int)
    cols = (np.arange(width) * img.width // width).astype(int)
    return ImageBuffer(img.data[rows][:, cols])


def harmonize(a: ImageBuffer, b: ImageBuffer, resize: bool = False) -> tuple[ImageBuffer, ImageBuffer]:
    """Bring two decoded files to a comparable shape.

    Gray is promoted to RGB when the other image is RGB. With ``resize`` the
    larger image is shrunk to the smaller one by nearest neighbour; otherwise
    differing sizes raise :class:`ShapeMismatch`.
    """
    if a.channels != b.channels:
        a, b = a.to_rgb(), b.to_rgb()
    if (a.width, a.height) != (b.width, b.height):
        if not resize:
            raise ShapeMismatch(f"{a.width}x{a.height} vs {b.width}x{b.height}")
        if a.width * a.height >= b.width * b.height:
            a = resize_nearest(a, b.width, b.height)
        else:
            b = resize_nearest(b, a.width, a.height)
    return a, b


def _check_same(a: ImageBuffer, b: ImageBuffer) -> None:
    if a.shape != b.shape:
        raise ShapeMismatch(f"{a.shape} vs {b.shape}")


def mse(a: ImageBuffer, b: ImageBuffer) -> float:
    _check_same(a, b)
    d = a.data.astype(np.float64) - b.data.astype(np.float64)
    return float(np.mean(d * d))


def psnr(a: ImageBuffer, b: ImageBuffer) -> float:
    """Peak signal-to-noise ratio in dB; ``math.inf`` for identical images."""
    err = mse(a, b)
    if err == 0.0:
        return math.inf
    return 10.0 * math.log10(PEAK * PEAK / err)


def gaussian_window(size: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA) -> np.ndarray:
    x = np.arange(size, dtype=np.float64) - (size - 1) / 2.0
    g = np.exp(-(x * x) / (2.0 * sigma * sigma))
    return g / g.sum()


def _filter_valid(x: np.ndarray, g: np.ndarray) -> np.ndarray:
    n = len(g)
    x = sliding_window_view(x, n, axis=0) @ g
    return sliding_window_view(x, n, axis=1) @ g


def ssim(a: ImageBuffer, b: ImageBuffer) -> float:
    """Single-scale SSIM on BT.601 luma.

    11x11 Gaussian window (sigma 1.5), K1=0.01, K2=0.03, range 255, averaged
    over every position where the window fits inside the image.
    """
    _check_same(a, b)
    if min(a.width, a.height) < SSIM_WINDOW:
        raise TooSmall(f"images must be at least {SSIM_WINDOW}px on each side")
    x, y = a.luma(), b.luma()
    g = gaussian_window()
    c1 = (SSIM_K1 * PEAK) ** 2
    c2 = (SSIM_K2 * PEAK) ** 2

    mu_x = _filter_valid(x, g)
    mu_y = _filter_valid(y, g)
    var_x = _filter_valid(x * x, g) - mu_x * mu_x
    var_y = _filter_valid(y * y, g) - mu_y * mu_y
    cov = _filter_valid(x * y, g) - mu_x * mu_y

    num = (2.0 * mu_x * mu_y + c1) * (2.0 * cov + c2)
    den = (mu_x * mu_x + mu_y * mu_y + c1) * (var_x + var_y + c2)
    return float(np.mean(num / den))


def lpips(a_path: str | Path, b_path: str | Path, plugin: str | None, timeout: float = 600.0) -> float:
    """Run the external LPIPS scorer ``plugin`` (a command with ``{A}``/``{B}``)."""
    if not plugin or not plugin.strip():
        raise PluginMissing("no LPIPS plugin configured")
    argv = [tok.replace("{A}", str(a_path)).replace("{B}", str(b_path)) for tok in shlex.split(plugin)]
    try:
        proc = subprocess.run(argv, capture_output=True, text=True, timeout=timeout, check=False)
    except FileNotFoundError as e:
        raise PluginMissing(f"LPIPS plugin not found: {argv[0]}") from e
    except subprocess.TimeoutExpired as e:
        raise PluginMalformedOutput(f"LPIPS plugin timed out after {timeout}s") from e
    out = proc.stdout.strip()
    if proc.returncode != 0:
        raise PluginMalformedOutput(f"LPIPS plugin exited {proc.returncode}: {proc.stderr.strip()[:200]}")
    if not _DECIMAL.fullmatch(out):
        raise PluginMalformedOutput(f"LPIPS plugin printed {out[:80]!r}, expected one number")
    value = float(out)
    if not 0.0 <= value <= 1.0:
        raise PluginMalformedOutput(f"LPIPS value {value} outside [0, 1]")
    return value


@dataclass(frozen=True)
class TaskScore:
    task_id: str
    passed: bool
    ssim: float | None = None
    psnr: float | None = None
    lpips: float | None = None

    def __post_init__(self):
        if not self.passed and any(v is not None for v in (self.ssim, self.psnr, self.lpips)):
            raise ValueError(f"{self.task_id}: image metrics are only recorded for passing tasks")
        if self.ssim is not None and not -1.0 < self.ssim <= 1.0 + 1e-9:
            raise ValueError(f"ssim {self.ssim} out of range")
        if self.psnr is not None and self.psnr < 0:
            raise ValueError(f"psnr {self.psnr} is negative")
        if self.lpips is not None and not 0.0 <= self.lpips <= 1.0:
            raise ValueError(f"lpips {self.lpips} out of range")


@dataclass(frozen=True)
class AggregateScores:
    n_tasks: int
    n_passed: int
    pass_at_1: float
    mean_ssim: float | None
    mean_psnr: float | None
    mean_lpips: float | None
    scaled_ssim: float
    scaled_psnr: float
    scaled_lpips: float | None


def _mean(values) -> float | None:
    values = [v for v in values if v is not None]
    return sum(values) / len(values) if values else None


def scale(pass_at_1: float, mean_ssim, mean_psnr, mean_lpips) -> tuple[float, float, float | None]:
    """Spread image metrics over all tasks by the fraction that passed."""
    frac = pass_at_1 / 100
    s_ssim = frac * mean_ssim if mean_ssim is not None else 0.0
    s_psnr = frac * mean_psnr if mean_psnr is not None else 0.0
    if mean_lpips is not None:
        s_lpips = 1.0 - (1.0 - mean_lpips) * pass_at_1 / 100
    else:
        s_lpips = 1.0 if pass_at_1 == 0 else None
    return s_ssim, s_psnr, s_lpips


def aggregate(scores: Sequence[TaskScore]) -> AggregateScores:
    if not scores:
        raise EmptyInput("no task scores to aggregate")
    passed = [s for s in scores if s.passed]
    pass_at_1 = 100.0 * len(passed) / len(scores)
    mean_ssim = _mean(s.ssim for s in passed)
    mean_psnr = _mean(INF_PSNR_REPORTED if s.psnr == math.inf else s.psnr for s in passed)
    mean_lpips = _mean(s.lpips for s in passed)
    s_ssim, s_psnr, s_lpips = scale(pass_at_1, mean_ssim, mean_psnr, mean_lpips)
    return AggregateScores(len(scores), len(passed), pass_at_1, mean_ssim, mean_psnr, mean_lpips, s_ssim, s_psnr, s_lpips)
