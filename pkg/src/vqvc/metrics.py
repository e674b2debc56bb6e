"""Quality and rate metrics: PSNR, MS-SSIM, bits-per-pixel, BD-rate."""

from __future__ import annotations

import math

import numpy as np
from scipy.signal import convolve2d

from .bitstream import GopBitstream
from .errors import ConfigError, ShapeError

MS_SSIM_WEIGHTS = (0.0448, 0.2856, 0.3001, 0.2363, 0.1333)
_WIN = 11
_SIGMA = 1.5
# 5 dyadic scales with an 11x11 window need at least 176 pixels per side
MS_SSIM_MIN_EXTENT = (_WIN - 1) * 2 ** (len(MS_SSIM_WEIGHTS) - 1) + 16


def psnr(a: np.ndarray, b: np.ndarray) -> float:
    """10 * log10(1 / MSE) for [0,1] images; inf when identical."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ShapeError(f"extent mismatch {a.shape} vs {b.shape}")
    mse = np.mean((a - b) ** 2)
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(1.0 / mse)


def _gaussian_window(size=_WIN, sigma=_SIGMA):
    r = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-(r ** 2) / (2 * sigma ** 2))
    w = np.outer(g, g)
    return w / w.sum()


def _ssim_channel(a, b, k1=0.01, k2=0.03):
    """Mean SSIM and mean contrast-structure term for one channel."""
    win = _gaussian_window()
    c1, c2 = k1 ** 2, k2 ** 2
    mu_a = convolve2d(a, win, mode="valid")
    mu_b = convolve2d(b, win, mode="valid")
    saa = convolve2d(a * a, win, mode="valid") - mu_a ** 2
    sbb = convolve2d(b * b, win, mode="valid") - mu_b ** 2
    sab = convolve2d(a * b, win, mode="valid") - mu_a * mu_b
    cs = (2 * sab + c2) / (saa + sbb + c2)
    lum = (2 * mu_a * mu_b + c1) / (mu_a ** 2 + mu_b ** 2 + c1)
    return float((lum * cs).mean()), float(cs.mean())


def _downsample_half(x):
    h, w = x.shape
    h2, w2 = h - h % 2, w - w % 2
    x = x[:h2, :w2]
    return 0.25 * (x[0::2, 0::2] + x[0::2, 1::2] + x[1::2, 0::2] + x[1::2, 1::2])


def ms_ssim(a: np.ndarray, b: np.ndarray) -> float:
    """Multi-scale SSIM with the standard 5-scale weights, averaged over
    channels for [C, H, W] (or single-plane [H, W]) inputs in [0, 1]."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ShapeError(f"extent mismatch {a.shape} vs {b.shape}")
    if a.ndim == 2:
        a, b = a[None], b[None]
    if a.ndim != 3:
        raise ShapeError(f"expected [C, H, W] images, got {a.shape}")
    if min(a.shape[1:]) < MS_SSIM_MIN_EXTENT:
        raise ConfigError(
            f"extents {a.shape[1:]} below the {MS_SSIM_MIN_EXTENT}-pixel "
            "minimum for 5 scales")
    scores = []
    for ch in range(a.shape[0]):
        xa, xb = a[ch], b[ch]
        value = 1.0
        for level, weight in enumerate(MS_SSIM_WEIGHTS):
            ssim_mean, cs_mean = _ssim_channel(xa, xb)
            last = level == len(MS_SSIM_WEIGHTS) - 1
            term = ssim_mean if last else cs_mean
            value *= max(term, 0.0) ** weight
            if not last:
                xa, xb = _downsample_half(xa), _downsample_half(xb)
        scores.append(value)
    return float(np.mean(scores))


def bpp(stream: GopBitstream) -> float:
    """Payload bits per pixel (header overhead excluded by design)."""
    pixels = stream.width * stream.height * len(stream.frames)
    return stream.payload_bits() / pixels


def bd_rate(curve_a, curve_b) -> float:
    """Average bitrate difference of curve_b relative to curve_a, percent.

    Curves are lists of (bpp, quality) with at least 4 points each; a cubic
    polynomial of log-rate against quality is integrated over the shared
    quality interval.  Positive means curve_b spends more bits at equal
    quality.
    """
    ra, qa = _curve_arrays(curve_a)
    rb, qb = _curve_arrays(curve_b)
    lo = max(qa.min(), qb.min())
    hi = min(qa.max(), qb.max())
    if hi <= lo:
        raise ConfigError("quality ranges of the two curves do not overlap")
    pa = np.polyfit(qa, np.log(ra), 3)
    pb = np.polyfit(qb, np.log(rb), 3)
    int_a = np.polyval(np.polyint(pa), hi) - np.polyval(np.polyint(pa), lo)
    int_b = np.polyval(np.polyint(pb), hi) - np.polyval(np.polyint(pb), lo)
    avg_diff = (int_b - int_a) / (hi - lo)
    return float((math.exp(avg_diff) - 1.0) * 100.0)


def _curve_arrays(curve):
    pts = sorted((float(q), float(r)) for r, q in curve)
    if len(pts) < 4:
        raise ConfigError("BD-rate needs at least 4 rate points per curve")
    q = np.array([p[0] for p in pts])
    r = np.array([p[1] for p in pts])
    if np.any(np.diff(q) <= 0) or np.any(r <= 0):
        raise ConfigError("curves must have strictly increasing quality "
                          "and positive rates")
    return r, q
