"""Full-reference quality metrics and histogram-based reference selection.

All metrics operate on linear-light images with peak value 1.0. SSIM follows
the classic formulation: 11x11 Gaussian window with sigma 1.5, K1=0.01,
K2=0.03, computed per channel over the valid (fully inside) window positions
and averaged.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.ndimage import correlate1d

from .imgio import Image

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03


def psnr(a: Image, b: Image) -> float:
    """Peak signal-to-noise ratio in decibels, peak 1.0.

    Parameters
    ----------
    a, b : Image
      Images of identical dimensions.

    Returns
    -------
    float
      10*log10(1/MSE); positive infinity when the images are identical.
    """
    if a.data.shape != b.data.shape:
        raise ValueError(f"dimension mismatch: {a.data.shape} vs {b.data.shape}")
    diff = a.data.astype(np.float64) - b.data.astype(np.float64)
    mse = float(np.mean(diff * diff))
    if mse == 0.0:
        return float("inf")
    return 10.0 * np.log10(1.0 / mse)


def _gaussian_taps(n: int, sigma: float) -> np.ndarray:
    half = (n - 1) / 2.0
    x = np.arange(n, dtype=np.float64) - half
    g = np.exp(-(x * x) / (2.0 * sigma * sigma))
    return g / g.sum()


def _window_mean(plane: np.ndarray, taps: np.ndarray) -> np.ndarray:
    """Separable Gaussian-weighted mean, cropped to valid window positions."""
    half = len(taps) // 2
    tmp = correlate1d(plane, taps, axis=0, mode="constant")
    out = correlate1d(tmp, taps, axis=1, mode="constant")
    return out[half:-half, half:-half]


def ssim(a: Image, b: Image) -> float:
    """Mean structural similarity over channels, in [-1, 1].

    Parameters
    ----------
    a, b : Image
      Images of identical dimensions, min side >= 11.
    """
    if a.data.shape != b.data.shape:
        raise ValueError(f"dimension mismatch: {a.data.shape} vs {b.data.shape}")
    if min(a.height, a.width) < SSIM_WINDOW:
        raise ValueError(
            f"image {a.height}x{a.width} smaller than SSIM window {SSIM_WINDOW}"
        )
    taps = _gaussian_taps(SSIM_WINDOW, SSIM_SIGMA)
    c1 = SSIM_K1**2
    c2 = SSIM_K2**2
    scores = []
    for ch in range(3):
        x = a.data[:, :, ch].astype(np.float64)
        y = b.data[:, :, ch].astype(np.float64)
        mx = _window_mean(x, taps)
        my = _window_mean(y, taps)
        mxx = _window_mean(x * x, taps)
        myy = _window_mean(y * y, taps)
        mxy = _window_mean(x * y, taps)
        vx = mxx - mx * mx
        vy = myy - my * my
        cov = mxy - mx * my
        num = (2.0 * mx * my + c1) * (2.0 * cov + c2)
        den = (mx * mx + my * my + c1) * (vx + vy + c2)
        scores.append(float(np.mean(num / den)))
    return float(np.mean(scores))


@dataclass(frozen=True)
class Histogram3D:
    """Joint RGB occupancy histogram, normalized to total mass 1."""

    bins_per_channel: int
    counts: np.ndarray

    def __post_init__(self):
        b = self.bins_per_channel
        if self.counts.shape != (b, b, b):
            raise ValueError(f"counts must be ({b},{b},{b}), got {self.counts.shape}")


def color_hist3d(image: Image, bins: int = 8) -> Histogram3D:
    """Bin each pixel at floor(v*bins) per channel, clamped to bins-1."""
    if bins < 1:
        raise ValueError(f"bins must be >= 1, got {bins}")
    idx = np.minimum((image.data * bins).astype(np.int64), bins - 1)
    flat = (idx[:, :, 0] * bins + idx[:, :, 1]) * bins + idx[:, :, 2]
    counts = np.bincount(flat.ravel(), minlength=bins**3).astype(np.float64)
    counts /= counts.sum()
    return Histogram3D(bins, counts.reshape(bins, bins, bins))


def hist_distance(a: Histogram3D, b: Histogram3D) -> float:
    """L1 distance between two normalized histograms (twice total variation)."""
    if a.bins_per_channel != b.bins_per_channel:
        raise ValueError("histograms have different bin counts")
    return float(np.abs(a.counts - b.counts).sum())


def select_reference(input_image: Image, candidates, bins: int = 8) -> int:
    """Index of the candidate whose before-image color distribution is nearest.

    Parameters
    ----------
    input_image : Image
      The image about to be edited.
    candidates : sequence of ReferencePair
      Non-empty list; ties break toward the lowest index.
    """
    if not candidates:
        raise ValueError("candidate list is empty")
    target = color_hist3d(input_image, bins)
    best_idx = 0
    best_dist = float("inf")
    for i, cand in enumerate(candidates):
        d = hist_distance(target, color_hist3d(cand.before, bins))
        if d < best_dist:
            best_idx, best_dist = i, d
    return best_idx
