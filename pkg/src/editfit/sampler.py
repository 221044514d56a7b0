"""Training-window sampling from before/after reference pairs."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .imgio import Image, make_coord_grid


@dataclass(frozen=True)
class ReferencePair:
    """A before/after edit example plus the coordinate grid of its pixels."""

    before: Image
    after: Image
    coords: np.ndarray = field(init=False)

    def __post_init__(self):
        if self.before.data.shape != self.after.data.shape:
            raise ValueError(
                f"before/after dimensions differ: {self.before.data.shape[:2]} vs "
                f"{self.after.data.shape[:2]}"
            )
        object.__setattr__(
            self, "coords", make_coord_grid(self.before.height, self.before.width)
        )


@dataclass
class WindowBatch:
    """B stacked n x n training windows, channel-first with batch second.

    rgb: (3, B, n, n), coords: (2, B, n, n), target: (3, B, n, n). The coord
    windows are exact sub-grids of the source coordinate field, so a trained
    model sees the same coordinate values at inference time.
    """

    rgb: np.ndarray
    coords: np.ndarray
    target: np.ndarray

    @property
    def count(self) -> int:
        return self.rgb.shape[1]

    @property
    def window(self) -> int:
        return self.rgb.shape[2]


def sample_windows(
    pairs: list[ReferencePair],
    count: int,
    window: int,
    rng: np.random.Generator,
) -> WindowBatch:
    """Draw `count` windows of size `window` uniformly from the pairs.

    Each window picks a pair uniformly, then a center uniformly over the
    positions where the window fits fully inside the image. Windows never
    extend past image borders; inference handles borders via replicate
    padding instead.
    """
    if window % 2 != 1:
        raise ValueError(f"window size must be odd, got {window}")
    if count < 1:
        raise ValueError(f"window count must be >= 1, got {count}")
    if not pairs:
        raise ValueError("at least one reference pair is required")
    r = (window - 1) // 2
    for i, pair in enumerate(pairs):
        if min(pair.before.height, pair.before.width) < window:
            raise ValueError(
                f"pair {i} is {pair.before.height}x{pair.before.width}, smaller than "
                f"window {window}"
            )

    # Channel-first per-pair planes, built once per call.
    befores = [np.ascontiguousarray(p.before.data.transpose(2, 0, 1), dtype=np.float32) for p in pairs]
    afters = [np.ascontiguousarray(p.after.data.transpose(2, 0, 1), dtype=np.float32) for p in pairs]

    pair_idx = rng.integers(0, len(pairs), size=count)
    rgb = np.empty((3, count, window, window), dtype=np.float32)
    coords = np.empty((2, count, window, window), dtype=np.float32)
    target = np.empty((3, count, window, window), dtype=np.float32)
    for b in range(count):
        k = int(pair_idx[b])
        h, w = pairs[k].before.height, pairs[k].before.width
        cy = int(rng.integers(r, h - r))
        cx = int(rng.integers(r, w - r))
        ys, xs = slice(cy - r, cy + r + 1), slice(cx - r, cx + r + 1)
        rgb[:, b] = befores[k][:, ys, xs]
        coords[:, b] = pairs[k].coords[:, ys, xs]
        target[:, b] = afters[k][:, ys, xs]
    return WindowBatch(rgb=rgb, coords=coords, target=target)
