"""Full-image application of a trained model via halo-tiled evaluation.

Tiles carry a replicate halo wide enough for the receptive field of the
context block, so stitched output is identical (to float tolerance) to a
whole-image pass regardless of tile size. Coordinates always come from the
full-image grid: position-dependent edits (vignettes) would break with
per-tile coordinates.
"""

from __future__ import annotations

import numpy as np

from .imgio import Image, make_coord_grid
from .model import ModelParams, forward_model


def receptive_halo(params: ModelParams) -> int:
    cfg = params.config
    return (cfg.dw_kernel - 1) // 2 if cfg.use_context else 0


def apply_model(params: ModelParams, image: Image, tile: int = 256) -> Image:
    """Run the model over an image tile by tile; output is clamped to [0,1]."""
    halo = receptive_halo(params)
    if tile < 2 * halo + 1:
        raise ValueError(f"tile size {tile} too small for halo {halo}")
    height, width = image.height, image.width
    rgb = np.ascontiguousarray(image.data.transpose(2, 0, 1), dtype=np.float32)
    coords = make_coord_grid(height, width)
    pad = [(0, 0), (halo, halo), (halo, halo)]
    rgb_p = np.pad(rgb, pad, mode="edge")
    coords_p = np.pad(coords, pad, mode="edge")

    out = np.empty((3, height, width), dtype=np.float32)
    for y0 in range(0, height, tile):
        y1 = min(y0 + tile, height)
        for x0 in range(0, width, tile):
            x1 = min(x0 + tile, width)
            ys = slice(y0, y1 + 2 * halo)
            xs = slice(x0, x1 + 2 * halo)
            result = forward_model(params, rgb_p[:, ys, xs], coords_p[:, ys, xs]).data
            if halo:
                result = result[:, halo:-halo, halo:-halo]
            out[:, y0:y1, x0:x1] = result
    np.clip(out, 0.0, 1.0, out=out)
    return Image(np.ascontiguousarray(out.transpose(1, 2, 0)))
