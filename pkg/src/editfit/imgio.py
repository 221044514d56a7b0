"""Image loading/saving and coordinate grids.

Pixels live in linear light: files store sRGB-encoded integers, the working
representation is float32 RGB in [0, 1] after the IEC 61966-2-1 piecewise
decode. Supported containers are PNG (8/16-bit truecolor, with or without
alpha) and binary PPM (P6) for reading, and 8-bit RGB PNG for writing. The
codecs are self-contained on purpose: 16-bit-per-channel RGB PNGs are not
reliably preserved by the usual library shortcuts.
"""

from __future__ import annotations

import os
import struct
import zlib
from dataclasses import dataclass

import numpy as np

_PNG_SIGNATURE = b"\x89PNG\r\n\x1a\n"


class ImageFormatError(ValueError):
    """Raised when a file is syntactically readable but uses an unsupported
    format feature (bit depth, color type, interlacing, ...)."""


@dataclass(frozen=True)
class Image:
    """An H x W x 3 array of linear-light floats in [0, 1]."""

    data: np.ndarray

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    def __post_init__(self):
        d = self.data
        if d.ndim != 3 or d.shape[2] != 3:
            raise ValueError(f"image data must be HxWx3, got shape {d.shape}")
        if d.shape[0] < 1 or d.shape[1] < 1:
            raise ValueError(f"image dimensions must be >= 1, got {d.shape[:2]}")

    def validate(self) -> "Image":
        if not np.all(np.isfinite(self.data)):
            raise ValueError("image contains non-finite values")
        if self.data.min() < 0.0 or self.data.max() > 1.0:
            raise ValueError("image values outside [0, 1]")
        return self


def srgb_to_linear(v: np.ndarray) -> np.ndarray:
    """IEC 61966-2-1 piecewise EOTF, encoded [0,1] -> linear [0,1]."""
    v = np.asarray(v, dtype=np.float64)
    return np.where(v <= 0.04045, v / 12.92, ((v + 0.055) / 1.055) ** 2.4)


def linear_to_srgb(v: np.ndarray) -> np.ndarray:
    """Inverse of :func:`srgb_to_linear` on [0,1]."""
    v = np.asarray(v, dtype=np.float64)
    return np.where(v <= 0.0031308, v * 12.92, 1.055 * v ** (1.0 / 2.4) - 0.055)


# ---------------------------------------------------------------------------
# PNG
# ---------------------------------------------------------------------------

def _paeth(a: int, b: int, c: int) -> int:
    p = a + b - c
    pa, pb, pc = abs(p - a), abs(p - b), abs(p - c)
    if pa <= pb and pa <= pc:
        return a
    if pb <= pc:
        return b
    return c


def _defilter(raw: bytes, height: int, stride: int, bpp: int) -> np.ndarray:
    """Undo per-scanline PNG filtering; returns (height, stride) uint8."""
    if len(raw) != height * (stride + 1):
        raise ImageFormatError(
            f"decompressed PNG data has {len(raw)} bytes, expected {height * (stride + 1)}"
        )
    rows = np.frombuffer(raw, dtype=np.uint8).reshape(height, stride + 1)
    out = np.zeros((height, stride), dtype=np.uint8)
    prior = np.zeros(stride, dtype=np.uint8)
    for y in range(height):
        ftype = int(rows[y, 0])
        cur = rows[y, 1:].copy()
        if ftype == 0:
            pass
        elif ftype == 1:  # Sub: per byte-lane running sum, modulo 256
            lanes = cur.reshape(-1, bpp).astype(np.uint64)
            cur = (np.cumsum(lanes, axis=0) % 256).astype(np.uint8).reshape(-1)
        elif ftype == 2:  # Up
            cur = (cur.astype(np.uint16) + prior) % 256
            cur = cur.astype(np.uint8)
        elif ftype == 3:  # Average
            c = cur.astype(np.int32)
            p = prior.astype(np.int32)
            rec = np.zeros(stride, dtype=np.int32)
            for x in range(stride):
                left = rec[x - bpp] if x >= bpp else 0
                rec[x] = (c[x] + ((left + p[x]) >> 1)) & 0xFF
            cur = rec.astype(np.uint8)
        elif ftype == 4:  # Paeth
            c = cur.astype(np.int32)
            p = prior.astype(np.int32)
            rec = np.zeros(stride, dtype=np.int32)
            for x in range(stride):
                left = rec[x - bpp] if x >= bpp else 0
                upleft = p[x - bpp] if x >= bpp else 0
                rec[x] = (c[x] + _paeth(int(left), int(p[x]), int(upleft))) & 0xFF
            cur = rec.astype(np.uint8)
        else:
            raise ImageFormatError(f"unknown PNG filter type {ftype}")
        out[y] = cur
        prior = out[y]
    return out


def _read_png(data: bytes) -> np.ndarray:
    """Decode a PNG byte string to (H, W, channels) uint8 or uint16."""
    if data[:8] != _PNG_SIGNATURE:
        raise ImageFormatError("not a PNG file (bad signature)")
    pos = 8
    ihdr = None
    idat = bytearray()
    while pos + 8 <= len(data):
        (length,) = struct.unpack(">I", data[pos : pos + 4])
        ctype = data[pos + 4 : pos + 8]
        chunk = data[pos + 8 : pos + 8 + length]
        pos += 12 + length
        if ctype == b"IHDR":
            ihdr = chunk
        elif ctype == b"IDAT":
            idat.extend(chunk)
        elif ctype == b"IEND":
            break
    if ihdr is None or len(ihdr) != 13:
        raise ImageFormatError("PNG missing IHDR chunk")
    width, height, bitdepth, colortype, comp, filt, interlace = struct.unpack(
        ">IIBBBBB", ihdr
    )
    if comp != 0 or filt != 0:
        raise ImageFormatError(f"unsupported PNG compression/filter method {comp}/{filt}")
    if interlace != 0:
        raise ImageFormatError("unsupported PNG interlace method (Adam7)")
    if colortype not in (2, 6):
        raise ImageFormatError(
            f"unsupported PNG color type {colortype} (only truecolor RGB/RGBA)"
        )
    if bitdepth not in (8, 16):
        raise ImageFormatError(f"unsupported PNG bit depth {bitdepth}")
    channels = 3 if colortype == 2 else 4
    sample_bytes = bitdepth // 8
    bpp = channels * sample_bytes
    stride = width * bpp
    try:
        raw = zlib.decompress(bytes(idat))
    except zlib.error as exc:
        raise ImageFormatError(f"corrupt PNG pixel data: {exc}") from None
    flat = _defilter(raw, height, stride, bpp)
    if bitdepth == 8:
        return flat.reshape(height, width, channels)
    arr = flat.reshape(height, -1).view(np.dtype(">u2")).astype(np.uint16)
    return arr.reshape(height, width, channels)


def _png_chunk(ctype: bytes, payload: bytes) -> bytes:
    crc = zlib.crc32(ctype + payload) & 0xFFFFFFFF
    return struct.pack(">I", len(payload)) + ctype + payload + struct.pack(">I", crc)


def _write_png(arr: np.ndarray) -> bytes:
    """Encode (H, W, 3) uint8 as an 8-bit truecolor PNG byte string."""
    height, width, _ = arr.shape
    ihdr = struct.pack(">IIBBBBB", width, height, 8, 2, 0, 0, 0)
    scanlines = np.zeros((height, 1 + width * 3), dtype=np.uint8)
    scanlines[:, 1:] = arr.reshape(height, width * 3)
    idat = zlib.compress(scanlines.tobytes(), 6)
    return (
        _PNG_SIGNATURE
        + _png_chunk(b"IHDR", ihdr)
        + _png_chunk(b"IDAT", idat)
        + _png_chunk(b"IEND", b"")
    )


# ---------------------------------------------------------------------------
# PPM (P6)
# ---------------------------------------------------------------------------

def _read_ppm(data: bytes) -> np.ndarray:
    if data[:2] != b"P6":
        raise ImageFormatError("not a binary PPM (P6) file")

    # Header tokens may be separated by whitespace and '#' comments.
    pos = 2
    fields = []
    while len(fields) < 3:
        while pos < len(data) and data[pos : pos + 1].isspace():
            pos += 1
        if pos < len(data) and data[pos : pos + 1] == b"#":
            while pos < len(data) and data[pos] != 0x0A:
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos : pos + 1].isspace():
            pos += 1
        if start == pos:
            raise ImageFormatError("truncated PPM header")
        fields.append(int(data[start:pos]))
    pos += 1  # single whitespace byte after maxval
    width, height, maxval = fields
    if maxval < 1 or maxval > 65535:
        raise ImageFormatError(f"unsupported PPM maxval {maxval}")
    count = width * height * 3
    if maxval < 256:
        pix = np.frombuffer(data, dtype=np.uint8, count=count, offset=pos)
    else:
        pix = np.frombuffer(data, dtype=np.dtype(">u2"), count=count, offset=pos)
    arr = pix.reshape(height, width, 3).astype(np.float64) / float(maxval)
    return arr


# ---------------------------------------------------------------------------
# Public API
# ---------------------------------------------------------------------------

def load_image(path: str | os.PathLike) -> Image:
    """Load a PNG or PPM file into linear-light floats.

    Alpha channels are discarded. 8-bit sample v maps to v/255 and 16-bit
    analogously before the sRGB decode.
    """
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:8] == _PNG_SIGNATURE:
        arr = _read_png(data)
        peak = 255.0 if arr.dtype == np.uint8 else 65535.0
        encoded = arr[:, :, :3].astype(np.float64) / peak
    elif data[:2] == b"P6":
        encoded = _read_ppm(data)
    else:
        raise ImageFormatError(f"unrecognized image format in {path!r}")
    linear = srgb_to_linear(encoded).astype(np.float32)
    return Image(np.clip(linear, 0.0, 1.0))


def save_image(image: Image, path: str | os.PathLike) -> None:
    """Write an Image as 8-bit sRGB PNG.

    Values are clamped to [0, 1], encoded, and quantized with
    round-half-away-from-zero.
    """
    clamped = np.clip(image.data.astype(np.float64), 0.0, 1.0)
    encoded = linear_to_srgb(clamped)
    quantized = np.floor(encoded * 255.0 + 0.5).astype(np.uint8)
    blob = _write_png(quantized)
    with open(path, "wb") as fh:
        fh.write(blob)


def make_coord_grid(height: int, width: int) -> np.ndarray:
    """Normalized coordinate field, shape (2, H, W) float32.

    Channel 0 is x, channel 1 is y, both spanning [-1, 1] with pixel (0, 0)
    at (-1, -1). A singleton axis maps to coordinate 0. The numerator
    ``2*i - (n-1)`` is an exact integer, so mirrored indices negate exactly.
    """
    if height < 1 or width < 1:
        raise ValueError(f"grid dimensions must be >= 1, got {height}x{width}")
    if width > 1:
        xs = (2.0 * np.arange(width, dtype=np.float64) - (width - 1)) / (width - 1)
    else:
        xs = np.zeros(1, dtype=np.float64)
    if height > 1:
        ys = (2.0 * np.arange(height, dtype=np.float64) - (height - 1)) / (height - 1)
    else:
        ys = np.zeros(1, dtype=np.float64)
    grid = np.empty((2, height, width), dtype=np.float32)
    grid[0] = xs[np.newaxis, :]
    grid[1] = ys[:, np.newaxis]
    return grid
