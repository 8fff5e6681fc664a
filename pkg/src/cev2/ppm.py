"""8-bit RGB rasters and the netpbm codecs.

Readers accept binary P6 (RGB) and P5 (grayscale, promoted to RGB) with
maxval up to 255; the writer always emits P6 maxval 255. Pixels live in a
(height, width, 3) uint8 array. resize_bilinear is the loader's resize
policy: center-aligned sampling with edge clamping.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass
class Raster:
    pixels: np.ndarray  # (H, W, 3) uint8

    def __post_init__(self):
        px = np.asarray(self.pixels)
        if px.dtype != np.uint8 or px.ndim != 3 or px.shape[2] != 3:
            raise ValueError(f"Raster needs (H, W, 3) uint8 pixels, got {px.dtype} {px.shape}")
        if px.shape[0] < 1 or px.shape[1] < 1:
            raise ValueError(f"Raster dims must be >= 1, got {px.shape[:2]}")
        self.pixels = px

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]


def _header_tokens(blob: bytes, count: int) -> tuple[list[bytes], int]:
    """Read `count` whitespace-separated header tokens, honoring # comments.
    Returns (tokens, offset just past the single whitespace after the last)."""
    tokens: list[bytes] = []
    i = 0
    n = len(blob)
    while len(tokens) < count:
        while i < n and blob[i:i + 1].isspace():
            i += 1
        if i < n and blob[i:i + 1] == b"#":
            while i < n and blob[i] != 0x0A:
                i += 1
            continue
        if i >= n:
            raise ValueError("truncated netpbm header")
        start = i
        while i < n and not blob[i:i + 1].isspace() and blob[i:i + 1] != b"#":
            i += 1
        tokens.append(blob[start:i])
    if i >= n or not blob[i:i + 1].isspace():
        raise ValueError("netpbm header not terminated by whitespace")
    return tokens, i + 1


def read_image(path: str) -> Raster:
    """Decode a P6 or P5 file into an RGB raster."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:2] not in (b"P6", b"P5"):
        raise ValueError(f"{path}: unsupported netpbm magic {blob[:2]!r}")
    tokens, off = _header_tokens(blob, 4)
    magic = tokens[0]
    width, height, maxval = (int(t) for t in tokens[1:])
    if width < 1 or height < 1:
        raise ValueError(f"{path}: bad dimensions {width}x{height}")
    if not (0 < maxval <= 255):
        raise ValueError(f"{path}: unsupported maxval {maxval} (need 1..255)")
    channels = 3 if magic == b"P6" else 1
    need = width * height * channels
    payload = blob[off:off + need]
    if len(payload) != need:
        raise ValueError(f"{path}: payload has {len(payload)} bytes, expected {need}")
    arr = np.frombuffer(payload, dtype=np.uint8).reshape(height, width, channels)
    if maxval != 255:
        arr = np.rint(arr.astype(np.float64) * (255.0 / maxval)).astype(np.uint8)
    if channels == 1:
        arr = np.repeat(arr, 3, axis=2)
    return Raster(arr.copy())


def write_ppm(path: str, img: Raster) -> None:
    """Encode as binary P6, maxval 255."""
    header = f"P6\n{img.width} {img.height}\n255\n".encode("ascii")
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(np.ascontiguousarray(img.pixels).tobytes())


def resize_bilinear(img: Raster, out_h: int, out_w: int) -> Raster:
    """Bilinear resize with center-aligned sampling and edge clamping."""
    if out_h < 1 or out_w < 1:
        raise ValueError(f"resize target must be >= 1, got {out_h}x{out_w}")
    h, w = img.height, img.width
    if (out_h, out_w) == (h, w):
        return Raster(img.pixels.copy())
    sy = np.clip((np.arange(out_h) + 0.5) * (h / out_h) - 0.5, 0.0, h - 1.0)
    sx = np.clip((np.arange(out_w) + 0.5) * (w / out_w) - 0.5, 0.0, w - 1.0)
    y0 = np.floor(sy).astype(np.int64)
    x0 = np.floor(sx).astype(np.int64)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    fy = (sy - y0)[:, None, None]
    fx = (sx - x0)[None, :, None]
    px = img.pixels.astype(np.float64)
    top = px[y0][:, x0] * (1 - fx) + px[y0][:, x1] * fx
    bot = px[y1][:, x0] * (1 - fx) + px[y1][:, x1] * fx
    out = top * (1 - fy) + bot * fy
    return Raster(np.clip(np.rint(out), 0, 255).astype(np.uint8))
