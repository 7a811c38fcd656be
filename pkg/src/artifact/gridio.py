"""File and byte-level serialization for grids, masks, and images.

``.lat`` format: magic bytes ``LAT1``, three little-endian uint32 (C, H, W),
then C*H*W IEEE-754 float32 little-endian in (channel, row, column)
row-major order.

Masks serialize as 8-bit single-channel PNG with values {0, 255}.
Images serialize as 8-bit PNG; in memory they are float32 grids in [-1, 1].
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import FormatError, IOFailure
from .grids import BinaryMask, LatentGrid, ScoreMap

LAT_MAGIC = b"LAT1"
_HEADER = struct.Struct("<III")


def _open_png(path: str | Path) -> Image.Image:
    try:
        return Image.open(path)
    except Image.UnidentifiedImageError as exc:
        raise FormatError(f"{path}: not a PNG image: {exc}") from exc
    except OSError as exc:
        raise IOFailure(f"{path}: cannot read: {exc}") from exc


def lat_to_bytes(grid: LatentGrid) -> bytes:
    header = LAT_MAGIC + _HEADER.pack(grid.channels, grid.height, grid.width)
    return header + grid.data.astype("<f4").tobytes(order="C")


def lat_from_bytes(buf: bytes, offset: int = 0) -> tuple[LatentGrid, int]:
    """Parse one ``.lat`` record starting at ``offset``; returns (grid, end offset)."""
    if len(buf) - offset < 16:
        raise FormatError("latent record truncated before header")
    if buf[offset : offset + 4] != LAT_MAGIC:
        raise FormatError("bad latent magic bytes")
    c, h, w = _HEADER.unpack_from(buf, offset + 4)
    if c == 0 or h == 0 or w == 0:
        raise FormatError(f"latent header has zero dimension: {(c, h, w)}")
    n = c * h * w
    end = offset + 16 + 4 * n
    if len(buf) < end:
        raise FormatError(
            f"latent record truncated: header claims {n} floats, "
            f"{(len(buf) - offset - 16) // 4} present"
        )
    data = np.frombuffer(buf, dtype="<f4", count=n, offset=offset + 16)
    return LatentGrid(data.reshape(c, h, w)), end


def write_lat(grid: LatentGrid, path: str | Path) -> None:
    Path(path).write_bytes(lat_to_bytes(grid))


def read_lat(path: str | Path) -> LatentGrid:
    try:
        buf = Path(path).read_bytes()
    except OSError as exc:
        raise IOFailure(f"{path}: cannot read: {exc}") from exc
    grid, end = lat_from_bytes(buf)
    if end != len(buf):
        raise FormatError(f"{path}: {len(buf) - end} trailing bytes after latent record")
    return grid


def write_mask_png(mask: BinaryMask, path: str | Path) -> None:
    img = Image.fromarray(mask.bits * np.uint8(255), mode="L")
    img.save(path, format="PNG")


def read_mask_png(path: str | Path) -> BinaryMask:
    with _open_png(path) as img:
        if img.mode != "L":
            img = img.convert("L")
        arr = np.asarray(img, dtype=np.uint8)
    bad = ~((arr == 0) | (arr == 255))
    if bad.any():
        raise FormatError(f"{path}: mask PNG has {int(bad.sum())} cells outside {{0, 255}}")
    return BinaryMask((arr == 255).astype(np.uint8))


def read_score_png(path: str | Path) -> ScoreMap:
    """8-bit grayscale PNG mapped linearly onto [0, 1]."""
    with _open_png(path) as img:
        if img.mode != "L":
            img = img.convert("L")
        arr = np.asarray(img, dtype=np.float32) / 255.0
    return ScoreMap(arr)


def write_image_png(grid: LatentGrid, path: str | Path) -> None:
    """Store a [-1, 1] float grid as an 8-bit PNG (1 or 3 channels)."""
    if grid.channels not in (1, 3):
        raise FormatError(f"image PNG needs 1 or 3 channels, got {grid.channels}")
    scaled = np.rint((np.clip(grid.data, -1.0, 1.0) + 1.0) * 127.5).astype(np.uint8)
    if grid.channels == 1:
        img = Image.fromarray(scaled[0], mode="L")
    else:
        img = Image.fromarray(np.moveaxis(scaled, 0, 2), mode="RGB")
    img.save(path, format="PNG")


def read_image_png(path: str | Path) -> LatentGrid:
    """Load an 8-bit PNG as a float grid in [-1, 1]."""
    with _open_png(path) as img:
        if img.mode == "L":
            arr = np.asarray(img, dtype=np.float32)[None, :, :]
        else:
            if img.mode != "RGB":
                img = img.convert("RGB")
            arr = np.moveaxis(np.asarray(img, dtype=np.float32), 2, 0)
    return LatentGrid(arr / np.float32(127.5) - np.float32(1.0))
