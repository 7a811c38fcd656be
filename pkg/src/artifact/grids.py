"""Dense latent grids, binary masks, score maps, and their element-wise algebra.

Grids store float32 values in (channel, row, column) row-major order, the
canonical order used by the ``.lat`` file format and the wire protocol.
All types are immutable values; operations return new instances.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ParameterError, ShapeError


def _frozen(arr: np.ndarray) -> np.ndarray:
    arr = np.ascontiguousarray(arr)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class LatentGrid:
    """A C x H x W grid of finite float32 values."""

    data: np.ndarray = field(repr=False)

    def __post_init__(self):
        arr = np.asarray(self.data)
        if arr.ndim != 3:
            raise ShapeError(f"latent grid must be 3-dimensional (C,H,W), got shape {arr.shape}")
        if arr.size == 0:
            raise ShapeError(f"latent grid must be non-empty, got shape {arr.shape}")
        arr = np.array(arr, dtype=np.float32, order="C")
        if not np.all(np.isfinite(arr)):
            raise ParameterError("latent grid contains non-finite values")
        object.__setattr__(self, "data", _frozen(arr))

    @property
    def channels(self) -> int:
        return self.data.shape[0]

    @property
    def height(self) -> int:
        return self.data.shape[1]

    @property
    def width(self) -> int:
        return self.data.shape[2]

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.data.shape

    def same_shape(self, other: "LatentGrid") -> bool:
        return self.shape == other.shape

    @staticmethod
    def zeros(channels: int, height: int, width: int) -> "LatentGrid":
        return LatentGrid(np.zeros((channels, height, width), dtype=np.float32))

    @staticmethod
    def full(channels: int, height: int, width: int, value: float) -> "LatentGrid":
        return LatentGrid(np.full((channels, height, width), value, dtype=np.float32))


@dataclass(frozen=True)
class BinaryMask:
    """An H x W grid with every cell exactly 0 or 1."""

    bits: np.ndarray = field(repr=False)

    def __post_init__(self):
        arr = np.asarray(self.bits)
        if arr.ndim != 2:
            raise ShapeError(f"mask must be 2-dimensional (H,W), got shape {arr.shape}")
        if arr.size == 0:
            raise ShapeError(f"mask must be non-empty, got shape {arr.shape}")
        as_u8 = arr.astype(np.uint8)
        if not np.array_equal(as_u8, arr) or not np.all((as_u8 == 0) | (as_u8 == 1)):
            raise ParameterError("mask cells must be exactly 0 or 1")
        object.__setattr__(self, "bits", _frozen(as_u8))

    @property
    def height(self) -> int:
        return self.bits.shape[0]

    @property
    def width(self) -> int:
        return self.bits.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.bits.shape

    @property
    def count(self) -> int:
        """Number of 1-cells."""
        return int(self.bits.sum())

    def is_empty(self) -> bool:
        return self.count == 0

    def inverted(self) -> "BinaryMask":
        return BinaryMask(1 - self.bits)

    @staticmethod
    def zeros(height: int, width: int) -> "BinaryMask":
        return BinaryMask(np.zeros((height, width), dtype=np.uint8))

    @staticmethod
    def ones(height: int, width: int) -> "BinaryMask":
        return BinaryMask(np.ones((height, width), dtype=np.uint8))


@dataclass(frozen=True)
class ScoreMap:
    """An H x W grid of scores in [0, 1]."""

    scores: np.ndarray = field(repr=False)

    def __post_init__(self):
        arr = np.asarray(self.scores, dtype=np.float32)
        if arr.ndim != 2:
            raise ShapeError(f"score map must be 2-dimensional (H,W), got shape {arr.shape}")
        if arr.size == 0:
            raise ShapeError(f"score map must be non-empty, got shape {arr.shape}")
        if not np.all(np.isfinite(arr)) or arr.min() < 0.0 or arr.max() > 1.0:
            raise ParameterError("scores must lie within [0, 1]")
        object.__setattr__(self, "scores", _frozen(arr))

    @property
    def height(self) -> int:
        return self.scores.shape[0]

    @property
    def width(self) -> int:
        return self.scores.shape[1]


def blend(mask: BinaryMask, a: LatentGrid, b: LatentGrid) -> LatentGrid:
    """Select ``a`` where mask=0 and ``b`` where mask=1, cell-exactly.

    The mask is broadcast over channels. No interpolation: output cells
    are bit-identical to one of the inputs.
    """
    if a.shape != b.shape:
        raise ShapeError(f"grid shapes differ: {a.shape} vs {b.shape}")
    if mask.shape != (a.height, a.width):
        raise ShapeError(f"mask shape {mask.shape} does not match grid spatial dims {(a.height, a.width)}")
    out = np.where(mask.bits[None, :, :] != 0, b.data, a.data)
    return LatentGrid(out)


def downsample_mask(mask: BinaryMask, target_h: int, target_w: int) -> BinaryMask:
    """Max-pool a mask down to ``target_h`` x ``target_w``.

    A target cell is 1 iff any source cell it covers is 1, so coverage is
    never dropped (conservative confinement).
    """
    if target_h <= 0 or target_w <= 0:
        raise ShapeError(f"target dims must be positive, got {(target_h, target_w)}")
    if target_h > mask.height or target_w > mask.width:
        raise ShapeError(
            f"target {(target_h, target_w)} larger than source {(mask.height, mask.width)}"
        )
    if (target_h, target_w) == mask.shape:
        return mask
    rows = (np.arange(mask.height) * target_h) // mask.height
    cols = (np.arange(mask.width) * target_w) // mask.width
    out = np.zeros((target_h, target_w), dtype=np.uint8)
    np.maximum.at(out, (rows[:, None], cols[None, :]), mask.bits)
    return BinaryMask(out)


def threshold_scores(scores: ScoreMap, tau: float) -> BinaryMask:
    """Binarize a score map: cell = 1 iff score >= tau (boundary inclusive)."""
    if not 0.0 <= tau <= 1.0:
        raise ParameterError(f"tau must lie in [0, 1], got {tau}")
    return BinaryMask((scores.scores >= np.float32(tau)).astype(np.uint8))
