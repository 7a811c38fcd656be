"""Region-specific corruption operators.

The proposed corruption replaces masked latent cells with the noised image
latent at the corruption step's noise level,

    out = (1 - M) * z_t + M * (phi_fwd * z0 + p_fwd * noise),

leaving non-masked cells bit-identical to the inverted latent.  Four
baseline operators (Gaussian replacement, blur, 90-degree rotation,
8x downscale) corrupt the same masked region by other means.  Every
operator is pure given its seed and confines all changes to the mask.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.ndimage import gaussian_filter

from .diffusion import InversionConfig, Trajectory, invert, resample
from .errors import ParameterError, ShapeError
from .grids import BinaryMask, LatentGrid
from .schedule import NoiseSchedule
from .seeding import normal_noise

METHOD_PROPOSED = "proposed"
BASELINE_METHODS = ("gaussian_replace", "blur", "rotate90", "downscale8x")
ALL_METHODS = (METHOD_PROPOSED,) + BASELINE_METHODS

BLUR_SIGMA = 1.5
BLUR_RADIUS = 3
DOWNSCALE_FACTOR = 8

# inversion depth implied by the default corruption step: 10 sampler steps
# for the proposed method, 20 for the baselines
DEFAULT_DEPTH_PROPOSED = 10
DEFAULT_DEPTH_BASELINE = 20


def _check_mask_shape(mask: BinaryMask, grid: LatentGrid) -> None:
    if mask.shape != (grid.height, grid.width):
        raise ShapeError(
            f"mask shape {mask.shape} does not match latent spatial dims "
            f"{(grid.height, grid.width)}"
        )


def corrupt_region(
    z_t: LatentGrid,
    z0: LatentGrid,
    mask: BinaryMask,
    sched: NoiseSchedule,
    step: int,
    seed: int,
) -> LatentGrid:
    """Proposed corruption: blend the noised image latent into masked cells.

    ``step`` is the sample-step position of ``z_t`` (the inversion
    endpoint); the Gaussian noise magnitude matches that step's forward
    marginal.
    """
    if z_t.shape != z0.shape:
        raise ShapeError(f"latent shapes differ: {z_t.shape} vs {z0.shape}")
    _check_mask_shape(mask, z_t)
    abar = sched.alpha_bar_at(step)
    phi_fwd = np.float32(np.sqrt(abar))
    p_fwd = np.float32(np.sqrt(1.0 - abar))
    eps = normal_noise(z_t.shape, "corrupt-region", seed, step)
    noised = phi_fwd * z0.data + p_fwd * eps
    out = np.where(mask.bits[None, :, :] != 0, noised, z_t.data)
    return LatentGrid(out)


def _bounding_box(mask: BinaryMask) -> tuple[int, int, int, int]:
    rows = np.flatnonzero(mask.bits.any(axis=1))
    cols = np.flatnonzero(mask.bits.any(axis=0))
    if rows.size == 0:
        raise ParameterError("mask bounding box is empty")
    return int(rows[0]), int(rows[-1]) + 1, int(cols[0]), int(cols[-1]) + 1


def _blur(z: np.ndarray) -> np.ndarray:
    # full-grid separable Gaussian, one spatial filter per channel
    return gaussian_filter(
        z, sigma=(0.0, BLUR_SIGMA, BLUR_SIGMA), radius=(0, BLUR_RADIUS, BLUR_RADIUS)
    )


def _rotate_largest_centered_square(z: np.ndarray, mask: BinaryMask) -> np.ndarray:
    r0, r1, c0, c1 = _bounding_box(mask)
    side = min(r1 - r0, c1 - c0)
    r0 += (r1 - r0 - side) // 2
    c0 += (c1 - c0 - side) // 2
    out = z.copy()
    square = z[:, r0 : r0 + side, c0 : c0 + side]
    rotated = np.rot90(square, k=1, axes=(1, 2))
    inside = mask.bits[r0 : r0 + side, c0 : c0 + side][None, :, :] != 0
    out[:, r0 : r0 + side, c0 : c0 + side] = np.where(inside, rotated, square)
    return out


def _downscale_box(z: np.ndarray, mask: BinaryMask) -> np.ndarray:
    r0, r1, c0, c1 = _bounding_box(mask)
    box = z[:, r0:r1, c0:c1]
    pooled = np.empty_like(box)
    f = DOWNSCALE_FACTOR
    for i in range(0, box.shape[1], f):
        for j in range(0, box.shape[2], f):
            block = box[:, i : i + f, j : j + f]
            pooled[:, i : i + f, j : j + f] = block.mean(axis=(1, 2), keepdims=True)
    out = z.copy()
    inside = mask.bits[r0:r1, c0:c1][None, :, :] != 0
    out[:, r0:r1, c0:c1] = np.where(inside, pooled, box)
    return out


def corrupt_baseline(z_t: LatentGrid, mask: BinaryMask, method: str, seed: int) -> LatentGrid:
    """Apply one of the baseline corruption operators within the mask."""
    _check_mask_shape(mask, z_t)
    if method == "gaussian_replace":
        noise = normal_noise(z_t.shape, "gaussian-replace", seed)
        out = np.where(mask.bits[None, :, :] != 0, noise, z_t.data)
        return LatentGrid(out)
    if method == "blur":
        blurred = _blur(z_t.data)
        out = np.where(mask.bits[None, :, :] != 0, blurred, z_t.data)
        return LatentGrid(out)
    if method == "rotate90":
        return LatentGrid(_rotate_largest_centered_square(z_t.data, mask))
    if method == "downscale8x":
        return LatentGrid(_downscale_box(z_t.data, mask))
    raise ParameterError(f"unknown baseline method {method!r} (expected one of {BASELINE_METHODS})")


def corrupt_image_latent_direct(z0: LatentGrid, mask: BinaryMask, seed: int) -> LatentGrid:
    """Gaussian replacement applied to the clean image latent itself,
    with no inversion and no resampling (the ablation's negative control)."""
    return corrupt_baseline(z0, mask, "gaussian_replace", seed)


@dataclass(frozen=True)
class CorruptionSpec:
    """Which operator to run and where in the sampling schedule.

    ``corrupt_step`` counts positions in sampling order, from the noisiest
    step: corrupting at step k of an S-step schedule means inverting
    S - k steps and resampling S - k steps back to clean data.  Left unset
    it defaults so the proposed method inverts 10 steps and the baselines
    invert 20.
    """

    method: str = METHOD_PROPOSED
    corrupt_step: int | None = None
    resample_steps: int | None = None
    seed: int = 0

    def __post_init__(self):
        if self.method not in ALL_METHODS:
            raise ParameterError(
                f"unknown corruption method {self.method!r} (expected one of {ALL_METHODS})"
            )

    def resolve(self, num_sample_steps: int) -> "ResolvedCorruption":
        depth = DEFAULT_DEPTH_PROPOSED if self.method == METHOD_PROPOSED else DEFAULT_DEPTH_BASELINE
        depth = min(depth, num_sample_steps)
        corrupt_step = self.corrupt_step
        if corrupt_step is None:
            corrupt_step = num_sample_steps - depth
        if not 0 <= corrupt_step <= num_sample_steps - 1:
            raise ParameterError(
                f"corrupt_step={corrupt_step} outside [0, {num_sample_steps - 1}]"
            )
        invert_steps = num_sample_steps - corrupt_step
        if self.resample_steps is not None and self.resample_steps != invert_steps:
            raise ParameterError(
                f"resample_steps={self.resample_steps} inconsistent with "
                f"corrupt_step={corrupt_step}: corrupting at step {corrupt_step} of "
                f"{num_sample_steps} requires resampling {invert_steps} steps to reach clean data"
            )
        return ResolvedCorruption(
            method=self.method,
            corrupt_step=corrupt_step,
            invert_steps=invert_steps,
            resample_steps=invert_steps,
            seed=self.seed,
        )


@dataclass(frozen=True)
class ResolvedCorruption:
    method: str
    corrupt_step: int
    invert_steps: int
    resample_steps: int
    seed: int


@dataclass(frozen=True)
class CorruptionRecord:
    """Provenance row embedded in the dataset manifest."""

    input_id: str
    mask_id: str
    method: str
    corrupt_step: int
    invert_steps: int
    resample_steps: int
    seed: int
    output_id: str

    def to_dict(self) -> dict:
        return {
            "input_id": self.input_id,
            "mask_id": self.mask_id,
            "method": self.method,
            "corrupt_step": self.corrupt_step,
            "invert_steps": self.invert_steps,
            "resample_steps": self.resample_steps,
            "seed": self.seed,
            "output_id": self.output_id,
        }

    @staticmethod
    def from_dict(d: dict) -> "CorruptionRecord":
        return CorruptionRecord(
            input_id=d["input_id"],
            mask_id=d["mask_id"],
            method=d["method"],
            corrupt_step=int(d["corrupt_step"]),
            invert_steps=int(d["invert_steps"]),
            resample_steps=int(d["resample_steps"]),
            seed=int(d["seed"]),
            output_id=d["output_id"],
        )


@dataclass(frozen=True)
class CorruptionOutcome:
    """Latents produced by one full corruption run plus change statistics."""

    final: LatentGrid
    corrupted: LatentGrid  # pre-resample latent, confinement holds here
    inverted: LatentGrid
    trajectory: Trajectory
    masked_change: float
    unmasked_change: float
    resolved: ResolvedCorruption


def masked_mean_abs_change(before: LatentGrid, after: LatentGrid, mask: BinaryMask) -> tuple[float, float]:
    """Mean |after - before| over masked cells and over unmasked cells.

    Regions with no cells report 0.0.
    """
    if before.shape != after.shape:
        raise ShapeError(f"grid shapes differ: {before.shape} vs {after.shape}")
    _check_mask_shape(mask, before)
    delta = np.abs(after.data.astype(np.float64) - before.data.astype(np.float64))
    sel = mask.bits[None, :, :] != 0
    sel = np.broadcast_to(sel, delta.shape)
    masked = float(delta[sel].mean()) if sel.any() else 0.0
    unmasked = float(delta[~sel].mean()) if (~sel).any() else 0.0
    return masked, unmasked


def corrupt_latent(
    z0: LatentGrid,
    mask: BinaryMask,
    spec: CorruptionSpec,
    denoiser,
    sched: NoiseSchedule,
    renoise_iters: int = 4,
    renoise_tol: float = 1e-4,
) -> CorruptionOutcome:
    """Full corruption run on one latent: invert, corrupt in the mask, resample.

    An empty mask short-circuits the corruption operator (nothing to
    corrupt), so every method degenerates to a pure inversion round trip.
    """
    resolved = spec.resolve(sched.num_sample_steps)
    cfg = InversionConfig(
        invert_steps=resolved.invert_steps,
        renoise_iters=renoise_iters,
        renoise_tol=renoise_tol,
        seed=resolved.seed,
    )
    trajectory = invert(z0, denoiser, sched, cfg)
    z_t = trajectory.final
    position = resolved.invert_steps - 1

    if mask.is_empty():
        corrupted = z_t
    elif resolved.method == METHOD_PROPOSED:
        corrupted = corrupt_region(z_t, z0, mask, sched, position, resolved.seed)
    else:
        corrupted = corrupt_baseline(z_t, mask, resolved.method, resolved.seed)

    masked_change, unmasked_change = masked_mean_abs_change(z_t, corrupted, mask)
    final = resample(corrupted, resolved.resample_steps, denoiser, sched, resolved.seed)
    return CorruptionOutcome(
        final=final,
        corrupted=corrupted,
        inverted=z_t,
        trajectory=trajectory,
        masked_change=masked_change,
        unmasked_change=unmasked_change,
        resolved=resolved,
    )
