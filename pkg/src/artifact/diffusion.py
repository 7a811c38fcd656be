"""Latent inversion and resampling.

Inversion climbs the sample-step ladder away from clean data by solving the
implicit per-step equation

    z_t = (z_prev - psi * eps_theta(z_t, t, c) - p * noise) / phi

with fixed-point iteration (the denoiser is re-evaluated at the current z_t
estimate).  Resampling applies the explicit update

    z_prev = phi * z_t + psi * eps_theta(z_t, t, c) + p * noise

back down to clean data.  With eta = 0 both directions are deterministic
and exact algebraic inverses of each other up to fixed-point residuals;
with eta > 0 the same seeded noise is replayed on both paths so the round
trip remains an inverse.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .denoise import predict_eps
from .errors import NumericDivergenceError, ParameterError
from .grids import LatentGrid
from .schedule import NoiseSchedule, coeffs_at
from .seeding import normal_noise

_NOISE_TAG = "step-noise"


@dataclass(frozen=True)
class InversionConfig:
    invert_steps: int = 10
    renoise_iters: int = 4
    renoise_tol: float = 1e-4
    seed: int = 0

    def __post_init__(self):
        if self.invert_steps < 0:
            raise ParameterError(f"invert_steps must be >= 0, got {self.invert_steps}")
        if self.renoise_iters < 1:
            raise ParameterError(f"renoise_iters must be >= 1, got {self.renoise_iters}")
        if self.renoise_tol < 0.0:
            raise ParameterError(f"renoise_tol must be >= 0, got {self.renoise_tol}")


@dataclass(frozen=True)
class TrajectoryPoint:
    position: int  # sample-step position; -1 is clean data
    timestep: int
    grid: LatentGrid


@dataclass(frozen=True)
class Trajectory:
    """Latents visited during inversion, clean data first.

    ``residuals[i]`` holds the relative fixed-point residual after each
    refinement iteration of inversion step i (useful for convergence
    diagnostics).
    """

    points: tuple[TrajectoryPoint, ...]
    residuals: tuple[tuple[float, ...], ...] = field(default=())

    def __post_init__(self):
        if not self.points:
            raise ParameterError("trajectory must contain at least the clean latent")
        positions = [p.position for p in self.points]
        if positions[0] != -1:
            raise ParameterError("trajectory must start at clean data (position -1)")
        if any(b != a + 1 for a, b in zip(positions, positions[1:])):
            raise ParameterError("consecutive trajectory entries must differ by one sample step")

    @property
    def final(self) -> LatentGrid:
        return self.points[-1].grid

    @property
    def final_position(self) -> int:
        return self.points[-1].position

    def __len__(self) -> int:
        return len(self.points)


def _step_noise(seed: int, position: int, shape: tuple[int, int, int]) -> np.ndarray:
    return normal_noise(shape, _NOISE_TAG, seed, position)


def _check_finite(arr: np.ndarray, direction: str, position: int, timestep: int) -> None:
    if not np.all(np.isfinite(arr)):
        raise NumericDivergenceError(
            f"{direction} produced a non-finite latent at sample-step position "
            f"{position} (timestep {timestep})",
            step=position,
            timestep=timestep,
        )


def invert(
    z0: LatentGrid,
    denoiser,
    sched: NoiseSchedule,
    cfg: InversionConfig = InversionConfig(),
) -> Trajectory:
    """Invert a clean latent for ``cfg.invert_steps`` sample steps."""
    if cfg.invert_steps > sched.num_sample_steps:
        raise ParameterError(
            f"invert_steps={cfg.invert_steps} exceeds the schedule's "
            f"{sched.num_sample_steps} sample steps"
        )
    if sched.eta != 0.0:
        warnings.warn(
            "inverting with eta > 0: the noise term is replayed at resampling, "
            "deterministic inversion is recommended",
            stacklevel=2,
        )

    points = [TrajectoryPoint(-1, 0, z0)]
    step_residuals: list[tuple[float, ...]] = []
    z_prev = z0.data
    tiny = np.finfo(np.float32).tiny

    for position in range(cfg.invert_steps):
        c = coeffs_at(sched, position)
        timestep = sched.timestep_at(position)
        noise_term = 0.0
        if c.p != 0.0:
            noise_term = c.p * _step_noise(cfg.seed, position, z0.shape)
        base = z_prev - noise_term

        z_est = base / np.float32(c.phi)
        residuals: list[float] = []
        for _ in range(cfg.renoise_iters):
            eps = predict_eps(denoiser, LatentGrid(z_est), position, sched).data
            z_next = (base - np.float32(c.psi) * eps) / np.float32(c.phi)
            denom = max(float(np.linalg.norm(z_est)), float(tiny))
            rel = float(np.linalg.norm(z_next - z_est)) / denom
            residuals.append(rel)
            z_est = z_next
            if rel < cfg.renoise_tol:
                break
        _check_finite(z_est, "inversion", position, timestep)
        points.append(TrajectoryPoint(position, timestep, LatentGrid(z_est)))
        step_residuals.append(tuple(residuals))
        z_prev = z_est

    return Trajectory(tuple(points), tuple(step_residuals))


def resample(
    zt: LatentGrid,
    start_step: int,
    denoiser,
    sched: NoiseSchedule,
    seed: int = 0,
) -> LatentGrid:
    """Run ``start_step`` sampler updates from sample-step position
    ``start_step - 1`` down to clean data; start_step = 0 returns the input."""
    if not 0 <= start_step <= sched.num_sample_steps:
        raise ParameterError(
            f"start_step={start_step} outside [0, {sched.num_sample_steps}]"
        )
    z = zt.data
    for position in range(start_step - 1, -1, -1):
        c = coeffs_at(sched, position)
        eps = predict_eps(denoiser, LatentGrid(z), position, sched).data
        z = np.float32(c.phi) * z + np.float32(c.psi) * eps
        if c.p != 0.0:
            z = z + c.p * _step_noise(seed, position, zt.shape)
        _check_finite(z, "resampling", position, sched.timestep_at(position))
    return LatentGrid(z)
