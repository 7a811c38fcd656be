"""Noise schedules and the per-step sampler coefficients.

The sampler update (one step toward clean data) is

    z_prev = phi * z + psi * eps_theta(z, t, c) + p * noise

and its algebraic inverse climbs one step away from clean data.  ``phi_fwd``
and ``p_fwd`` are the forward-marginal coefficients sqrt(abar_t) and
sqrt(1 - abar_t) used when noising clean data directly to step t.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ParameterError


@dataclass(frozen=True)
class StepCoeffs:
    phi: float
    psi: float
    p: float
    phi_fwd: float
    p_fwd: float


@dataclass(frozen=True)
class NoiseSchedule:
    """Cumulative retention factors plus the sampling-step subsequence.

    ``alpha_bar`` has length ``total_train_steps + 1`` with alpha_bar[0] = 1
    (clean data) and is strictly decreasing.  ``sample_steps`` is the strictly
    increasing list of training-timestep indices the sampler visits; the
    sampler traverses it from the last (noisiest) entry down to the first,
    then steps onto clean data.
    """

    total_train_steps: int
    alpha_bar: np.ndarray = field(repr=False)
    sample_steps: tuple[int, ...]
    eta: float = 0.0

    def __post_init__(self):
        abar = np.asarray(self.alpha_bar, dtype=np.float64).copy()
        if abar.ndim != 1 or abar.shape[0] != self.total_train_steps + 1:
            raise ParameterError(
                f"alpha_bar must have length T+1={self.total_train_steps + 1}, got {abar.shape}"
            )
        if abar[0] != 1.0:
            raise ParameterError("alpha_bar[0] must be exactly 1")
        if not np.all(np.diff(abar) < 0):
            raise ParameterError("alpha_bar must be strictly decreasing")
        if abar[-1] <= 0.0:
            raise ParameterError("alpha_bar values must stay in (0, 1]")
        steps = tuple(int(s) for s in self.sample_steps)
        if len(steps) == 0:
            raise ParameterError("sample_steps must be non-empty")
        if any(b <= a for a, b in zip(steps, steps[1:])):
            raise ParameterError("sample_steps must be strictly increasing")
        if steps[0] < 1 or steps[-1] >= self.total_train_steps:
            raise ParameterError(
                f"sample_steps must lie in [1, T-1]=[1, {self.total_train_steps - 1}]"
            )
        if self.eta < 0.0:
            raise ParameterError(f"eta must be >= 0, got {self.eta}")
        abar.setflags(write=False)
        object.__setattr__(self, "alpha_bar", abar)
        object.__setattr__(self, "sample_steps", steps)

    @property
    def num_sample_steps(self) -> int:
        return len(self.sample_steps)

    def timestep_at(self, position: int) -> int:
        """Training timestep for a position in ``sample_steps``; -1 means clean data."""
        if position == -1:
            return 0
        self._check_position(position)
        return self.sample_steps[position]

    def alpha_bar_at(self, position: int) -> float:
        """abar at a sample-step position; position -1 is clean data (abar = 1)."""
        if position == -1:
            return 1.0
        self._check_position(position)
        return float(self.alpha_bar[self.sample_steps[position]])

    def _check_position(self, position: int) -> None:
        if not 0 <= position < len(self.sample_steps):
            raise ParameterError(
                f"step position {position} out of range [0, {len(self.sample_steps) - 1}]"
            )


def linear_alpha_bar(total_train_steps: int, beta_start: float, beta_end: float) -> np.ndarray:
    """alpha_bar[t] = prod_{s<=t} (1 - beta_s), beta linearly spaced, alpha_bar[0] = 1."""
    if total_train_steps < 1:
        raise ParameterError(f"total_train_steps must be >= 1, got {total_train_steps}")
    if not 0.0 < beta_start <= beta_end < 1.0:
        raise ParameterError(
            f"need 0 < beta_start <= beta_end < 1, got ({beta_start}, {beta_end})"
        )
    if total_train_steps == 1:
        betas = np.array([beta_start], dtype=np.float64)
    else:
        betas = np.linspace(beta_start, beta_end, total_train_steps, dtype=np.float64)
    out = np.empty(total_train_steps + 1, dtype=np.float64)
    out[0] = 1.0
    np.cumprod(1.0 - betas, out=out[1:])
    return out


def make_linear_schedule(
    total_train_steps: int,
    beta_start: float,
    beta_end: float,
    num_sample_steps: int,
    eta: float = 0.0,
) -> NoiseSchedule:
    """Linear-beta schedule with ``num_sample_steps`` evenly spaced sample steps."""
    abar = linear_alpha_bar(total_train_steps, beta_start, beta_end)
    if not 1 <= num_sample_steps <= total_train_steps:
        raise ParameterError(
            f"num_sample_steps must lie in [1, T]={[1, total_train_steps]}, got {num_sample_steps}"
        )
    stride = total_train_steps // num_sample_steps
    steps = tuple(1 + stride * i for i in range(num_sample_steps))
    if steps[-1] >= total_train_steps:
        raise ParameterError(
            f"T={total_train_steps} is too small for {num_sample_steps} evenly spaced sample steps"
        )
    return NoiseSchedule(total_train_steps, abar, steps, eta)


def coeffs_from_alpha_bar(a_t: float, a_prev: float, eta: float) -> StepCoeffs:
    """Closed-form sampler coefficients for a transition abar_t -> abar_prev."""
    one_minus_t = 1.0 - a_t
    sigma = 0.0
    if eta > 0.0 and a_prev > a_t:
        sigma = eta * math.sqrt((1.0 - a_prev) / one_minus_t) * math.sqrt(1.0 - a_t / a_prev)
    direction_sq = 1.0 - a_prev - sigma * sigma
    if direction_sq < -1e-12:
        raise ParameterError(f"eta={eta} makes the step variance exceed the marginal")
    psi = math.sqrt(max(direction_sq, 0.0)) - math.sqrt(a_prev * one_minus_t / a_t)
    return StepCoeffs(
        phi=math.sqrt(a_prev / a_t),
        psi=psi,
        p=sigma,
        phi_fwd=math.sqrt(a_t),
        p_fwd=math.sqrt(one_minus_t),
    )


def coeffs_at(sched: NoiseSchedule, step_index: int) -> StepCoeffs:
    """Sampler coefficients for the transition between sample-step position
    ``step_index`` and the position below it (clean data below position 0)."""
    sched._check_position(step_index)
    return coeffs_from_alpha_bar(
        sched.alpha_bar_at(step_index), sched.alpha_bar_at(step_index - 1), sched.eta
    )
